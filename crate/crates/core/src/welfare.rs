//! Ex-ante social loss and the price of anarchy.
//!
//! With `eta = 1` payments are pure transfers, so the social loss is the
//! competition-adjusted estimation loss plus total effort:
//! `L(e) = sum_i G_i exp(-2 alpha_i e_i) + sum_i e_i` with `G_i = sum_j gamma_i^j`.

use crate::equilibrium::EquilibriumSolution;
use crate::error::{MarketError, Result};
use crate::estimators::SeparableWeights;
use crate::market::MarketInstance;

/// Tolerance for the effort ordering `e* >= e_hat` checked by [`price_of_anarchy`].
pub const ORDERING_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct WelfareReport {
    pub efforts_eq: Vec<f64>,
    pub efforts_opt: Vec<f64>,
    pub loss_eq: f64,
    pub loss_opt: f64,
    /// `loss_eq / loss_opt`.
    pub poa: f64,
}

impl WelfareReport {
    /// Welfare lost to competition, `loss_eq - loss_opt`.
    pub fn loss_gap(&self) -> f64 {
        self.loss_eq - self.loss_opt
    }
}

fn require_unit_eta(m: &MarketInstance) -> Result<()> {
    match m.buyers.iter().position(|b| b.eta != 1.0) {
        Some(k) => Err(MarketError::EtaNotOne {
            buyer: k,
            eta: m.buyers[k].eta,
        }),
        None => Ok(()),
    }
}

pub fn social_loss(efforts: &[f64], w: &SeparableWeights, m: &MarketInstance) -> Result<f64> {
    require_unit_eta(m)?;
    assert_eq!(efforts.len(), m.n_sources());
    Ok(efforts
        .iter()
        .zip(&m.sources)
        .enumerate()
        .map(|(i, (&e, s))| w.gamma_total(i) * (-2.0 * s.alpha * e).exp() + e)
        .sum())
}

/// Unique minimiser of [`social_loss`]: `e_q = ln(2 alpha_q G_q) / (2 alpha_q)`.
pub fn social_optimum_efforts(w: &SeparableWeights, m: &MarketInstance) -> Result<Vec<f64>> {
    require_unit_eta(m)?;
    m.sources
        .iter()
        .enumerate()
        .map(|(q, s)| {
            let g = w.gamma_total(q);
            if g > 0.0 {
                Ok((2.0 * s.alpha * g).ln() / (2.0 * s.alpha))
            } else {
                Err(MarketError::DegenerateSource { source_index: q })
            }
        })
        .collect()
}

pub fn price_of_anarchy(
    sol: &EquilibriumSolution,
    w: &SeparableWeights,
    m: &MarketInstance,
) -> Result<WelfareReport> {
    let efforts_opt = social_optimum_efforts(w, m)?;
    let loss_eq = social_loss(&sol.efforts, w, m)?;
    let loss_opt = social_loss(&efforts_opt, w, m)?;
    if !(loss_opt > 0.0) {
        return Err(MarketError::UndefinedPoa(loss_opt));
    }
    // Slopes dominate gamma at any equilibrium, so equilibrium effort can
    // never fall below the social optimum.
    if let Some(q) = (0..efforts_opt.len())
        .find(|&q| sol.efforts[q] < efforts_opt[q] - ORDERING_TOL * (1.0 + efforts_opt[q].abs()))
    {
        return Err(MarketError::Numeric(format!(
            "equilibrium effort {} below social optimum {} at source {q}",
            sol.efforts[q], efforts_opt[q]
        )));
    }
    Ok(WelfareReport {
        efforts_eq: sol.efforts.clone(),
        efforts_opt,
        loss_eq,
        loss_opt,
        poa: loss_eq / loss_opt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{solve_market, MarketOutcome};
    use crate::estimators::compute_weights;
    use crate::market::two_firm_example;
    use proptest::prelude::*;

    fn solved(x1: f64) -> (MarketInstance, SeparableWeights, EquilibriumSolution) {
        let m = two_firm_example(x1);
        match solve_market(&m).unwrap() {
            MarketOutcome::Equilibrium { weights, solution, .. } => (m, weights, solution),
            other => panic!("no equilibrium: {other:?}"),
        }
    }

    #[test]
    fn zero_effort_loss_is_gamma_total() {
        let m = two_firm_example(0.0);
        let w = compute_weights(&m).unwrap();
        let loss = social_loss(&[0.0, 0.0], &w, &m).unwrap();
        assert!((loss - (w.gamma_total(0) + w.gamma_total(1))).abs() < 1e-15);
    }

    #[test]
    fn decoupled_loss_value() {
        let (m, w, sol) = solved(-1.0);
        let loss = social_loss(&sol.efforts, &w, &m).unwrap();
        let e = (4.0f64 / 3.0).ln() / 2.0;
        assert!((loss - 2.0 * (0.5 + e)).abs() < 1e-15);
        assert!((loss - 1.287682).abs() < 1e-6);
    }

    #[test]
    fn zero_optimum_when_gamma_matches_alpha() {
        let mut m = two_firm_example(-1.0);
        m.buyers.truncate(1);
        m.buyers[0].delta = vec![0.0];
        m.sources[0].alpha = 1.5; // gamma = 1/3 = 1 / (2 * 1.5)
        let w = compute_weights(&m).unwrap();
        let e = social_optimum_efforts(&w, &m).unwrap();
        assert!(e[0].abs() < 1e-15);
    }

    #[test]
    fn optimum_at_zero() {
        let m = two_firm_example(0.0);
        let w = compute_weights(&m).unwrap();
        let e = social_optimum_efforts(&w, &m).unwrap();
        // G = (8/3, 2/3).
        assert!((e[0] - (16.0f64 / 3.0).ln() / 2.0).abs() < 1e-15);
        assert!((e[1] - (4.0f64 / 3.0).ln() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn decoupled_market_is_efficient() {
        let (m, w, sol) = solved(-1.0);
        let r = price_of_anarchy(&sol, &w, &m).unwrap();
        assert_eq!(r.efforts_eq, r.efforts_opt);
        assert!((r.poa - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coupled_market_loses_welfare() {
        let (m, w, sol) = solved(0.0);
        let r = price_of_anarchy(&sol, &w, &m).unwrap();
        // e* = (ln(80/9)/2, ln(32/9)/2), e_hat = (ln(16/3)/2, ln(4/3)/2).
        let loss = |e: [f64; 2], g: [f64; 2]| {
            g[0] * (-2.0 * e[0]).exp() + e[0] + g[1] * (-2.0 * e[1]).exp() + e[1]
        };
        let g = [8.0 / 3.0, 2.0 / 3.0];
        let e_star = [(80.0f64 / 9.0).ln() / 2.0, (32.0f64 / 9.0).ln() / 2.0];
        let e_hat = [(16.0f64 / 3.0).ln() / 2.0, (4.0f64 / 3.0).ln() / 2.0];
        assert!((r.loss_eq - loss(e_star, g)).abs() < 1e-12);
        assert!((r.loss_opt - loss(e_hat, g)).abs() < 1e-12);
        assert!((r.poa - 1.1177928072468128).abs() < 1e-12, "poa {}", r.poa);
        assert!(r.efforts_eq[0] > r.efforts_opt[0] && r.efforts_eq[1] > r.efforts_opt[1]);
    }

    #[test]
    fn poa_grows_toward_collapse() {
        let poa = |x1: f64| {
            let (m, w, sol) = solved(x1);
            price_of_anarchy(&sol, &w, &m).unwrap().poa
        };
        assert!(poa(0.999) > poa(0.9));
        assert!(poa(0.9) > poa(0.0));
    }

    #[test]
    fn eta_must_be_one() {
        let mut m = two_firm_example(0.0);
        m.buyers[1].eta = 2.0;
        let w = compute_weights(&m).unwrap();
        assert!(matches!(social_loss(&[0.0, 0.0], &w, &m), Err(MarketError::EtaNotOne { buyer: 1, .. })));
        assert!(matches!(social_optimum_efforts(&w, &m), Err(MarketError::EtaNotOne { .. })));
    }

    #[test]
    fn zero_gamma_is_degenerate() {
        let mut m = two_firm_example(0.0);
        m.buyers[0].delta[1] = 1.0;
        m.buyers[1].delta[0] = 1.0;
        let w = compute_weights(&m).unwrap();
        assert!(matches!(social_optimum_efforts(&w, &m), Err(MarketError::DegenerateSource { source_index: 0 })));
    }

    proptest! {
        #[test]
        fn optimum_is_strict_minimiser(
            g in proptest::collection::vec(0.05f64..5.0, 3),
            alpha in proptest::collection::vec(0.2f64..3.0, 3),
            coord in 0usize..3,
            sign in prop::bool::ANY,
        ) {
            let mut m = two_firm_example(0.0);
            m.buyers.truncate(1);
            m.buyers[0].delta = vec![0.0];
            m.sources = alpha.iter().enumerate().map(|(i, &a)| crate::market::DataSource { x: -1.0 + i as f64, alpha: a }).collect();
            let w = SeparableWeights {
                beta: vec![g.clone()],
                xi: vec![vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]],
                gamma: vec![g.clone()],
            };
            let e = social_optimum_efforts(&w, &m).unwrap();
            let base = social_loss(&e, &w, &m).unwrap();
            let mut p = e.clone();
            p[coord] += if sign { 1e-3 } else { -1e-3 };
            prop_assert!(social_loss(&p, &w, &m).unwrap() > base);

            // Stationarity, analytically and by central differences.
            for q in 0..3 {
                let a = alpha[q];
                let grad = -2.0 * a * g[q] * (-2.0 * a * e[q]).exp() + 1.0;
                prop_assert!(grad.abs() < 1e-9);
                let h = 1e-5;
                let mut up = e.clone();
                let mut dn = e.clone();
                up[q] += h;
                dn[q] -= h;
                let fd = (social_loss(&up, &w, &m).unwrap() - social_loss(&dn, &w, &m).unwrap()) / (2.0 * h);
                prop_assert!((fd - grad).abs() < 1e-6);
            }
        }
    }
}
