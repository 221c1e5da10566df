//! Simulation of raw reports, leave-one-out fits and contract payments.
//!
//! Round `r` draws its noise from a ChaCha8 stream selected by `r`, so the
//! results do not depend on how rounds are spread across threads. Rounds are
//! accumulated in fixed-size chunks that are combined in order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;

use crate::equilibrium::{expected_penalties, EquilibriumSolution};
use crate::error::{MarketError, Result};
use crate::estimators::{basis, fit_operator, SeparableWeights};
use crate::market::{MarketInstance, ValueDistribution};

const CHUNK: usize = 4096;
const MAX_TRUE_DEGREE: usize = 6;

/// Ground-truth polynomial `f(x) = sum_p coefficients[p] x^p`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueFunction {
    coefficients: Vec<f64>,
}

impl TrueFunction {
    pub fn new(coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() > MAX_TRUE_DEGREE + 1 {
            return Err(MarketError::Domain(format!(
                "true function degree {} exceeds {MAX_TRUE_DEGREE}",
                coefficients.len() - 1
            )));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(MarketError::Domain("true function coefficients must be finite".into()));
        }
        Ok(Self { coefficients })
    }

    /// `f(x) = x`.
    pub fn identity() -> Self {
        Self {
            coefficients: vec![0.0, 1.0],
        }
    }

    pub fn zero() -> Self {
        Self {
            coefficients: Vec::new(),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaymentCheck {
    pub buyer: usize,
    pub source: usize,
    pub empirical_mean: f64,
    pub analytic_mean: f64,
    pub std_error: f64,
    pub z_score: f64,
}

/// Total payment received by a source minus its effort.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceCheck {
    pub source: usize,
    pub empirical_mean: f64,
    pub analytic_mean: f64,
    pub std_error: f64,
    pub z_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub n_samples: usize,
    pub seed: u64,
    pub pairs: Vec<PaymentCheck>,
    pub sources: Vec<SourceCheck>,
}

impl MonteCarloReport {
    pub fn max_abs_z(&self) -> f64 {
        self.pairs
            .iter()
            .map(|p| p.z_score.abs())
            .chain(self.sources.iter().map(|s| s.z_score.abs()))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossCheck {
    pub buyer: usize,
    pub empirical_mean: f64,
    pub analytic_mean: f64,
    pub std_error: f64,
    pub z_score: f64,
}

#[derive(Clone, Default)]
struct Moments {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl Moments {
    fn new(n: usize) -> Self {
        Self {
            sum: vec![0.0; n],
            sum_sq: vec![0.0; n],
        }
    }

    fn push(&mut self, idx: usize, v: f64) {
        self.sum[idx] += v;
        self.sum_sq[idx] += v * v;
    }

    fn merge(mut self, other: &Moments) -> Self {
        for i in 0..self.sum.len() {
            self.sum[i] += other.sum[i];
            self.sum_sq[i] += other.sum_sq[i];
        }
        self
    }

    /// `(mean, standard error of the mean)`.
    fn stats(&self, idx: usize, n: usize) -> (f64, f64) {
        let nf = n as f64;
        let mean = self.sum[idx] / nf;
        let var = ((self.sum_sq[idx] - nf * mean * mean) / (nf - 1.0).max(1.0)).max(0.0);
        (mean, (var / nf).sqrt())
    }
}

fn z_score(empirical: f64, analytic: f64, se: f64) -> f64 {
    let diff = empirical - analytic;
    if se > 0.0 {
        diff / se
    } else if diff.abs() <= 1e-12 * (1.0 + analytic.abs()) {
        0.0
    } else {
        f64::INFINITY.copysign(diff)
    }
}

fn round_rng(seed: u64, round: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(round as u64);
    rng
}

/// Runs `per_round` over `n` rounds and sums its outputs chunk by chunk.
fn simulate<F>(n: usize, width: usize, per_round: F) -> Moments
where
    F: Fn(usize, &mut Moments) + Sync,
{
    let chunks: Vec<Moments> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = Moments::new(width);
            for r in c * CHUNK..((c + 1) * CHUNK).min(n) {
                per_round(r, &mut acc);
            }
            acc
        })
        .collect();
    chunks
        .iter()
        .fold(Moments::new(width), |acc, c| acc.merge(c))
}

/// Leave-one-out prediction weights: `f_hat_{-i}(x_i) = sum_l coef[l] y_l`
/// for buyer `k`, with `coef[i] = 0`.
fn loo_coefficients(m: &MarketInstance, k: usize, i: usize) -> Result<Vec<f64>> {
    let n = m.n_sources();
    let degree = m.buyers[k].estimator.degree();
    let rest: Vec<usize> = (0..n).filter(|&l| l != i).collect();
    let locs: Vec<f64> = rest.iter().map(|&l| m.sources[l].x).collect();
    let w = fit_operator(&locs, degree).map_err(|e| match e {
        MarketError::SingularDesign { .. } => MarketError::SingularLeaveOneOut { buyer: k, source_index: i },
        other => other,
    })?;
    let phi = basis(m.sources[i].x, degree);
    let mut coef = vec![0.0; n];
    for (col, &l) in rest.iter().enumerate() {
        coef[l] = (0..=degree).map(|a| phi[a] * w[(a, col)]).sum();
    }
    Ok(coef)
}

/// Simulates `n_samples` rounds at the equilibrium efforts and compares the
/// mean of every contract payment `c - d (y_i - f_hat_{-i}(x_i))^2` with its
/// closed-form expectation. Every buyer sees the same report vector.
pub fn monte_carlo_payments(
    sol: &EquilibriumSolution,
    w: &SeparableWeights,
    m: &MarketInstance,
    f: &TrueFunction,
    n_samples: usize,
    seed: u64,
) -> Result<MonteCarloReport> {
    let (nb, n) = (m.n_buyers(), m.n_sources());
    let coef: Vec<Vec<Vec<f64>>> = (0..nb)
        .map(|k| (0..n).map(|i| loo_coefficients(m, k, i)).collect())
        .collect::<Result<_>>()?;
    let truth: Vec<f64> = m.sources.iter().map(|s| f.eval(s.x)).collect();
    let sd: Vec<f64> = sol.variances.iter().map(|v| v.sqrt()).collect();
    let width = nb * n + n;

    let moments = simulate(n_samples, width, |r, acc| {
        let mut rng = round_rng(seed, r);
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let z: f64 = StandardNormal.sample(&mut rng);
                truth[i] + sd[i] * z
            })
            .collect();
        let mut received = vec![0.0; n];
        for k in 0..nb {
            for i in 0..n {
                let pred: f64 = coef[k][i].iter().zip(&y).map(|(a, b)| a * b).sum();
                let resid = y[i] - pred;
                let pay = sol.c_canonical[k][i] - sol.d[k][i] * resid * resid;
                acc.push(k * n + i, pay);
                received[i] += pay;
            }
        }
        for i in 0..n {
            acc.push(nb * n + i, received[i] - sol.efforts[i]);
        }
    });

    let penalty = expected_penalties(w, &sol.variances);
    let mut pairs = Vec::with_capacity(nb * n);
    for i in 0..n {
        for k in 0..nb {
            let analytic = sol.c_canonical[k][i] - sol.d[k][i] * penalty[k][i];
            let (mean, se) = moments.stats(k * n + i, n_samples);
            pairs.push(PaymentCheck {
                buyer: k,
                source: i,
                empirical_mean: mean,
                analytic_mean: analytic,
                std_error: se,
                z_score: z_score(mean, analytic, se),
            });
        }
    }
    let sources = (0..n)
        .map(|i| {
            let analytic = (0..nb)
                .map(|k| sol.c_canonical[k][i] - sol.d[k][i] * penalty[k][i])
                .sum::<f64>()
                - sol.efforts[i];
            let (mean, se) = moments.stats(nb * n + i, n_samples);
            SourceCheck {
                source: i,
                empirical_mean: mean,
                analytic_mean: analytic,
                std_error: se,
                z_score: z_score(mean, analytic, se),
            }
        })
        .collect();
    Ok(MonteCarloReport {
        n_samples,
        seed,
        pairs,
        sources,
    })
}

fn sample_value(dist: &ValueDistribution, rng: &mut ChaCha8Rng) -> f64 {
    match dist {
        ValueDistribution::Uniform { lo, hi } => Uniform::new_inclusive(*lo, *hi).sample(rng),
        ValueDistribution::PointMass { x0 } => *x0,
        ValueDistribution::Discrete { points, weights } => {
            let u: f64 = Uniform::new(0.0, 1.0).sample(rng);
            let mut acc = 0.0;
            for (p, w) in points.iter().zip(weights) {
                acc += w;
                if u < acc {
                    return *p;
                }
            }
            *points.last().expect("validated nonempty")
        }
    }
}

/// Simulates each buyer's full-data fit at fixed source variances and
/// compares its mean squared error under the buyer's value distribution
/// with `sum_i beta[k][i] * variances[i]`.
pub fn monte_carlo_estimator_loss(
    w: &SeparableWeights,
    m: &MarketInstance,
    f: &TrueFunction,
    variances: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<LossCheck>> {
    let (nb, n) = (m.n_buyers(), m.n_sources());
    let locs = m.locations();
    let ops = m
        .buyers
        .iter()
        .map(|b| fit_operator(&locs, b.estimator.degree()))
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<f64> = locs.iter().map(|&x| f.eval(x)).collect();
    let sd: Vec<f64> = variances.iter().map(|v| v.sqrt()).collect();

    let moments = simulate(n_samples, nb, |r, acc| {
        let mut rng = round_rng(seed, r);
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let z: f64 = StandardNormal.sample(&mut rng);
                truth[i] + sd[i] * z
            })
            .collect();
        for (k, b) in m.buyers.iter().enumerate() {
            let coef = ops[k].matvec(&y);
            let at = sample_value(&b.value_dist, &mut rng);
            let pred: f64 = basis(at, coef.len() - 1).iter().zip(&coef).map(|(a, b)| a * b).sum();
            let err = pred - f.eval(at);
            acc.push(k, err * err);
        }
    });

    Ok((0..nb)
        .map(|k| {
            let analytic: f64 = w.beta[k].iter().zip(variances).map(|(b, v)| b * v).sum();
            let (mean, se) = moments.stats(k, n_samples);
            LossCheck {
                buyer: k,
                empirical_mean: mean,
                analytic_mean: analytic,
                std_error: se,
                z_score: z_score(mean, analytic, se),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{solve_market, MarketOutcome};
    use crate::estimators::compute_weights;
    use crate::market::two_firm_example;

    fn solved(m: &MarketInstance) -> (SeparableWeights, EquilibriumSolution) {
        match solve_market(m).unwrap() {
            MarketOutcome::Equilibrium { weights, solution, .. } => (weights, solution),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn horner() {
        let f = TrueFunction::new(vec![1.0, -2.0, 0.5]).unwrap();
        assert_eq!(f.eval(2.0), 1.0 - 4.0 + 2.0);
        assert!(TrueFunction::new(vec![0.0; 8]).is_err());
    }

    #[test]
    fn zero_slopes_pay_intercepts_exactly() {
        let m = two_firm_example(0.0);
        let (w, mut sol) = solved(&m);
        for row in sol.d.iter_mut() {
            row.iter_mut().for_each(|d| *d = 0.0);
        }
        let r = monte_carlo_payments(&sol, &w, &m, &TrueFunction::identity(), 1000, 7).unwrap();
        for p in &r.pairs {
            let tol = 1e-12 * (1.0 + p.analytic_mean.abs());
            assert!((p.empirical_mean - p.analytic_mean).abs() <= tol, "{p:?}");
            assert!(p.std_error < 1e-7 && p.z_score.abs() < 1e-3, "{p:?}");
        }
    }

    #[test]
    fn reproducible_across_thread_counts() {
        let m = two_firm_example(0.0);
        let (w, sol) = solved(&m);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| monte_carlo_payments(&sol, &w, &m, &TrueFunction::zero(), 20_000, 42).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn zero_truth_matches_closed_form() {
        for x1 in [-1.0, 0.0] {
            let m = two_firm_example(x1);
            let (w, sol) = solved(&m);
            let r = monte_carlo_payments(&sol, &w, &m, &TrueFunction::zero(), 100_000, 42).unwrap();
            assert!(r.max_abs_z() < 4.0, "{r:?}");
        }
    }

    #[test]
    fn full_rank_leave_one_out_is_unbiased() {
        let mut m = two_firm_example(0.0);
        m.sources = vec![
            crate::DataSource { x: -0.9, alpha: 20.0 },
            crate::DataSource { x: -0.2, alpha: 30.0 },
            crate::DataSource { x: 0.6, alpha: 25.0 },
        ];
        m.buyers.truncate(1);
        m.buyers[0].delta = vec![0.0];
        let (w, sol) = solved(&m);
        let f = TrueFunction::new(vec![0.3, -1.2]).unwrap();
        let r = monte_carlo_payments(&sol, &w, &m, &f, 100_000, 3).unwrap();
        assert!(r.max_abs_z() < 4.0, "{r:?}");
    }

    #[test]
    fn estimator_loss_matches_beta() {
        let m = two_firm_example(0.0);
        let w = compute_weights(&m).unwrap();
        let checks =
            monte_carlo_estimator_loss(&w, &m, &TrueFunction::identity(), &[0.3, 0.2], 100_000, 11)
                .unwrap();
        for c in checks {
            assert!(c.z_score.abs() < 4.0, "{c:?}");
        }
    }
}
