//! `check`: certify an equilibrium with the independent oracles.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use datamarket_core::linalg::norm_inf;
use datamarket_core::oracle::{
    best_response_check, monte_carlo_payments, neumann_dynamics, BestResponseReport, BrGrid,
    MonteCarloReport, NeumannReport, TrueFunction,
};
use datamarket_core::{solve_market, EquilibriumSolution, MarketError, MarketInstance, MarketOutcome};

use crate::config::MarketConfigFile;
use crate::report::num;
use crate::CliError;

pub const NEUMANN_MAX_ITERS: usize = 1_000_000;
pub const NEUMANN_TOL: f64 = 1e-14;
/// Neumann and direct slopes must agree to this relative accuracy.
pub const AGREEMENT_TOL: f64 = 1e-8;
pub const MAX_Z: f64 = 4.0;

/// `BUYER:SOURCE:DELTA`, 1-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub buyer: usize,
    pub source: usize,
    pub delta: f64,
}

impl FromStr for Perturbation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let [b, q, d] = parts[..] else {
            return Err(format!("expected BUYER:SOURCE:DELTA, got {s:?}"));
        };
        let index = |t: &str| t.parse::<usize>().ok().filter(|&v| v >= 1);
        Ok(Self {
            buyer: index(b).ok_or_else(|| format!("buyer must be a 1-based index, got {b:?}"))?,
            source: index(q).ok_or_else(|| format!("source must be a 1-based index, got {q:?}"))?,
            delta: d
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("delta must be a finite number, got {d:?}"))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOptions {
    pub seed: u64,
    pub samples: usize,
    /// True-function coefficients, constant first; empty means `f = 0`.
    pub truth: Vec<f64>,
    pub perturb: Option<Perturbation>,
    pub grid: BrGrid,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            seed: 42,
            samples: 100_000,
            truth: Vec::new(),
            perturb: None,
            grid: BrGrid::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub best_response: Vec<BestResponseReport>,
    pub neumann: NeumannReport,
    /// `max |d_neumann - d| / max(|d|)`.
    pub neumann_gap: f64,
    pub monte_carlo: MonteCarloReport,
}

impl CheckOutcome {
    /// Names of the failed certifications; empty when everything passes.
    pub fn failures(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .best_response
            .iter()
            .filter(|r| !r.certified())
            .map(|r| format!("best-response (buyer {})", r.buyer + 1))
            .collect();
        if !self.neumann.converged {
            out.push("neumann (not converged)".into());
        } else if self.neumann_gap > AGREEMENT_TOL {
            out.push("neumann (disagrees with direct solve)".into());
        }
        if !(self.monte_carlo.max_abs_z() < MAX_Z) {
            out.push("monte-carlo".into());
        }
        out
    }
}

fn perturbed(
    sol: EquilibriumSolution,
    p: Option<Perturbation>,
    w: &datamarket_core::SeparableWeights,
    m: &MarketInstance,
) -> Result<EquilibriumSolution, CliError> {
    let Some(p) = p else { return Ok(sol) };
    if p.buyer > m.n_buyers() || p.source > m.n_sources() {
        return Err(CliError::Input(format!(
            "--debug-perturb {}:{}: market has {} buyers and {} sources",
            p.buyer,
            p.source,
            m.n_buyers(),
            m.n_sources()
        )));
    }
    let mut d = sol.d;
    d[p.buyer - 1][p.source - 1] += p.delta;
    Ok(EquilibriumSolution::from_slopes(d, w, m)?)
}

/// Runs every oracle on a market's equilibrium.
pub fn check_market(m: &MarketInstance, opts: &CheckOptions) -> Result<CheckOutcome, CliError> {
    let (weights, system, solution) = match solve_market(m)? {
        MarketOutcome::Equilibrium {
            weights,
            system,
            solution,
        } => (weights, system, solution),
        MarketOutcome::NoEquilibrium { rho, .. } => return Err(MarketError::NoEquilibrium { rho }.into()),
    };
    let truth = TrueFunction::new(opts.truth.clone())?;
    let sol = perturbed(solution, opts.perturb, &weights, m)?;
    let best_response = (0..m.n_buyers())
        .map(|k| best_response_check(&sol, k, &weights, m, opts.grid))
        .collect::<Result<Vec<_>, _>>()?;
    let neumann = neumann_dynamics(&system, NEUMANN_MAX_ITERS, NEUMANN_TOL);
    let direct: Vec<f64> = sol.d.iter().flatten().copied().collect();
    let gap = neumann
        .d
        .iter()
        .flatten()
        .zip(&direct)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let monte_carlo = monte_carlo_payments(&sol, &weights, m, &truth, opts.samples, opts.seed)?;
    Ok(CheckOutcome {
        best_response,
        neumann,
        neumann_gap: gap / norm_inf(&direct).max(f64::MIN_POSITIVE),
        monte_carlo,
    })
}

pub fn write_outcome(o: &CheckOutcome, out: &mut dyn Write) -> std::io::Result<()> {
    let mark = |ok: bool| if ok { "PASS" } else { "FAIL" };
    writeln!(out, "best response:")?;
    for r in &o.best_response {
        writeln!(
            out,
            "  buyer {}: max_improvement = {}  tolerance = {}  evaluations = {}  {}",
            r.buyer + 1,
            num(r.max_improvement),
            num(r.tolerance()),
            r.evaluations,
            mark(r.certified())
        )?;
    }
    writeln!(
        out,
        "neumann: converged = {}  iterations = {}  relative gap = {}  {}",
        o.neumann.converged,
        o.neumann.iters,
        num(o.neumann_gap),
        mark(o.neumann.converged && o.neumann_gap <= AGREEMENT_TOL)
    )?;
    let mc = &o.monte_carlo;
    writeln!(out, "monte carlo: samples = {}  seed = {}", mc.n_samples, mc.seed)?;
    for p in &mc.pairs {
        writeln!(
            out,
            "  payment buyer {} source {}: empirical = {}  analytic = {}  z = {}",
            p.buyer + 1,
            p.source + 1,
            num(p.empirical_mean),
            num(p.analytic_mean),
            num(p.z_score)
        )?;
    }
    for s in &mc.sources {
        writeln!(
            out,
            "  source {} total payment: empirical = {}  analytic = {}  z = {}",
            s.source + 1,
            num(s.empirical_mean),
            num(s.analytic_mean),
            num(s.z_score)
        )?;
    }
    writeln!(out, "  max |z| = {}  {}", num(mc.max_abs_z()), mark(mc.max_abs_z() < MAX_Z))
}

pub fn run_check(config: &Path, opts: &CheckOptions, out: &mut dyn Write) -> Result<CheckOutcome, CliError> {
    let m = MarketConfigFile::load(config)?.to_market()?;
    let outcome = check_market(&m, opts)?;
    write_outcome(&outcome, out).map_err(|e| CliError::Input(format!("cannot write output: {e}")))?;
    let failed = outcome.failures();
    if failed.is_empty() {
        Ok(outcome)
    } else {
        Err(CliError::Certification(failed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use datamarket_core::two_firm_example;

    fn quick() -> CheckOptions {
        CheckOptions {
            samples: 20_000,
            grid: BrGrid { radius: 0.5, steps: 21 },
            ..CheckOptions::default()
        }
    }

    #[test]
    fn parse_perturbation() {
        let p: Perturbation = "1:2:-0.5".parse().unwrap();
        assert_eq!(p, Perturbation { buyer: 1, source: 2, delta: -0.5 });
        for bad in ["0:1:0.5", "1:1", "1:1:x", "a:1:1", "1:1:inf"] {
            assert!(bad.parse::<Perturbation>().is_err(), "{bad}");
        }
    }

    #[test]
    fn equilibrium_passes() {
        let o = check_market(&two_firm_example(0.0), &quick()).unwrap();
        assert!(o.failures().is_empty(), "{o:?}");
    }

    #[test]
    fn perturbation_fails_best_response_and_neumann() {
        let opts = CheckOptions {
            perturb: Some(Perturbation { buyer: 1, source: 1, delta: 0.5 }),
            ..quick()
        };
        let f = check_market(&two_firm_example(0.0), &opts).unwrap().failures();
        assert!(f.contains(&"best-response (buyer 1)".to_string()), "{f:?}");
        assert!(f.iter().any(|s| s.starts_with("neumann")), "{f:?}");
    }

    #[test]
    fn perturbation_out_of_range() {
        let opts = CheckOptions {
            perturb: Some(Perturbation { buyer: 3, source: 1, delta: 0.5 }),
            ..quick()
        };
        let e = check_market(&two_firm_example(0.0), &opts).unwrap_err();
        assert_eq!(e.exit_code(), crate::EXIT_INPUT);
    }

    #[test]
    fn no_equilibrium_before_checks() {
        let e = check_market(&two_firm_example(1.0), &quick()).unwrap_err();
        assert_eq!(e.exit_code(), crate::EXIT_NO_EQUILIBRIUM);
    }
}
