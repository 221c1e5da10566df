//! `solve` and `welfare` reports.

use std::io::Write;
use std::path::Path;

use datamarket_core::{price_of_anarchy, solve_market, MarketError, MarketOutcome, SeparableWeights, WelfareReport};
use serde::Serialize;

use crate::config::MarketConfigFile;
use crate::CliError;

/// Fixed 12-significant-digit scientific notation, identical on every platform.
pub fn num(x: f64) -> String {
    format!("{x:.11e}")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub status: &'static str,
    pub rho: f64,
    /// `[buyer][source]`; absent when the weights themselves are undefined.
    pub gamma: Option<Vec<Vec<f64>>>,
    /// `[buyer][source i][source l]`.
    pub xi: Vec<Vec<Vec<f64>>>,
    pub equilibrium: Option<EquilibriumJson>,
    pub welfare: Option<WelfareJson>,
    pub welfare_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumJson {
    pub d: Vec<Vec<f64>>,
    pub d_total: Vec<f64>,
    pub efforts: Vec<f64>,
    pub variances: Vec<f64>,
    pub c_equality: Vec<f64>,
    pub c_lower: Vec<Vec<f64>>,
    pub c_canonical: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WelfareJson {
    pub e_star: Vec<f64>,
    pub e_hat: Vec<f64>,
    pub loss_eq: f64,
    pub loss_opt: f64,
    pub poa: f64,
}

impl From<&WelfareReport> for WelfareJson {
    fn from(r: &WelfareReport) -> Self {
        Self {
            e_star: r.efforts_eq.clone(),
            e_hat: r.efforts_opt.clone(),
            loss_eq: r.loss_eq,
            loss_opt: r.loss_opt,
            poa: r.poa,
        }
    }
}

impl SolveReport {
    pub fn from_outcome(outcome: &MarketOutcome, m: &datamarket_core::MarketInstance) -> Self {
        match outcome {
            MarketOutcome::Equilibrium {
                weights,
                system,
                solution,
            } => {
                let (welfare, welfare_error) = match price_of_anarchy(solution, weights, m) {
                    Ok(r) => (Some(WelfareJson::from(&r)), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                Self {
                    status: "ok",
                    rho: system.rho,
                    gamma: Some(weights.gamma.clone()),
                    xi: weights.xi.clone(),
                    equilibrium: Some(EquilibriumJson {
                        d: solution.d.clone(),
                        d_total: solution.d_total.clone(),
                        efforts: solution.efforts.clone(),
                        variances: solution.variances.clone(),
                        c_equality: solution.c_polytope.equality.clone(),
                        c_lower: solution.c_polytope.lower.clone(),
                        c_canonical: solution.c_canonical.clone(),
                    }),
                    welfare,
                    welfare_error,
                }
            }
            MarketOutcome::NoEquilibrium { rho, xi, weights } => Self {
                status: "no_equilibrium",
                rho: *rho,
                gamma: weights.as_ref().map(|w: &SeparableWeights| w.gamma.clone()),
                xi: xi.clone(),
                equilibrium: None,
                welfare: None,
                welfare_error: None,
            },
        }
    }

    /// Human-readable form. Labels are 1-based and match the sweep CSV
    /// columns: `gamma_<source>_<buyer>`, `xi_<i>_<l>_<buyer>`,
    /// `d_<source>_<buyer>`.
    pub fn write_text(&self, out: &mut dyn Write) -> std::io::Result<()> {
        let nb = self.xi.len();
        let n = self.xi.first().map_or(0, Vec::len);
        writeln!(out, "market: {n} sources, {nb} buyers")?;
        writeln!(out, "rho = {}", num(self.rho))?;
        if let Some(gamma) = &self.gamma {
            writeln!(out, "gamma:")?;
            for i in 0..n {
                for (j, g) in gamma.iter().enumerate() {
                    writeln!(out, "  gamma_{}_{} = {}", i + 1, j + 1, num(g[i]))?;
                }
            }
        }
        writeln!(out, "xi:")?;
        for i in 0..n {
            for l in (0..n).filter(|&l| l != i) {
                for (j, x) in self.xi.iter().enumerate() {
                    writeln!(out, "  xi_{}_{}_{} = {}", i + 1, l + 1, j + 1, num(x[i][l]))?;
                }
            }
        }
        let Some(eq) = &self.equilibrium else {
            return writeln!(out, "status: {}", self.status);
        };
        writeln!(out, "equilibrium slopes:")?;
        for i in 0..n {
            for (j, d) in eq.d.iter().enumerate() {
                writeln!(out, "  d_{}_{} = {}", i + 1, j + 1, num(d[i]))?;
            }
        }
        writeln!(out, "sources:")?;
        for i in 0..n {
            writeln!(
                out,
                "  {}: d_total = {}  effort = {}  variance = {}  E = {}",
                i + 1,
                num(eq.d_total[i]),
                num(eq.efforts[i]),
                num(eq.variances[i]),
                num(eq.c_equality[i])
            )?;
        }
        writeln!(out, "intercepts (lower bound L, canonical c):")?;
        for i in 0..n {
            for j in 0..nb {
                writeln!(
                    out,
                    "  c_{}_{}: L = {}  c = {}",
                    i + 1,
                    j + 1,
                    num(eq.c_lower[j][i]),
                    num(eq.c_canonical[j][i])
                )?;
            }
        }
        match (&self.welfare, &self.welfare_error) {
            (Some(w), _) => write_welfare(w, out)?,
            (None, Some(e)) => writeln!(out, "welfare: unavailable ({e})")?,
            (None, None) => {}
        }
        writeln!(out, "status: {}", self.status)
    }
}

fn write_welfare(w: &WelfareJson, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "welfare:")?;
    for (i, (s, h)) in w.e_star.iter().zip(&w.e_hat).enumerate() {
        writeln!(out, "  e_star_{} = {}  e_hat_{} = {}", i + 1, num(*s), i + 1, num(*h))?;
    }
    writeln!(out, "  loss_eq = {}", num(w.loss_eq))?;
    writeln!(out, "  loss_opt = {}", num(w.loss_opt))?;
    writeln!(out, "  poa = {}", num(w.poa))
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::Input(format!("cannot write output: {e}"))
}

pub fn run_solve(config: &Path, json_out: Option<&Path>, out: &mut dyn Write) -> Result<(), CliError> {
    let m = MarketConfigFile::load(config)?.to_market()?;
    let outcome = solve_market(&m)?;
    let report = SolveReport::from_outcome(&outcome, &m);
    report.write_text(out).map_err(io_err)?;
    if let Some(path) = json_out {
        let text = serde_json::to_string_pretty(&report).expect("report is serialisable");
        std::fs::write(path, text + "\n")
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    }
    match outcome {
        MarketOutcome::Equilibrium { .. } => Ok(()),
        MarketOutcome::NoEquilibrium { rho, .. } => Err(MarketError::NoEquilibrium { rho }.into()),
    }
}

pub fn run_welfare(config: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let m = MarketConfigFile::load(config)?.to_market()?;
    match solve_market(&m)? {
        MarketOutcome::Equilibrium { weights, solution, .. } => {
            let r = price_of_anarchy(&solution, &weights, &m)?;
            write_welfare(&WelfareJson::from(&r), out).map_err(io_err)
        }
        MarketOutcome::NoEquilibrium { rho, .. } => Err(MarketError::NoEquilibrium { rho }.into()),
    }
}
