//! Front end for the data market solver: JSON configs in, text reports,
//! JSON reports and sweep CSVs out.
//!
//! Exit codes: 0 success, 1 input error, 2 no equilibrium, 3 certification
//! failure.

pub mod check;
pub mod config;
pub mod report;
pub mod sweep;

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use datamarket_core::MarketError;

pub use check::{run_check, CheckOptions, CheckOutcome, Perturbation};
pub use config::MarketConfigFile;
pub use sweep::{run_sweep, SweepSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NO_EQUILIBRIUM: i32 = 2;
pub const EXIT_CERTIFICATION: i32 = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Input(String),
    Market(MarketError),
    Certification(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Input(_) => EXIT_INPUT,
            Self::Market(MarketError::NoEquilibrium { .. }) => EXIT_NO_EQUILIBRIUM,
            Self::Market(_) => EXIT_INPUT,
            Self::Certification(_) => EXIT_CERTIFICATION,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Input(msg) => f.write_str(msg),
            Self::Market(MarketError::NoEquilibrium { rho }) => {
                write!(f, "no equilibrium: rho={} (needs rho < 1)", report::num(*rho))
            }
            Self::Market(e) => write!(f, "{e}"),
            Self::Certification(failed) => write!(f, "certification failed: {}", failed.join(", ")),
        }
    }
}

impl std::error::Error for CliError {}

impl From<MarketError> for CliError {
    fn from(e: MarketError) -> Self {
        Self::Market(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "datamarket", version, about = "Equilibria of competitive data markets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve a market: weights, equilibrium slopes, efforts, intercepts, welfare.
    Solve {
        config: PathBuf,
        /// Also write the full report as JSON.
        #[arg(long)]
        json_out: Option<PathBuf>,
    },
    /// Sweep one numeric config field and write a CSV.
    Sweep {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Certify an equilibrium with the independent oracles.
    Check {
        config: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        /// Polynomial coefficients of the true function, constant first.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        truth: Option<Vec<f64>>,
        /// Adds DELTA to one equilibrium slope before checking (BUYER:SOURCE:DELTA, 1-based).
        #[arg(long, value_name = "BUYER:SOURCE:DELTA", allow_hyphen_values = true)]
        debug_perturb: Option<Perturbation>,
    },
    /// Equilibrium and socially optimal efforts, losses and price of anarchy.
    Welfare { config: PathBuf },
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        let _ = writeln!(err, "error: {e}");
        return e.exit_code();
    }
    let result = match cli.command {
        Command::Solve { config, json_out } => report::run_solve(&config, json_out.as_deref(), out),
        Command::Sweep { spec, out: csv } => run_sweep(&spec, &csv, out),
        Command::Check {
            config,
            seed,
            samples,
            truth,
            debug_perturb,
        } => {
            let opts = CheckOptions {
                seed,
                samples,
                truth: truth.unwrap_or_default(),
                perturb: debug_perturb,
                ..CheckOptions::default()
            };
            run_check(&config, &opts, out).map(|_| ())
        }
        Command::Welfare { config } => report::run_welfare(&config, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

/// Honours `DM_THREADS` by sizing rayon's global pool. The pool can only be
/// built once per process, so later calls are no-ops.
fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("DM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Input(format!("DM_THREADS must be a positive integer, got {raw:?}")))?;
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exit(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(std::iter::once("datamarket").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn usage_errors_are_input_errors() {
        assert_eq!(exit(&["frobnicate"]).0, EXIT_INPUT);
        assert_eq!(exit(&["solve"]).0, EXIT_INPUT);
        let (code, out, _) = exit(&["--help"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("sweep"));
    }

    #[test]
    fn missing_file_is_input_error() {
        let (code, _, err) = exit(&["solve", "/nonexistent/market.json"]);
        assert_eq!(code, EXIT_INPUT);
        assert!(err.contains("/nonexistent/market.json"));
    }

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            CliError::Input(String::new()).exit_code(),
            CliError::Market(MarketError::NoEquilibrium { rho: 1.0 }).exit_code(),
            CliError::Certification(vec![]).exit_code(),
        ];
        assert_eq!(codes, [EXIT_INPUT, EXIT_NO_EQUILIBRIUM, EXIT_CERTIFICATION]);
        assert_eq!(CliError::Market(MarketError::Domain(String::new())).exit_code(), EXIT_INPUT);
    }

    #[test]
    fn no_equilibrium_message_names_rho() {
        let msg = CliError::Market(MarketError::NoEquilibrium { rho: 0.9999999999999998 }).to_string();
        assert!(msg.contains("rho=1"), "{msg}");
    }
}
