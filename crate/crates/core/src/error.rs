use thiserror::Error;

use crate::market::Violation;

pub type Result<T> = std::result::Result<T, MarketError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarketError {
    #[error("invalid market: {}", format_violations(.0))]
    Invalid(Vec<Violation>),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular design matrix ({context}): condition estimate {condition:.3e}")]
    SingularDesign { context: String, condition: f64 },

    #[error("singular leave-one-out design for buyer {buyer}, dropped source {source_index}")]
    SingularLeaveOneOut { buyer: usize, source_index: usize },

    #[error("gamma[source {source_index}][buyer {buyer}] = {value:.6e} is negative")]
    GammaNegative {
        source_index: usize,
        buyer: usize,
        value: f64,
    },

    #[error("no equilibrium: rho={rho}")]
    NoEquilibrium { rho: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("c-polytope empty at source {source_index}: slack {slack:.6e}")]
    InfeasibleC { source_index: usize, slack: f64 },

    #[error("welfare requires eta = 1 for every buyer (buyer {buyer} has eta={eta})")]
    EtaNotOne { buyer: usize, eta: f64 },

    #[error("source {source_index} has zero total gamma; no finite social optimum")]
    DegenerateSource { source_index: usize },

    #[error("price of anarchy undefined: optimal social loss {0} is not positive")]
    UndefinedPoa(f64),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
