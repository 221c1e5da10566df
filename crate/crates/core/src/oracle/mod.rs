//! Independent verification of the closed-form pipeline.
//!
//! Nothing here is needed to compute an equilibrium. Each check reaches the
//! same quantity by a different route: grid search over a buyer's own
//! contracts, fixed-point iteration of the best-response map, simulation of
//! raw reports and payments, and numerical quadrature of expectations.

mod best_response;
mod dynamics;
mod monte_carlo;
pub mod quadrature;

pub use best_response::{
    best_response_check, eval_buyer_cost, tight_intercepts, BestResponseReport, BrGrid,
};
pub use dynamics::{neumann_dynamics, NeumannReport};
pub use monte_carlo::{
    monte_carlo_estimator_loss, monte_carlo_payments, LossCheck, MonteCarloReport, PaymentCheck,
    SourceCheck, TrueFunction,
};
