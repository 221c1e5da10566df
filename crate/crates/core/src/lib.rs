//! Equilibrium analysis for data markets in which several competing buyers
//! contract with effort-averse data sources.
//!
//! Each buyer offers every source a quadratic-penalty contract
//! `p = c - d * (y - f_hat(x))^2`. Sources pick effort to maximise total
//! payment minus effort, and buyers compete through the leave-one-out
//! estimators that define each other's penalties. The pipeline is:
//!
//! 1. [`market`]: primitives and validation.
//! 2. [`estimators`]: separable regression weights `beta`, `xi`, `gamma`.
//! 3. [`equilibrium`]: the stacked fixed point `d = A d + gamma`, its
//!    existence test `rho(A) < 1`, and the polytope of payment intercepts.
//! 4. [`welfare`]: social loss, socially optimal effort, price of anarchy.
//! 5. [`oracle`]: independent checks (best-response search, fixed-point
//!    dynamics, Monte-Carlo payments, quadrature).

pub mod equilibrium;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod market;
pub mod oracle;
pub mod welfare;

pub use equilibrium::{
    build_coupling_system, canonical_c, c_polytope, solve_equilibrium_d, solve_market,
    spectral_radius, CPolytope, CouplingSystem, EquilibriumD, EquilibriumSolution, MarketOutcome,
};
pub use error::{MarketError, Result};
pub use estimators::{compute_weights, compute_xi, h_weight, SeparableWeights};
pub use market::{
    effort_from_d_total, two_firm_example, validate_market, variance_from_d_total, DataBuyer, DataSource,
    EstimatorSpec, FeatureDomain, MarketInstance, ValueDistribution, Violation, ViolationCode,
};
pub use welfare::{price_of_anarchy, social_loss, social_optimum_efforts, WelfareReport};
