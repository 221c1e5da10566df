//! Separable regression weights.
//!
//! A buyer fitting a monomial basis by least squares has expected squared
//! error `sum_i h_i * sigma_i^2`, where `h_i = E_F[(phi(x*)^T w_i)^2]` and
//! `w_i` is column `i` of the fit operator `W` (so the fitted coefficients
//! are `W y`). For full column rank designs `W = (X^T X)^-1 X^T`; for
//! underdetermined designs (fewer points than basis functions, which is the
//! usual leave-one-out case with two sources and a line) `W` is the
//! minimum-norm solution `X^T (X X^T)^-1`. Both are the Moore-Penrose
//! pseudo-inverse of `X`.

use crate::error::{MarketError, Result};
use crate::linalg::Matrix;
use crate::market::{EstimatorSpec, MarketInstance, ValueDistribution};

/// Gram matrices with a larger one-norm condition number are rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Values of `gamma` above `-GAMMA_NEG_TOL * (1 + max beta)` are clamped to
/// zero; anything lower is a hard error.
pub const GAMMA_NEG_TOL: f64 = 1e-12;

/// Reduced game coefficients for every buyer.
///
/// Layout: `beta[k][i]`, `gamma[k][i]` (buyer `k`, source `i`) and
/// `xi[k][i][l]`, the weight of source `l`'s variance in buyer `k`'s
/// leave-`i`-out prediction at `x_i`, with `xi[k][i][i] = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableWeights {
    pub beta: Vec<Vec<f64>>,
    pub xi: Vec<Vec<Vec<f64>>>,
    /// Competition-adjusted loss weights, already divided by each buyer's eta.
    pub gamma: Vec<Vec<f64>>,
}

impl SeparableWeights {
    pub fn n_buyers(&self) -> usize {
        self.gamma.len()
    }

    pub fn n_sources(&self) -> usize {
        self.gamma.first().map_or(0, Vec::len)
    }

    /// `sum_j gamma[j][i]`.
    pub fn gamma_total(&self, source: usize) -> f64 {
        self.gamma.iter().map(|g| g[source]).sum()
    }

    /// True when every off-diagonal `xi` is exactly zero.
    pub fn decoupled(&self) -> bool {
        self.xi.iter().all(|per_buyer| {
            per_buyer
                .iter()
                .enumerate()
                .all(|(i, row)| row.iter().enumerate().all(|(l, &v)| l == i || v == 0.0))
        })
    }
}

/// Monomial basis `[1, x, ..., x^degree]`.
pub fn basis(x: f64, degree: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(degree + 1);
    let mut p = 1.0;
    for _ in 0..=degree {
        out.push(p);
        p *= x;
    }
    out
}

fn design(locations: &[f64], degree: usize) -> Matrix {
    Matrix::from_rows(
        &locations
            .iter()
            .map(|&x| basis(x, degree))
            .collect::<Vec<_>>(),
    )
}

/// Pseudo-inverse fit operator `W` (`(degree + 1) x n`), so that fitted
/// coefficients are `W y`.
pub fn fit_operator(locations: &[f64], degree: usize) -> Result<Matrix> {
    let x = design(locations, degree);
    let xt = x.transpose();
    let overdetermined = locations.len() >= degree + 1;
    let gram = if overdetermined {
        xt.matmul(&x)
    } else {
        x.matmul(&xt)
    };
    let condition = gram.condition_one();
    if !(condition <= MAX_CONDITION) {
        return Err(MarketError::SingularDesign {
            context: format!("locations {locations:?}, degree {degree}"),
            condition,
        });
    }
    let inv = gram.inverse().ok_or_else(|| MarketError::SingularDesign {
        context: format!("locations {locations:?}, degree {degree}"),
        condition: f64::INFINITY,
    })?;
    Ok(if overdetermined {
        inv.matmul(&xt)
    } else {
        xt.matmul(&inv)
    })
}

/// Moment matrix `E_F[phi phi^T]`, with entry `(a, b) = E[x^(a+b)]`.
pub fn moment_matrix(dist: &ValueDistribution, degree: usize) -> Matrix {
    let mut m = Matrix::zeros(degree + 1, degree + 1);
    for a in 0..=degree {
        for b in 0..=degree {
            m[(a, b)] = dist.moment((a + b) as u32);
        }
    }
    m
}

/// `h` for every source of the design at once.
pub fn h_weights(spec: EstimatorSpec, locations: &[f64], dist: &ValueDistribution) -> Result<Vec<f64>> {
    let degree = spec.degree();
    let w = fit_operator(locations, degree)?;
    let moments = moment_matrix(dist, degree);
    Ok((0..locations.len())
        .map(|i| {
            let col: Vec<f64> = (0..=degree).map(|a| w[(a, i)]).collect();
            let mc = moments.matvec(&col);
            col.iter().zip(&mc).map(|(a, b)| a * b).sum::<f64>().max(0.0)
        })
        .collect())
}

/// Coefficient on `sigma_source^2` in the buyer's expected squared loss when
/// fitting `locations` and scoring under `dist`.
pub fn h_weight(
    spec: EstimatorSpec,
    source: usize,
    locations: &[f64],
    dist: &ValueDistribution,
) -> Result<f64> {
    assert!(source < locations.len(), "source index out of range");
    Ok(h_weights(spec, locations, dist)?[source])
}

/// `xi[k][i][l]` for every buyer. Needs only locations and estimators, so it
/// is available even when the full design is singular.
pub fn compute_xi(m: &MarketInstance) -> Result<Vec<Vec<Vec<f64>>>> {
    let n = m.n_sources();
    let locations = m.locations();
    m.buyers
        .iter()
        .enumerate()
        .map(|(k, buyer)| {
            (0..n)
                .map(|i| {
                    let rest: Vec<f64> = locations
                        .iter()
                        .enumerate()
                        .filter(|&(l, _)| l != i)
                        .map(|(_, &x)| x)
                        .collect();
                    let mut row = vec![0.0; n];
                    row[i] = 1.0;
                    if rest.is_empty() {
                        return Ok(row);
                    }
                    let at_i = ValueDistribution::PointMass { x0: locations[i] };
                    let h = h_weights(buyer.estimator, &rest, &at_i).map_err(|e| match e {
                        MarketError::SingularDesign { .. } => {
                            MarketError::SingularLeaveOneOut { buyer: k, source_index: i }
                        }
                        other => other,
                    })?;
                    let others = (0..n).filter(|&l| l != i);
                    for (l, v) in others.zip(h) {
                        row[l] = v;
                    }
                    Ok(row)
                })
                .collect()
        })
        .collect()
}

/// Reduces a validated market to its separable coefficients.
pub fn compute_weights(m: &MarketInstance) -> Result<SeparableWeights> {
    let violations = crate::market::validate_market(m);
    if !violations.is_empty() {
        return Err(MarketError::Invalid(violations));
    }
    let xi = compute_xi(m)?;
    let locations = m.locations();
    let beta = m
        .buyers
        .iter()
        .map(|b| h_weights(b.estimator, &locations, &b.value_dist))
        .collect::<Result<Vec<_>>>()?;
    let gamma = gamma_from_beta(m, &beta)?;
    Ok(SeparableWeights { beta, xi, gamma })
}

fn gamma_from_beta(m: &MarketInstance, beta: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let nb = m.n_buyers();
    let n = m.n_sources();
    let mut gamma = vec![vec![0.0; n]; nb];
    for k in 0..nb {
        for i in 0..n {
            let rivals: f64 = (0..nb)
                .filter(|&j| j != k)
                .map(|j| m.delta(k, j) * beta[j][i])
                .sum();
            let g = (beta[k][i] - rivals) / m.buyers[k].eta;
            let scale = 1.0 + beta.iter().map(|b| b[i]).fold(0.0, f64::max);
            if g < -GAMMA_NEG_TOL * scale {
                return Err(MarketError::GammaNegative {
                    source_index: i,
                    buyer: k,
                    value: g,
                });
            }
            gamma[k][i] = g.max(0.0);
        }
    }
    Ok(gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::two_firm_example;
    use proptest::prelude::*;

    const LINE: EstimatorSpec = EstimatorSpec::LinearRegression;
    const UNIT: ValueDistribution = ValueDistribution::Uniform { lo: -1.0, hi: 1.0 };

    /// Two-point interpolation: the weight on source `i` is the mean square
    /// of the other point's Lagrange polynomial, `(1/3 + x_o^2) / (x_i - x_o)^2`.
    fn two_point_oracle(xi: f64, xo: f64) -> f64 {
        (1.0 / 3.0 + xo * xo) / ((xi - xo) * (xi - xo))
    }

    #[test]
    fn two_point_uniform_weights() {
        for x1 in [-1.0, -0.5, 0.0, 0.3, 0.9] {
            let h = h_weights(LINE, &[x1, 1.0], &UNIT).unwrap();
            assert!((h[0] - two_point_oracle(x1, 1.0)).abs() < 1e-12 * h[0]);
            assert!((h[1] - two_point_oracle(1.0, x1)).abs() < 1e-12 * h[1]);
        }
        let h = h_weights(LINE, &[-1.0, 1.0], &UNIT).unwrap();
        assert!((h[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((h[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn printed_closed_form_swaps_source_labels() {
        // ((x1-x2)^2/3 + (x_i^2 - x1 x2)^2) / (x1^2 + x2^2 - 2 x1 x2)^2 attaches
        // x_i where the regression weight has the other location.
        let printed = |i: usize, x1: f64, x2: f64| {
            let xi = if i == 0 { x1 } else { x2 };
            ((x1 - x2).powi(2) / 3.0 + (xi * xi - x1 * x2).powi(2))
                / (x1 * x1 + x2 * x2 - 2.0 * x1 * x2).powi(2)
        };
        let h = h_weights(LINE, &[0.0, 1.0], &UNIT).unwrap();
        assert!((h[0] - 4.0 / 3.0).abs() < 1e-14);
        assert!((h[1] - 1.0 / 3.0).abs() < 1e-14);
        assert!((printed(0, 0.0, 1.0) - h[1]).abs() < 1e-14);
        assert!((printed(1, 0.0, 1.0) - h[0]).abs() < 1e-14);
    }

    #[test]
    fn one_point_line_uses_minimum_norm_fit() {
        for x1 in [-1.0, 0.0, 0.5] {
            let h = h_weight(LINE, 0, &[1.0], &ValueDistribution::PointMass { x0: x1 }).unwrap();
            let expect = (x1 * 1.0 + 1.0).powi(2) / 4.0;
            assert!((h - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn duplicate_locations_are_singular() {
        let err = h_weight(LINE, 0, &[0.5, 0.5], &UNIT).unwrap_err();
        assert!(matches!(err, MarketError::SingularDesign { .. }));
        let err = h_weight(LINE, 0, &[0.5, 0.5, 0.5], &UNIT).unwrap_err();
        assert!(matches!(err, MarketError::SingularDesign { .. }));
        let quad = EstimatorSpec::PolynomialRegression { degree: 2 };
        let err = h_weight(quad, 0, &[0.5, 0.5], &UNIT).unwrap_err();
        assert!(matches!(err, MarketError::SingularDesign { .. }));
    }

    #[test]
    fn two_firm_weights_at_zero() {
        let w = compute_weights(&two_firm_example(0.0)).unwrap();
        for k in 0..2 {
            assert!((w.gamma[k][0] - 4.0 / 3.0).abs() < 1e-14);
            assert!((w.gamma[k][1] - 1.0 / 3.0).abs() < 1e-14);
            assert!((w.xi[k][0][1] - 0.25).abs() < 1e-15);
            assert!((w.xi[k][1][0] - 1.0).abs() < 1e-15);
            assert_eq!(w.xi[k][0][0], 1.0);
            assert_eq!(w.xi[k][1][1], 1.0);
        }
        assert_eq!(w.xi[0], w.xi[1]);
    }

    #[test]
    fn two_firm_closed_form_xi() {
        for x1 in [-0.75, -0.2, 0.4, 0.99] {
            let w = compute_weights(&two_firm_example(x1)).unwrap();
            let x2 = 1.0f64;
            let xi12 = (x1 * x2 + 1.0).powi(2) / (x2 * x2 + 1.0).powi(2);
            let xi21 = (x1 * x2 + 1.0).powi(2) / (x1 * x1 + 1.0).powi(2);
            assert!((w.xi[0][0][1] - xi12).abs() < 1e-14);
            assert!((w.xi[1][1][0] - xi21).abs() < 1e-14);
        }
    }

    #[test]
    fn two_firm_decouples_at_minus_one() {
        let w = compute_weights(&two_firm_example(-1.0)).unwrap();
        assert!(w.decoupled());
        assert_eq!(w.xi[0][0][1], 0.0);
        assert_eq!(w.xi[0][1][0], 0.0);
    }

    #[test]
    fn full_competition_cancels_gamma() {
        let mut m = two_firm_example(0.0);
        m.buyers[0].delta[1] = 1.0;
        m.buyers[1].delta[0] = 1.0;
        let w = compute_weights(&m).unwrap();
        assert!(w.gamma.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn eta_divides_gamma() {
        let mut m = two_firm_example(0.0);
        m.buyers[1].eta = 2.0;
        let w = compute_weights(&m).unwrap();
        assert!((w.gamma[1][0] - w.gamma[0][0] / 2.0).abs() < 1e-15);
    }

    #[test]
    fn negative_gamma_rejected() {
        let mut m = two_firm_example(0.0);
        m.buyers[0].delta[1] = 1.0;
        m.buyers[1].delta[0] = 1.0;
        m.buyers[1].value_dist = ValueDistribution::Uniform { lo: -1.0, hi: 0.0 };
        let err = compute_weights(&m).unwrap_err();
        assert!(matches!(err, MarketError::GammaNegative { .. }), "{err}");
    }

    #[test]
    fn invalid_market_rejected() {
        let mut m = two_firm_example(0.0);
        m.sources[0].alpha = -1.0;
        assert!(matches!(compute_weights(&m), Err(MarketError::Invalid(_))));
    }

    #[test]
    fn point_mass_is_direct_quadratic_form() {
        let locs = [-0.8, -0.1, 0.35, 0.9];
        let spec = EstimatorSpec::PolynomialRegression { degree: 2 };
        let at = 0.2;
        let h = h_weights(spec, &locs, &ValueDistribution::PointMass { x0: at }).unwrap();
        // Prediction at `at` is linear in y; its coefficient on y_i is phi(at)^T w_i.
        let x = design(&locs, 2);
        let g = x.transpose().matmul(&x).inverse().unwrap();
        let phi = basis(at, 2);
        for i in 0..locs.len() {
            let xi_row = basis(locs[i], 2);
            let coef: f64 = (0..3)
                .map(|a| phi[a] * (0..3).map(|b| g[(a, b)] * xi_row[b]).sum::<f64>())
                .sum();
            assert!((h[i] - coef * coef).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn weights_nonnegative_and_reproduce_identity(
            xs in proptest::collection::vec(-1.0f64..1.0, 4..7),
            at in -1.0f64..1.0,
        ) {
            let mut xs = xs;
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            prop_assume!(xs.windows(2).all(|w| w[1] - w[0] > 0.05));
            let spec = EstimatorSpec::PolynomialRegression { degree: 2 };
            let w = fit_operator(&xs, 2).unwrap();
            // A least-squares fit reproduces the constant function exactly.
            let ones = vec![1.0; xs.len()];
            let coef = w.matvec(&ones);
            prop_assert!((coef[0] - 1.0).abs() < 1e-9);
            let h = h_weights(spec, &xs, &ValueDistribution::PointMass { x0: at }).unwrap();
            prop_assert!(h.iter().all(|&v| v >= 0.0));
        }
    }
}
