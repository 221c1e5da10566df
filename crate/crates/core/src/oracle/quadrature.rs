//! Gauss-Legendre quadrature, used to re-derive the `h` weights without the
//! closed-form moment matrix.

use crate::error::Result;
use crate::estimators::{basis, fit_operator};
use crate::market::{EstimatorSpec, ValueDistribution};

pub const DEFAULT_NODES: usize = 64;

/// Nodes and weights on `[-1, 1]`, by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Three-term recurrence for P_n(x) and its derivative.
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pm) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// `E_F[g(x)]`: Gauss-Legendre for uniform `F`, exact sums otherwise.
pub fn expectation<G: Fn(f64) -> f64>(dist: &ValueDistribution, nodes: usize, g: G) -> f64 {
    match dist {
        ValueDistribution::Uniform { lo, hi } => {
            let (t, w) = gauss_legendre(nodes);
            let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
            // Density 1/(hi-lo) times Jacobian (hi-lo)/2.
            t.iter().zip(&w).map(|(t, w)| 0.5 * w * g(mid + half * t)).sum()
        }
        ValueDistribution::PointMass { x0 } => g(*x0),
        ValueDistribution::Discrete { points, weights } => {
            points.iter().zip(weights).map(|(p, w)| w * g(*p)).sum()
        }
    }
}

/// `h` for every source, integrating the squared prediction weight
/// numerically instead of through the moment matrix.
pub fn h_weights_quadrature(
    spec: EstimatorSpec,
    locations: &[f64],
    dist: &ValueDistribution,
    nodes: usize,
) -> Result<Vec<f64>> {
    let degree = spec.degree();
    let w = fit_operator(locations, degree)?;
    Ok((0..locations.len())
        .map(|i| {
            expectation(dist, nodes, |x| {
                let phi = basis(x, degree);
                let v: f64 = (0..=degree).map(|a| phi[a] * w[(a, i)]).sum();
                v * v
            })
        })
        .collect())
}
