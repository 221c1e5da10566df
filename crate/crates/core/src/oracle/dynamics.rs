use crate::equilibrium::CouplingSystem;
use crate::linalg::norm_inf;

#[derive(Debug, Clone, PartialEq)]
pub struct NeumannReport {
    pub converged: bool,
    /// `d[k][i]`, the last iterate.
    pub d: Vec<Vec<f64>>,
    pub iters: usize,
}

/// Simultaneous best-response iteration `d <- A d + gamma` from `d = gamma`.
/// Converged once `||d_{t+1} - d_t||_inf <= tol * ||d_{t+1}||_inf`.
pub fn neumann_dynamics(sys: &CouplingSystem, max_iters: usize, tol: f64) -> NeumannReport {
    let mut d = sys.gamma.clone();
    for it in 1..=max_iters {
        let next: Vec<f64> = sys
            .a
            .matvec(&d)
            .into_iter()
            .zip(&sys.gamma)
            .map(|(x, g)| x + g)
            .collect();
        let step = next
            .iter()
            .zip(&d)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let scale = norm_inf(&next);
        d = next;
        if !scale.is_finite() {
            break;
        }
        if step <= tol * scale {
            return NeumannReport {
                converged: true,
                d: sys.unstack(&d),
                iters: it,
            };
        }
    }
    NeumannReport {
        converged: false,
        d: sys.unstack(&d),
        iters: max_iters,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{build_coupling_system, solve_equilibrium_d};
    use crate::estimators::compute_weights;
    use crate::market::two_firm_example;

    fn system(x1: f64) -> (crate::MarketInstance, CouplingSystem) {
        let m = two_firm_example(x1);
        let w = compute_weights(&m).unwrap();
        let sys = build_coupling_system(&w, &m);
        (m, sys)
    }

    #[test]
    fn decoupled_converges_immediately() {
        let (_, sys) = system(-1.0);
        let r = neumann_dynamics(&sys, 10, 1e-14);
        assert!(r.converged);
        assert_eq!(r.iters, 1);
        assert_eq!(sys.stack(&r.d), sys.gamma);
    }

    #[test]
    fn matches_direct_solve_at_zero() {
        let (m, sys) = system(0.0);
        let r = neumann_dynamics(&sys, 10_000, 1e-14);
        assert!(r.converged);
        let direct = solve_equilibrium_d(&sys, &m).unwrap();
        for k in 0..2 {
            for i in 0..2 {
                assert!((r.d[k][i] - direct.d[k][i]).abs() < 1e-12 * direct.d[k][i]);
            }
        }
        assert!((r.d[0][0] - 20.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn stalls_near_collapse() {
        let (_, sys) = system(0.9999);
        assert!(sys.rho > 0.9999);
        let r = neumann_dynamics(&sys, 10_000, 1e-14);
        assert!(!r.converged);
    }

    #[test]
    fn diverges_past_collapse() {
        let (_, mut sys) = system(0.0);
        for i in 0..4 {
            for j in 0..4 {
                sys.a[(i, j)] *= 3.0;
            }
        }
        let r = neumann_dynamics(&sys, 5_000, 1e-14);
        assert!(!r.converged);
    }
}
