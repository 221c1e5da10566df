//! The buyers' game reduced to a Leontief system.
//!
//! Holding rivals fixed, buyer `k`'s optimal slope toward source `q` is
//! `d_q^k = gamma_q^k + sum_{j != k} sum_{l != q} xi_{l,q}^j d_l^j`. Stacking
//! all `(buyer, source)` pairs gives `d = A d + gamma` with `A >= 0`, which has
//! a unique nonnegative solution iff `rho(A) < 1`. The slopes pin down source
//! efforts; the intercepts `c` are only constrained to a polytope.

use crate::error::{MarketError, Result};
use crate::estimators::{compute_weights, compute_xi, SeparableWeights};
use crate::linalg::{norm_inf, Matrix};
use crate::market::{
    effort_from_d_total, validate_market, variance_from_d_total, MarketInstance,
};

/// Equilibria are only reported when `rho(A) < 1 - EXISTENCE_MARGIN`.
pub const EXISTENCE_MARGIN: f64 = 1e-9;
/// Largest accepted `||d - A d - gamma||_inf / (1 + ||d||_inf)`.
pub const RESIDUAL_TOL: f64 = 1e-8;
/// Negative slopes down to `-NEGATIVE_CLAMP * (1 + ||d||_inf)` are rounding.
pub const NEGATIVE_CLAMP: f64 = 1e-12;
/// Slack allowed when testing the polytope for emptiness.
pub const POLYTOPE_TOL: f64 = 1e-12;

const POWER_MAX_ITERS: usize = 20_000;
const POWER_TOL: f64 = 1e-14;

/// Stacked fixed-point system `d = A d + gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSystem {
    pub a: Matrix,
    pub gamma: Vec<f64>,
    pub rho: f64,
    n_buyers: usize,
    n_sources: usize,
}

impl CouplingSystem {
    /// Source-major stacking: `(buyer k, source q) -> q * M + k`.
    pub fn index(&self, buyer: usize, source: usize) -> usize {
        stacked_index(self.n_buyers, buyer, source)
    }

    /// Inverse of [`CouplingSystem::index`].
    pub fn pair(&self, idx: usize) -> (usize, usize) {
        (idx % self.n_buyers, idx / self.n_buyers)
    }

    pub fn n_buyers(&self) -> usize {
        self.n_buyers
    }

    pub fn n_sources(&self) -> usize {
        self.n_sources
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_solvable(&self) -> bool {
        self.rho < 1.0 - EXISTENCE_MARGIN
    }

    /// Stacks a `[buyer][source]` table.
    pub fn stack(&self, table: &[Vec<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_buyers * self.n_sources];
        for (k, row) in table.iter().enumerate() {
            for (q, &v) in row.iter().enumerate() {
                out[self.index(k, q)] = v;
            }
        }
        out
    }

    /// Unstacks into a `[buyer][source]` table.
    pub fn unstack(&self, v: &[f64]) -> Vec<Vec<f64>> {
        (0..self.n_buyers)
            .map(|k| (0..self.n_sources).map(|q| v[self.index(k, q)]).collect())
            .collect()
    }

    /// `||d - A d - gamma||_inf / (1 + ||d||_inf)`.
    pub fn residual(&self, d: &[f64]) -> f64 {
        let ad = self.a.matvec(d);
        let r = d
            .iter()
            .zip(&ad)
            .zip(&self.gamma)
            .map(|((x, y), g)| (x - y - g).abs())
            .fold(0.0, f64::max);
        r / (1.0 + norm_inf(d))
    }
}

fn stacked_index(n_buyers: usize, buyer: usize, source: usize) -> usize {
    source * n_buyers + buyer
}

/// `A[(k,q), (j,l)] = xi[j][l][q]` for `j != k`, `l != q`; zero elsewhere.
pub fn coupling_matrix(xi: &[Vec<Vec<f64>>]) -> Matrix {
    let nb = xi.len();
    let n = xi.first().map_or(0, Vec::len);
    let mut a = Matrix::zeros(nb * n, nb * n);
    for k in 0..nb {
        for q in 0..n {
            let row = stacked_index(nb, k, q);
            for (j, xi_j) in xi.iter().enumerate() {
                if j == k {
                    continue;
                }
                for (l, xi_jl) in xi_j.iter().enumerate() {
                    if l != q {
                        a[(row, stacked_index(nb, j, l))] = xi_jl[q];
                    }
                }
            }
        }
    }
    a
}

pub fn build_coupling_system(w: &SeparableWeights, m: &MarketInstance) -> CouplingSystem {
    let (nb, n) = (m.n_buyers(), m.n_sources());
    assert_eq!(w.n_buyers(), nb);
    assert_eq!(w.n_sources(), n);
    let a = coupling_matrix(&w.xi);
    let rho = spectral_radius(&a);
    let mut sys = CouplingSystem {
        a,
        gamma: Vec::new(),
        rho,
        n_buyers: nb,
        n_sources: n,
    };
    sys.gamma = sys.stack(&w.gamma);
    sys
}

/// Perron root of a nonnegative square matrix.
///
/// Power iteration on `A + I` from the all-ones vector (the shift keeps the
/// iterate positive and breaks the periodicity of bipartite couplings), with
/// Collatz-Wielandt bounds `min (Av)_i/v_i <= rho <= max (Av)_i/v_i` as the
/// stopping rule. The iteration also stops once the Rayleigh quotient's
/// eigen-residual is small. Defective or nilpotent matrices, where neither
/// test is met within the cap, fall back to Gelfand's formula by repeated
/// squaring, clamped to the last Collatz-Wielandt bracket.
pub fn spectral_radius(a: &Matrix) -> f64 {
    assert!(a.is_square(), "spectral radius needs a square matrix");
    debug_assert!(a.iter().all(|&x| x >= 0.0), "matrix must be nonnegative");
    let n = a.rows();
    if n == 0 || a.iter().all(|&x| x == 0.0) {
        return 0.0;
    }
    let mut v = vec![1.0; n];
    let (mut lo_last, mut hi_last) = (0.0, f64::INFINITY);
    for _ in 0..POWER_MAX_ITERS {
        let av = a.matvec(&v);
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for (x, y) in av.iter().zip(&v) {
            let r = x / y;
            lo = lo.min(r);
            hi = hi.max(r);
        }
        if hi == 0.0 {
            return 0.0;
        }
        if hi - lo <= POWER_TOL * hi {
            return 0.5 * (hi + lo);
        }
        (lo_last, hi_last) = (lo, hi);
        let vv: f64 = v.iter().map(|x| x * x).sum();
        let rayleigh = v.iter().zip(&av).map(|(x, y)| x * y).sum::<f64>() / vv;
        let resid = av
            .iter()
            .zip(&v)
            .map(|(x, y)| (x - rayleigh * y).abs())
            .fold(0.0, f64::max);
        if resid <= POWER_TOL * norm_inf(&av) {
            return rayleigh.clamp(lo, hi);
        }
        let next: Vec<f64> = av.iter().zip(&v).map(|(x, y)| x + y).collect();
        let scale = norm_inf(&next);
        v = next.into_iter().map(|x| x / scale).collect();
    }
    gelfand_radius(a).clamp(lo_last, hi_last)
}

const GELFAND_SQUARINGS: i32 = 60;

/// `lim ||A^(2^s)||^(2^-s)`, rescaling before every squaring.
fn gelfand_radius(a: &Matrix) -> f64 {
    let mut b = a.clone();
    let mut log_scale = 0.0f64;
    for _ in 0..GELFAND_SQUARINGS {
        let nrm = b.norm_one();
        if nrm == 0.0 {
            return 0.0;
        }
        for i in 0..b.rows() {
            for j in 0..b.cols() {
                b[(i, j)] /= nrm;
            }
        }
        log_scale = 2.0 * (log_scale + nrm.ln());
        b = b.matmul(&b);
    }
    let nrm = b.norm_one();
    if nrm == 0.0 {
        return 0.0;
    }
    ((log_scale + nrm.ln()) / 2f64.powi(GELFAND_SQUARINGS)).exp()
}

/// Equilibrium slopes and the source responses they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumD {
    /// `d[k][i]`: buyer `k`'s slope toward source `i`.
    pub d: Vec<Vec<f64>>,
    pub d_total: Vec<f64>,
    pub efforts: Vec<f64>,
    pub variances: Vec<f64>,
}

impl EquilibriumD {
    /// Derives totals, efforts and variances from a slope table.
    pub fn from_slopes(d: Vec<Vec<f64>>, m: &MarketInstance) -> Result<Self> {
        let n = m.n_sources();
        let d_total: Vec<f64> = (0..n).map(|i| d.iter().map(|row| row[i]).sum()).collect();
        let efforts = d_total
            .iter()
            .zip(&m.sources)
            .map(|(&t, s)| effort_from_d_total(t, s.alpha))
            .collect::<Result<Vec<_>>>()?;
        let variances = d_total
            .iter()
            .zip(&m.sources)
            .map(|(&t, s)| variance_from_d_total(t, s.alpha))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            d,
            d_total,
            efforts,
            variances,
        })
    }
}

/// Solves `(I - A) d = gamma` directly, or reports that no nonnegative
/// solution exists.
pub fn solve_equilibrium_d(sys: &CouplingSystem, m: &MarketInstance) -> Result<EquilibriumD> {
    if !sys.is_solvable() {
        return Err(MarketError::NoEquilibrium { rho: sys.rho });
    }
    let b = {
        let mut b = Matrix::identity(sys.dim());
        for i in 0..sys.dim() {
            for j in 0..sys.dim() {
                b[(i, j)] -= sys.a[(i, j)];
            }
        }
        b
    };
    let mut d = b
        .solve(&sys.gamma)
        .ok_or_else(|| MarketError::Numeric("I - A is singular".into()))?;
    let residual = sys.residual(&d);
    if !(residual <= RESIDUAL_TOL) {
        return Err(MarketError::Numeric(format!(
            "fixed-point residual {residual:.3e} exceeds {RESIDUAL_TOL:e}"
        )));
    }
    let floor = -NEGATIVE_CLAMP * (1.0 + norm_inf(&d));
    if let Some(idx) = d.iter().position(|&x| x < floor) {
        let (k, q) = sys.pair(idx);
        return Err(MarketError::Numeric(format!(
            "negative slope d[buyer {k}][source {q}] = {:e}",
            d[idx]
        )));
    }
    d.iter_mut().for_each(|x| *x = x.max(0.0));
    EquilibriumD::from_slopes(sys.unstack(&d), m)
}

/// Feasible intercepts for a fixed slope profile: `sum_k c[k][i] = equality[i]`
/// and `c[k][i] >= lower[k][i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CPolytope {
    pub equality: Vec<f64>,
    pub lower: Vec<Vec<f64>>,
    /// `penalty[k][i] = sum_l xi[k][i][l] sigma_l^2`, the expected squared
    /// residual buyer `k` charges source `i` per unit slope.
    pub penalty: Vec<Vec<f64>>,
}

impl CPolytope {
    /// `equality[i] - sum_k lower[k][i]`; equals the source's effort.
    pub fn slack(&self, source: usize) -> f64 {
        self.equality[source] - self.lower.iter().map(|row| row[source]).sum::<f64>()
    }

    pub fn contains(&self, c: &[Vec<f64>], tol: f64) -> bool {
        (0..self.equality.len()).all(|i| {
            let total: f64 = c.iter().map(|row| row[i]).sum();
            (total - self.equality[i]).abs() <= tol * (1.0 + self.equality[i].abs())
                && c.iter()
                    .zip(&self.lower)
                    .all(|(cr, lr)| cr[i] >= lr[i] - tol)
        })
    }
}

/// Expected squared residual `sum_l xi[k][i][l] sigma_l^2` for every pair.
pub fn expected_penalties(w: &SeparableWeights, variances: &[f64]) -> Vec<Vec<f64>> {
    w.xi.iter()
        .map(|per_buyer| {
            per_buyer
                .iter()
                .map(|row| row.iter().zip(variances).map(|(x, v)| x * v).sum())
                .collect()
        })
        .collect()
}

pub fn c_polytope(sol: &EquilibriumD, w: &SeparableWeights, _m: &MarketInstance) -> Result<CPolytope> {
    let penalty = expected_penalties(w, &sol.variances);
    let lower: Vec<Vec<f64>> = sol
        .d
        .iter()
        .zip(&penalty)
        .map(|(dr, pr)| dr.iter().zip(pr).map(|(d, p)| d * p).collect())
        .collect();
    let equality: Vec<f64> = (0..sol.efforts.len())
        .map(|i| lower.iter().map(|row| row[i]).sum::<f64>() + sol.efforts[i])
        .collect();
    let poly = CPolytope {
        equality,
        lower,
        penalty,
    };
    for i in 0..sol.efforts.len() {
        let slack = poly.slack(i);
        if slack < -POLYTOPE_TOL {
            return Err(MarketError::InfeasibleC { source_index: i, slack });
        }
    }
    Ok(poly)
}

/// Each buyer covers its own expected penalty plus a share of the source's
/// effort proportional to its slope.
pub fn canonical_c(poly: &CPolytope, sol: &EquilibriumD) -> Vec<Vec<f64>> {
    let nb = sol.d.len();
    sol.d
        .iter()
        .zip(&poly.lower)
        .map(|(dr, lr)| {
            dr.iter()
                .zip(lr)
                .enumerate()
                .map(|(i, (&d, &l))| {
                    let share = if sol.d_total[i] > 0.0 {
                        d / sol.d_total[i]
                    } else {
                        1.0 / nb as f64
                    };
                    l + share * poly.slack(i)
                })
                .collect()
        })
        .collect()
}

/// A generalized Nash equilibrium with one representative intercept choice.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSolution {
    pub d: Vec<Vec<f64>>,
    pub d_total: Vec<f64>,
    pub efforts: Vec<f64>,
    pub variances: Vec<f64>,
    pub c_polytope: CPolytope,
    pub c_canonical: Vec<Vec<f64>>,
}

impl EquilibriumSolution {
    /// Completes a slope profile with its polytope and canonical intercepts.
    /// Also used to build deliberately off-equilibrium profiles for testing.
    pub fn from_slopes(d: Vec<Vec<f64>>, w: &SeparableWeights, m: &MarketInstance) -> Result<Self> {
        Self::from_d(EquilibriumD::from_slopes(d, m)?, w, m)
    }

    fn from_d(sol: EquilibriumD, w: &SeparableWeights, m: &MarketInstance) -> Result<Self> {
        let poly = c_polytope(&sol, w, m)?;
        let c = canonical_c(&poly, &sol);
        Ok(Self {
            d: sol.d,
            d_total: sol.d_total,
            efforts: sol.efforts,
            variances: sol.variances,
            c_polytope: poly,
            c_canonical: c,
        })
    }

    pub fn solve(sys: &CouplingSystem, w: &SeparableWeights, m: &MarketInstance) -> Result<Self> {
        Self::from_d(solve_equilibrium_d(sys, m)?, w, m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MarketOutcome {
    Equilibrium {
        weights: SeparableWeights,
        system: CouplingSystem,
        solution: EquilibriumSolution,
    },
    /// `rho(A)` at or above the existence threshold. Existence depends only
    /// on `xi`, so `weights` is `None` when `beta` itself cannot be computed
    /// (e.g. coincident sources).
    NoEquilibrium {
        rho: f64,
        xi: Vec<Vec<Vec<f64>>>,
        weights: Option<SeparableWeights>,
    },
}

/// Validate, reduce, test existence, and solve.
pub fn solve_market(m: &MarketInstance) -> Result<MarketOutcome> {
    let violations = validate_market(m);
    if !violations.is_empty() {
        return Err(MarketError::Invalid(violations));
    }
    let xi = compute_xi(m)?;
    let rho = spectral_radius(&coupling_matrix(&xi));
    if rho >= 1.0 - EXISTENCE_MARGIN {
        return Ok(MarketOutcome::NoEquilibrium {
            rho,
            xi,
            weights: compute_weights(m).ok(),
        });
    }
    let weights = compute_weights(m)?;
    let system = build_coupling_system(&weights, m);
    let solution = EquilibriumSolution::solve(&system, &weights, m)?;
    Ok(MarketOutcome::Equilibrium {
        weights,
        system,
        solution,
    })
}
