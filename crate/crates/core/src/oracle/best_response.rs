//! Grid search over one buyer's own contracts, holding rivals fixed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::equilibrium::{expected_penalties, EquilibriumSolution};
use crate::error::Result;
use crate::estimators::SeparableWeights;
use crate::market::{effort_from_d_total, variance_from_d_total, MarketInstance};

/// Certification tolerance is `CERT_TOL * (1 + |equilibrium cost|)`.
pub const CERT_TOL: f64 = 1e-6;

const GRID_SEED: u64 = 0x5eed_b0a7_d15c_0de5;

/// Multiplicative search box `d * [1 - radius, 1 + radius]` per coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrGrid {
    pub radius: f64,
    pub steps: usize,
}

impl Default for BrGrid {
    fn default() -> Self {
        Self {
            radius: 0.5,
            steps: 41,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestResponseReport {
    pub buyer: usize,
    pub equilibrium_cost: f64,
    pub best_cost: f64,
    /// `equilibrium_cost - best_cost`; positive means a profitable deviation.
    pub max_improvement: f64,
    /// Buyer's slopes at the best grid point.
    pub argmin_d: Vec<f64>,
    pub evaluations: usize,
}

impl BestResponseReport {
    pub fn tolerance(&self) -> f64 {
        CERT_TOL * (1.0 + self.equilibrium_cost.abs())
    }

    pub fn certified(&self) -> bool {
        self.max_improvement <= self.tolerance()
    }
}

fn induced_variances(d: &[Vec<f64>], m: &MarketInstance) -> Result<Vec<f64>> {
    (0..m.n_sources())
        .map(|i| variance_from_d_total(d.iter().map(|r| r[i]).sum(), m.sources[i].alpha))
        .collect()
}

/// Buyer `k`'s expected cost: its competition-adjusted estimation loss plus
/// its expected payments, at the efforts the slopes `d` induce, in the
/// buyer's own utility units (`eta^k` times the normalised cost).
pub fn eval_buyer_cost(
    k: usize,
    c: &[Vec<f64>],
    d: &[Vec<f64>],
    w: &SeparableWeights,
    m: &MarketInstance,
) -> Result<f64> {
    let variances = induced_variances(d, m)?;
    let penalty = expected_penalties(w, &variances);
    let loss: f64 = w.gamma[k].iter().zip(&variances).map(|(g, v)| g * v).sum();
    let payments: f64 = (0..m.n_sources())
        .map(|i| c[k][i] - d[k][i] * penalty[k][i])
        .sum();
    Ok(m.buyers[k].eta * (loss + payments))
}

/// Cheapest intercepts for buyer `k` given everyone's slopes and the rivals'
/// intercepts: the source's total participation constraint binds unless the
/// buyer's own single-contract constraint is tighter.
pub fn tight_intercepts(
    k: usize,
    c: &[Vec<f64>],
    d: &[Vec<f64>],
    w: &SeparableWeights,
    m: &MarketInstance,
) -> Result<Vec<f64>> {
    let variances = induced_variances(d, m)?;
    let penalty = expected_penalties(w, &variances);
    (0..m.n_sources())
        .map(|i| {
            let total_d: f64 = d.iter().map(|r| r[i]).sum();
            let effort = effort_from_d_total(total_d, m.sources[i].alpha)?;
            let owed: f64 = (0..m.n_buyers()).map(|j| d[j][i] * penalty[j][i]).sum();
            let rivals: f64 = (0..m.n_buyers()).filter(|&j| j != k).map(|j| c[j][i]).sum();
            Ok((owed + effort - rivals).max(d[k][i] * penalty[k][i]))
        })
        .collect()
}

fn cost_at(
    k: usize,
    slopes: &[f64],
    base_c: &[Vec<f64>],
    base_d: &[Vec<f64>],
    w: &SeparableWeights,
    m: &MarketInstance,
) -> Option<f64> {
    let mut d = base_d.to_vec();
    d[k] = slopes.to_vec();
    let mut c = base_c.to_vec();
    c[k] = tight_intercepts(k, &c, &d, w, m).ok()?;
    eval_buyer_cost(k, &c, &d, w, m).ok()
}

fn axis_values(center: f64, grid: &BrGrid) -> Vec<f64> {
    let (lo, hi) = if center > 0.0 {
        (center * (1.0 - grid.radius), center * (1.0 + grid.radius))
    } else {
        (0.0, grid.radius)
    };
    let steps = grid.steps.max(2);
    (0..steps)
        .map(|s| lo + (hi - lo) * s as f64 / (steps - 1) as f64)
        .map(|v| v.max(0.0))
        .collect()
}

fn axis_spacing(center: f64, grid: &BrGrid) -> f64 {
    let width = if center > 0.0 { 2.0 * center * grid.radius } else { grid.radius };
    width / (grid.steps.max(2) - 1) as f64
}

const REFINE_SWEEPS: usize = 8;
const GOLDEN_ITERS: usize = 80;

const MAX_EXPANSIONS: usize = 40;

/// Interval around a local minimum of `f` on `[0, inf)`, found by stepping
/// downhill from `x0` with doubling steps. Returns the interval and the
/// number of evaluations used.
fn downhill_bracket<F: FnMut(f64) -> f64>(f: &mut F, x0: f64, f0: f64, step: f64) -> (f64, f64, usize) {
    let mut used = 1;
    let up = f(x0 + step);
    let dir = if up < f0 { 1.0 } else { -1.0 };
    let (mut prev, mut cur, mut f_cur) = (x0, x0, f0);
    let mut h = step;
    for _ in 0..MAX_EXPANSIONS {
        let next = (cur + dir * h).max(0.0);
        let f_next = if dir > 0.0 && h == step { up } else { f(next) };
        used += 1;
        if f_next >= f_cur || next == cur {
            let (a, b) = if dir > 0.0 { (prev, next) } else { (next, prev) };
            return (a.max(0.0), b, used);
        }
        prev = cur;
        cur = next;
        f_cur = f_next;
        h *= 2.0;
    }
    let (a, b) = if dir > 0.0 { (prev, cur + h) } else { ((cur - h).max(0.0), prev) };
    (a, b, used)
}

/// Minimiser of a unimodal `f` on `[lo, hi]`.
fn golden_section<F: FnMut(f64) -> f64>(f: &mut F, mut lo: f64, mut hi: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut a = hi - r * (hi - lo);
    let mut b = lo + r * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..GOLDEN_ITERS {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - r * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + r * (hi - lo);
            fb = f(b);
        }
    }
    if fa <= fb { a } else { b }
}

/// Searches buyer `k`'s slopes on axis-aligned lines through the current
/// profile plus `steps^2` seeded joint perturbations, then polishes the best
/// point by golden-section search along each axis. The buyer's intercepts
/// are re-tightened at every candidate.
pub fn best_response_check(
    sol: &EquilibriumSolution,
    k: usize,
    w: &SeparableWeights,
    m: &MarketInstance,
    grid: BrGrid,
) -> Result<BestResponseReport> {
    let equilibrium_cost = eval_buyer_cost(k, &sol.c_canonical, &sol.d, w, m)?;
    let own = sol.d[k].clone();
    let mut best_cost = equilibrium_cost;
    let mut argmin = own.clone();
    let mut evaluations = 0usize;
    let mut consider = |slopes: Vec<f64>, best_cost: &mut f64, argmin: &mut Vec<f64>| {
        evaluations += 1;
        if let Some(cost) = cost_at(k, &slopes, &sol.c_canonical, &sol.d, w, m) {
            if cost < *best_cost {
                *best_cost = cost;
                *argmin = slopes;
            }
        }
    };

    for q in 0..own.len() {
        for v in axis_values(own[q], &grid) {
            let mut s = own.clone();
            s[q] = v;
            consider(s, &mut best_cost, &mut argmin);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(GRID_SEED ^ k as u64);
    for _ in 0..grid.steps * grid.steps {
        let s: Vec<f64> = own
            .iter()
            .map(|&v| {
                let t: f64 = rng.gen_range(-1.0..=1.0);
                if v > 0.0 {
                    v * (1.0 + grid.radius * t)
                } else {
                    grid.radius * t.abs()
                }
            })
            .collect();
        consider(s, &mut best_cost, &mut argmin);
    }

    // Coordinate descent, started from the incumbent profile and from the best
    // grid point: bracket downhill from the current value, then golden-section
    // search inside the bracket, so optima between grid points are found.
    for start in [own.clone(), argmin.clone()] {
        let mut point = start;
        let mut point_cost = cost_at(k, &point, &sol.c_canonical, &sol.d, w, m).unwrap_or(f64::INFINITY);
        for _ in 0..REFINE_SWEEPS {
            for q in 0..own.len() {
                let mut at = |v: f64| {
                    let mut s = point.clone();
                    s[q] = v;
                    cost_at(k, &s, &sol.c_canonical, &sol.d, w, m).unwrap_or(f64::INFINITY)
                };
                let (lo, hi, used) = downhill_bracket(&mut at, point[q], point_cost, axis_spacing(own[q], &grid));
                let v = golden_section(&mut at, lo, hi);
                let cost = at(v);
                evaluations += used + GOLDEN_ITERS + 3;
                if cost < point_cost {
                    point_cost = cost;
                    point[q] = v;
                }
            }
        }
        if point_cost < best_cost {
            best_cost = point_cost;
            argmin = point;
        }
    }

    Ok(BestResponseReport {
        buyer: k,
        equilibrium_cost,
        best_cost,
        max_improvement: equilibrium_cost - best_cost,
        argmin_d: argmin,
        evaluations,
    })
}
