//! Market primitives: sources, buyers, and the per-source effort response.

use std::fmt;

use crate::error::{MarketError, Result};

/// Tolerance on the total mass of a discrete value distribution.
pub const DISCRETE_MASS_TOL: f64 = 1e-12;

/// A strategic data source sampling at `x`, with noise standard deviation
/// `exp(-alpha * effort)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataSource {
    pub x: f64,
    pub alpha: f64,
}

/// How a buyer weighs the feature domain when scoring its estimator.
#[derive(Debug, Clone, PartialEq)]
pub enum ValueDistribution {
    Uniform { lo: f64, hi: f64 },
    PointMass { x0: f64 },
    Discrete { points: Vec<f64>, weights: Vec<f64> },
}

impl ValueDistribution {
    /// Raw moment `E[x^p]`, computed in closed form.
    pub fn moment(&self, p: u32) -> f64 {
        match self {
            Self::Uniform { lo, hi } => {
                let q = p as i32 + 1;
                (hi.powi(q) - lo.powi(q)) / (q as f64 * (hi - lo))
            }
            Self::PointMass { x0 } => x0.powi(p as i32),
            Self::Discrete { points, weights } => points
                .iter()
                .zip(weights)
                .map(|(x, w)| w * x.powi(p as i32))
                .sum(),
        }
    }
}

/// Separable estimator family. Both variants fit a monomial basis
/// `[1, x, ..., x^degree]` by least squares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorSpec {
    LinearRegression,
    PolynomialRegression { degree: usize },
}

impl EstimatorSpec {
    pub fn degree(&self) -> usize {
        match self {
            Self::LinearRegression => 1,
            Self::PolynomialRegression { degree } => *degree,
        }
    }

    /// Number of basis functions.
    pub fn basis_len(&self) -> usize {
        self.degree() + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataBuyer {
    pub estimator: EstimatorSpec,
    pub value_dist: ValueDistribution,
    /// Competition weight toward every buyer, indexed by buyer; the entry for
    /// the buyer itself must be zero.
    pub delta: Vec<f64>,
    /// Conversion from payment units to utility units.
    pub eta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureDomain {
    pub lo: f64,
    pub hi: f64,
}

impl FeatureDomain {
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketInstance {
    pub sources: Vec<DataSource>,
    pub buyers: Vec<DataBuyer>,
    pub feature_domain: FeatureDomain,
}

impl MarketInstance {
    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn n_buyers(&self) -> usize {
        self.buyers.len()
    }

    pub fn locations(&self) -> Vec<f64> {
        self.sources.iter().map(|s| s.x).collect()
    }

    /// `delta_j^k`: how much buyer `k` is hurt by buyer `j`'s accuracy.
    pub fn delta(&self, k: usize, j: usize) -> f64 {
        self.buyers[k].delta[j]
    }

    /// Fails with [`MarketError::Invalid`] unless [`validate_market`] is empty.
    pub fn validated(self) -> Result<Self> {
        let v = validate_market(&self);
        if v.is_empty() {
            Ok(self)
        } else {
            Err(MarketError::Invalid(v))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViolationCode {
    NoSources,
    NoBuyers,
    InvalidDomain,
    AlphaNonPositive,
    LocationOutsideDomain,
    NonFinite,
    InsufficientSources,
    DegreeZero,
    UniformBounds,
    DiscreteWeights,
    DeltaLength,
    DeltaOutOfRange,
    DeltaSelfNonZero,
    DeltaAsymmetry,
    EtaNonPositive,
}

impl ViolationCode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::NoSources => "no-sources",
            Self::NoBuyers => "no-buyers",
            Self::InvalidDomain => "invalid-domain",
            Self::AlphaNonPositive => "alpha-nonpositive",
            Self::LocationOutsideDomain => "location-outside-domain",
            Self::NonFinite => "non-finite",
            Self::InsufficientSources => "insufficient-sources",
            Self::DegreeZero => "degree-zero",
            Self::UniformBounds => "uniform-bounds",
            Self::DiscreteWeights => "discrete-weights",
            Self::DeltaLength => "delta-length",
            Self::DeltaOutOfRange => "delta-out-of-range",
            Self::DeltaSelfNonZero => "delta-self-nonzero",
            Self::DeltaAsymmetry => "delta-asymmetry",
            Self::EtaNonPositive => "eta-nonpositive",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub code: ViolationCode,
    /// Field path in configuration notation, e.g. `sources[0].alpha`.
    pub field: String,
    pub message: String,
}

impl Violation {
    fn new(code: ViolationCode, field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            code,
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", self.code, self.field, self.message)
    }
}

/// Checks every market invariant and reports all violations in a fixed
/// order (domain, sources, buyers, then pairwise delta symmetry).
pub fn validate_market(m: &MarketInstance) -> Vec<Violation> {
    use ViolationCode::*;
    let mut out = Vec::new();
    let n = m.sources.len();
    let nb = m.buyers.len();

    if n == 0 {
        out.push(Violation::new(NoSources, "sources", "at least one source is required"));
    }
    if nb == 0 {
        out.push(Violation::new(NoBuyers, "buyers", "at least one buyer is required"));
    }
    let dom = m.feature_domain;
    if !(dom.lo.is_finite() && dom.hi.is_finite() && dom.lo < dom.hi) {
        out.push(Violation::new(
            InvalidDomain,
            "feature_domain",
            format!("need finite lo < hi, got [{}, {}]", dom.lo, dom.hi),
        ));
    }

    for (i, s) in m.sources.iter().enumerate() {
        if !s.x.is_finite() {
            out.push(Violation::new(NonFinite, format!("sources[{i}].x"), "x must be finite"));
        } else if !dom.contains(s.x) {
            out.push(Violation::new(
                LocationOutsideDomain,
                format!("sources[{i}].x"),
                format!("x={} outside [{}, {}]", s.x, dom.lo, dom.hi),
            ));
        }
        if !(s.alpha > 0.0 && s.alpha.is_finite()) {
            out.push(Violation::new(
                AlphaNonPositive,
                format!("sources[{i}].alpha"),
                format!("alpha must be positive and finite, got {}", s.alpha),
            ));
        }
    }

    for (k, b) in m.buyers.iter().enumerate() {
        let degree = b.estimator.degree();
        if degree == 0 {
            out.push(Violation::new(
                DegreeZero,
                format!("buyers[{k}].estimator.degree"),
                "degree must be at least 1",
            ));
        }
        if n < degree + 1 {
            out.push(Violation::new(
                InsufficientSources,
                format!("buyers[{k}].estimator"),
                format!("degree {degree} needs {} sources, market has {n}", degree + 1),
            ));
        }
        match &b.value_dist {
            ValueDistribution::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    out.push(Violation::new(
                        UniformBounds,
                        format!("buyers[{k}].value_dist"),
                        format!("uniform needs lo < hi, got [{lo}, {hi}]"),
                    ));
                }
            }
            ValueDistribution::PointMass { x0 } => {
                if !x0.is_finite() {
                    out.push(Violation::new(
                        NonFinite,
                        format!("buyers[{k}].value_dist"),
                        "point mass location must be finite",
                    ));
                }
            }
            ValueDistribution::Discrete { points, weights } => {
                let total: f64 = weights.iter().sum();
                if points.is_empty()
                    || points.len() != weights.len()
                    || weights.iter().any(|w| !(*w >= 0.0))
                    || points.iter().any(|p| !p.is_finite())
                    || (total - 1.0).abs() > DISCRETE_MASS_TOL
                {
                    out.push(Violation::new(
                        DiscreteWeights,
                        format!("buyers[{k}].value_dist"),
                        format!(
                            "discrete needs matching nonempty points/weights, weights >= 0 summing to 1 (sum={total})"
                        ),
                    ));
                }
            }
        }
        if b.delta.len() != nb {
            out.push(Violation::new(
                DeltaLength,
                format!("buyers[{k}].delta"),
                format!("expected {nb} entries, got {}", b.delta.len()),
            ));
        } else {
            for (j, d) in b.delta.iter().enumerate() {
                if j == k {
                    if *d != 0.0 {
                        out.push(Violation::new(
                            DeltaSelfNonZero,
                            format!("buyers[{k}].delta[{j}]"),
                            format!("self-competition weight must be 0, got {d}"),
                        ));
                    }
                } else if !(0.0..=1.0).contains(d) {
                    out.push(Violation::new(
                        DeltaOutOfRange,
                        format!("buyers[{k}].delta[{j}]"),
                        format!("delta must lie in [0, 1], got {d}"),
                    ));
                }
            }
        }
        if !(b.eta > 0.0 && b.eta.is_finite()) {
            out.push(Violation::new(
                EtaNonPositive,
                format!("buyers[{k}].eta"),
                format!("eta must be positive and finite, got {}", b.eta),
            ));
        }
    }

    let lengths_ok = m.buyers.iter().all(|b| b.delta.len() == nb);
    if lengths_ok {
        for k in 0..nb {
            for j in k + 1..nb {
                let (a, b) = (m.buyers[k].delta[j], m.buyers[j].delta[k]);
                if a != b {
                    out.push(Violation::new(
                        DeltaAsymmetry,
                        format!("buyers[{k}].delta[{j}]"),
                        format!("buyers[{k}].delta[{j}]={a} but buyers[{j}].delta[{k}]={b}"),
                    ));
                }
            }
        }
    }
    out
}

/// Two sources at `x1` and `1` (alpha = 1) and two identical linear-regression
/// buyers valuing the uniform distribution on `[-1, 1]`, with no direct
/// competition (`delta = 0`) and `eta = 1`.
pub fn two_firm_example(x1: f64) -> MarketInstance {
    let buyer = DataBuyer {
        estimator: EstimatorSpec::LinearRegression,
        value_dist: ValueDistribution::Uniform { lo: -1.0, hi: 1.0 },
        delta: vec![0.0, 0.0],
        eta: 1.0,
    };
    MarketInstance {
        sources: vec![
            DataSource { x: x1, alpha: 1.0 },
            DataSource { x: 1.0, alpha: 1.0 },
        ],
        buyers: vec![buyer.clone(), buyer],
        feature_domain: FeatureDomain { lo: -1.0, hi: 1.0 },
    }
}

fn check_positive(d_total: f64, alpha: f64) -> Result<()> {
    if !(d_total > 0.0) || !d_total.is_finite() {
        return Err(MarketError::Domain(format!(
            "d_total must be positive, got {d_total}"
        )));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(MarketError::Domain(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    Ok(())
}

/// Effort a source selects when its contract slopes sum to `d_total`:
/// `ln(2 d_total alpha) / (2 alpha)`. Negative values are legitimate.
pub fn effort_from_d_total(d_total: f64, alpha: f64) -> Result<f64> {
    check_positive(d_total, alpha)?;
    Ok((2.0 * d_total * alpha).ln() / (2.0 * alpha))
}

/// Noise variance at the selected effort, `1 / (2 d_total alpha)`.
pub fn variance_from_d_total(d_total: f64, alpha: f64) -> Result<f64> {
    check_positive(d_total, alpha)?;
    Ok(1.0 / (2.0 * d_total * alpha))
}
