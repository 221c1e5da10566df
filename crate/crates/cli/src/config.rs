//! JSON market configurations.

use std::path::Path;

use datamarket_core::{
    DataBuyer, DataSource, EstimatorSpec, FeatureDomain, MarketInstance, ValueDistribution,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfigFile {
    pub sources: Vec<SourceConfig>,
    pub buyers: Vec<BuyerConfig>,
    pub feature_domain: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub x: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuyerConfig {
    pub estimator: EstimatorConfig,
    pub value_dist: DistConfig,
    pub delta: Vec<f64>,
    #[serde(default = "unit_eta")]
    pub eta: f64,
}

fn unit_eta() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EstimatorConfig {
    LinearRegression,
    PolynomialRegression { degree: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "kebab-case")]
pub enum DistConfig {
    Uniform { lo: f64, hi: f64 },
    PointMass { x0: f64 },
    Discrete { points: Vec<f64>, weights: Vec<f64> },
}

impl MarketConfigFile {
    /// Parses JSON; errors carry the JSON path of the offending field.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Input(format!("config field `{path}`: {}", e.inner()))
        })
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self, CliError> {
        serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            CliError::Input(format!("config field `{path}`: {}", e.inner()))
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::from_json(&read_text(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is always serialisable")
    }

    /// Converts and validates.
    pub fn to_market(&self) -> Result<MarketInstance, CliError> {
        Ok(self.to_market_unchecked().validated()?)
    }

    pub fn to_market_unchecked(&self) -> MarketInstance {
        MarketInstance {
            sources: self
                .sources
                .iter()
                .map(|s| DataSource { x: s.x, alpha: s.alpha })
                .collect(),
            buyers: self
                .buyers
                .iter()
                .map(|b| DataBuyer {
                    estimator: match b.estimator {
                        EstimatorConfig::LinearRegression => EstimatorSpec::LinearRegression,
                        EstimatorConfig::PolynomialRegression { degree } => {
                            EstimatorSpec::PolynomialRegression { degree }
                        }
                    },
                    value_dist: match &b.value_dist {
                        DistConfig::Uniform { lo, hi } => ValueDistribution::Uniform { lo: *lo, hi: *hi },
                        DistConfig::PointMass { x0 } => ValueDistribution::PointMass { x0: *x0 },
                        DistConfig::Discrete { points, weights } => ValueDistribution::Discrete {
                            points: points.clone(),
                            weights: weights.clone(),
                        },
                    },
                    delta: b.delta.clone(),
                    eta: b.eta,
                })
                .collect(),
            feature_domain: FeatureDomain {
                lo: self.feature_domain[0],
                hi: self.feature_domain[1],
            },
        }
    }
}

impl From<&MarketInstance> for MarketConfigFile {
    fn from(m: &MarketInstance) -> Self {
        Self {
            sources: m
                .sources
                .iter()
                .map(|s| SourceConfig { x: s.x, alpha: s.alpha })
                .collect(),
            buyers: m
                .buyers
                .iter()
                .map(|b| BuyerConfig {
                    estimator: match b.estimator {
                        EstimatorSpec::LinearRegression => EstimatorConfig::LinearRegression,
                        EstimatorSpec::PolynomialRegression { degree } => {
                            EstimatorConfig::PolynomialRegression { degree }
                        }
                    },
                    value_dist: match &b.value_dist {
                        ValueDistribution::Uniform { lo, hi } => DistConfig::Uniform { lo: *lo, hi: *hi },
                        ValueDistribution::PointMass { x0 } => DistConfig::PointMass { x0: *x0 },
                        ValueDistribution::Discrete { points, weights } => DistConfig::Discrete {
                            points: points.clone(),
                            weights: weights.clone(),
                        },
                    },
                    delta: b.delta.clone(),
                    eta: b.eta,
                })
                .collect(),
            feature_domain: [m.feature_domain.lo, m.feature_domain.hi],
        }
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}
