use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::InferenceError;
use crate::statfun::{gamma_ln_pdf, gamma_quantile, normal_ln_pdf};

/// One independent prior marginal. Gamma uses the shape/scale convention
/// (mean = shape·scale, variance = shape·scale²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case", deny_unknown_fields)]
pub enum Marginal {
    Normal { mean: f64, variance: f64 },
    Gamma { shape: f64, scale: f64 },
}

impl Marginal {
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            Marginal::Normal { mean, variance } => {
                if !mean.is_finite() {
                    return Err(format!("normal mean must be finite, got {mean}"));
                }
                if !(variance > 0.0 && variance.is_finite()) {
                    return Err(format!("normal variance must be > 0, got {variance}"));
                }
            }
            Marginal::Gamma { shape, scale } => {
                if !(shape > 0.0 && shape.is_finite()) {
                    return Err(format!("gamma shape must be > 0, got {shape}"));
                }
                if !(scale > 0.0 && scale.is_finite()) {
                    return Err(format!("gamma scale must be > 0, got {scale}"));
                }
            }
        }
        Ok(())
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        match *self {
            Marginal::Normal { mean, variance } => normal_ln_pdf(x, mean, variance),
            Marginal::Gamma { shape, scale } => gamma_ln_pdf(x, shape, scale),
        }
    }

    pub fn median(&self) -> f64 {
        match *self {
            Marginal::Normal { mean, .. } => mean,
            Marginal::Gamma { shape, scale } => {
                scale * gamma_quantile(0.5, shape).expect("validated gamma shape")
            }
        }
    }

    pub fn is_positive_support(&self) -> bool {
        matches!(self, Marginal::Gamma { .. })
    }
}

/// A named set of independent marginals, one per sampled parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSet {
    pub id: String,
    pub params: BTreeMap<String, Marginal>,
}

impl PriorSet {
    /// Check the marginals and order them to match `names`.
    pub fn resolve(&self, names: &[String]) -> Result<ResolvedPrior, InferenceError> {
        if self.id.is_empty() || !self.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(InferenceError::Prior(format!(
                "prior id `{}` must be nonempty and use only [A-Za-z0-9_-]",
                self.id
            )));
        }
        for (name, m) in &self.params {
            if !names.contains(name) {
                return Err(InferenceError::Prior(format!(
                    "prior `{}` names `{name}`, which is not a sampled parameter",
                    self.id
                )));
            }
            m.validate()
                .map_err(|e| InferenceError::Prior(format!("prior `{}`, parameter `{name}`: {e}", self.id)))?;
        }
        let marginals = names
            .iter()
            .map(|n| {
                self.params.get(n).copied().ok_or_else(|| {
                    InferenceError::Prior(format!("prior `{}` has no marginal for parameter `{n}`", self.id))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ResolvedPrior {
            id: self.id.clone(),
            marginals,
        })
    }
}

/// Marginals in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedPrior {
    pub id: String,
    pub marginals: Vec<Marginal>,
}

impl ResolvedPrior {
    /// Sum of marginal log-densities; −∞ outside the support.
    pub fn log_prior(&self, theta: &[f64]) -> f64 {
        debug_assert_eq!(theta.len(), self.marginals.len());
        self.marginals.iter().zip(theta).map(|(m, &x)| m.ln_pdf(x)).sum()
    }

    pub fn median(&self) -> Vec<f64> {
        self.marginals.iter().map(Marginal::median).collect()
    }
}
