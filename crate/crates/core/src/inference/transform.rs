use serde::{Deserialize, Serialize};

use super::InferenceError;

/// How one parameter maps into the space the sampler walks in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// Identity map, any real value.
    Unconstrained,
    /// Identity map; non-positive values have zero density.
    Positive,
    /// Sampled on the log scale.
    LogPositive,
}

impl Constraint {
    pub fn requires_positive(self) -> bool {
        !matches!(self, Constraint::Unconstrained)
    }
}

/// Map θ to sampling space. Returns z and log|dθ/dz| (the sum of z over
/// log-transformed components).
pub fn to_sampling_space(theta: &[f64], constraints: &[Constraint]) -> Result<(Vec<f64>, f64), InferenceError> {
    let mut jac = 0.0;
    let z = theta
        .iter()
        .zip(constraints)
        .enumerate()
        .map(|(i, (&x, c))| match c {
            Constraint::Unconstrained => Ok(x),
            Constraint::Positive => {
                if x > 0.0 {
                    Ok(x)
                } else {
                    Err(InferenceError::Domain(format!("component {i} must be > 0, got {x}")))
                }
            }
            Constraint::LogPositive => {
                if x > 0.0 && x.is_finite() {
                    let z = x.ln();
                    jac += z;
                    Ok(z)
                } else {
                    Err(InferenceError::Domain(format!("component {i} must be > 0, got {x}")))
                }
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((z, jac))
}

/// Inverse of [`to_sampling_space`], writing into `theta`; returns the log-Jacobian.
pub fn from_sampling_space_into(z: &[f64], constraints: &[Constraint], theta: &mut [f64]) -> f64 {
    let mut jac = 0.0;
    for ((t, &zi), c) in theta.iter_mut().zip(z).zip(constraints) {
        *t = match c {
            Constraint::LogPositive => {
                jac += zi;
                zi.exp()
            }
            _ => zi,
        };
    }
    jac
}

pub fn from_sampling_space(z: &[f64], constraints: &[Constraint]) -> (Vec<f64>, f64) {
    let mut theta = vec![0.0; z.len()];
    let jac = from_sampling_space_into(z, constraints, &mut theta);
    (theta, jac)
}
