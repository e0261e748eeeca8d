use std::collections::BTreeMap;
use std::sync::Arc;

use super::prior::{PriorSet, ResolvedPrior};
use super::transform::{from_sampling_space_into, Constraint};
use super::InferenceError;
use crate::data::Dataset;
use crate::integrate::IntegratorConfig;
use crate::models::{Model, ObsModel, SharedModel};
use crate::statfun::{normal_ln_pdf, poisson_ln_pmf};

/// Log-likelihood of `data` at the full parameter vector. Integration
/// failures and domain violations give −∞ (logged at debug level).
pub fn log_obs_likelihood(model: &dyn Model, data: &Dataset, theta: &[f64], integ: &IntegratorConfig) -> f64 {
    let preds = match model.predict(theta, data, integ) {
        Ok(p) => p,
        Err(e) => {
            log::debug!("likelihood is -inf at {theta:?}: {e}");
            return f64::NEG_INFINITY;
        }
    };
    let poisson = model.obs_model() == ObsModel::Poisson;
    let mut total = 0.0;
    for (obs, pred) in data.rows().iter().zip(&preds) {
        if !pred.mean.is_finite() {
            return f64::NEG_INFINITY;
        }
        total += if poisson {
            poisson_ln_pmf(obs.value, pred.mean)
        } else {
            match pred.variance {
                Some(v) => normal_ln_pdf(obs.value, pred.mean, v),
                None => return f64::NEG_INFINITY,
            }
        };
        if total == f64::NEG_INFINITY {
            return total;
        }
    }
    if total.is_nan() {
        f64::NEG_INFINITY
    } else {
        total
    }
}

/// The K-cloned posterior kernel [L(θ)]^K π(θ) over the free parameters
/// (model parameters not listed in `fixed`).
#[derive(Debug, Clone)]
pub struct ClonedTarget {
    model: SharedModel,
    data: Arc<Dataset>,
    prior: ResolvedPrior,
    k: u64,
    integ: IntegratorConfig,
    free_names: Vec<String>,
    free_index: Vec<usize>,
    template: Vec<f64>,
    constraints: Vec<Constraint>,
}

impl ClonedTarget {
    /// `constraints` overrides the default per-parameter mapping (log scale
    /// for parameters the model declares positive or that carry a gamma prior).
    pub fn new(
        model: SharedModel,
        data: Arc<Dataset>,
        prior: &PriorSet,
        k: u64,
        fixed: &BTreeMap<String, f64>,
        constraints: &BTreeMap<String, Constraint>,
        integ: IntegratorConfig,
    ) -> Result<Self, InferenceError> {
        if k == 0 {
            return Err(InferenceError::Config("clone count K must be >= 1".into()));
        }
        let all = model.all_param_names();
        for name in fixed.keys() {
            if !all.contains(name) {
                return Err(InferenceError::Config(format!(
                    "fixed parameter `{name}` is not a parameter of model `{}`",
                    model.name()
                )));
            }
        }
        for name in constraints.keys() {
            if !all.contains(name) {
                return Err(InferenceError::Config(format!("constraint names unknown parameter `{name}`")));
            }
        }
        for d in model.discrete_param_names() {
            if !fixed.contains_key(d) {
                return Err(InferenceError::Config(format!(
                    "discrete parameter `{d}` must be fixed (profile it instead of sampling it)"
                )));
            }
        }
        let mut template = vec![0.0; all.len()];
        let mut free_names = Vec::new();
        let mut free_index = Vec::new();
        for (i, name) in all.iter().enumerate() {
            match fixed.get(name) {
                Some(&v) => template[i] = v,
                None => {
                    free_names.push(name.clone());
                    free_index.push(i);
                }
            }
        }
        if free_names.is_empty() {
            return Err(InferenceError::Config("no free parameters left to sample".into()));
        }
        let prior = prior.resolve(&free_names)?;
        let positive = model.positive_params();
        let constraints = free_names
            .iter()
            .zip(&prior.marginals)
            .map(|(n, m)| {
                constraints.get(n).copied().unwrap_or(if positive.contains(n) || m.is_positive_support() {
                    Constraint::LogPositive
                } else {
                    Constraint::Unconstrained
                })
            })
            .collect();
        Ok(Self {
            model,
            data,
            prior,
            k,
            integ,
            free_names,
            free_index,
            template,
            constraints,
        })
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn prior_id(&self) -> &str {
        &self.prior.id
    }

    pub fn prior(&self) -> &ResolvedPrior {
        &self.prior
    }

    pub fn model(&self) -> &SharedModel {
        &self.model
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    /// Names of the sampled parameters, in sampler order.
    pub fn param_names(&self) -> &[String] {
        &self.free_names
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    /// Free parameters plus fixed values, in the model's full order.
    pub fn full_params(&self, theta: &[f64]) -> Vec<f64> {
        let mut full = self.template.clone();
        for (&i, &v) in self.free_index.iter().zip(theta) {
            full[i] = v;
        }
        full
    }

    /// Uncloned log-likelihood.
    pub fn log_likelihood(&self, theta: &[f64]) -> f64 {
        log_obs_likelihood(self.model.as_ref(), &self.data, &self.full_params(theta), &self.integ)
    }

    pub fn log_prior(&self, theta: &[f64]) -> f64 {
        let mut lp = self.prior.log_prior(theta);
        for (c, &x) in self.constraints.iter().zip(theta) {
            if c.requires_positive() && !(x > 0.0) {
                lp = f64::NEG_INFINITY;
            }
        }
        lp
    }

    /// K·logL + log π, unnormalized.
    pub fn log_posterior(&self, theta: &[f64]) -> f64 {
        let lp = self.log_prior(theta);
        if lp == f64::NEG_INFINITY || lp.is_nan() {
            return f64::NEG_INFINITY;
        }
        let ll = self.log_likelihood(theta);
        if ll == f64::NEG_INFINITY {
            return ll;
        }
        self.k as f64 * ll + lp
    }

    /// Target density in sampling space, including the Jacobian. `theta` is scratch.
    pub fn log_density_z(&self, z: &[f64], theta: &mut [f64]) -> f64 {
        let jac = from_sampling_space_into(z, &self.constraints, theta);
        let lp = self.log_posterior(theta);
        if lp == f64::NEG_INFINITY {
            lp
        } else {
            lp + jac
        }
    }

    /// Starting point: the prior median of each free parameter.
    pub fn prior_median(&self) -> Vec<f64> {
        self.prior.median()
    }
}
