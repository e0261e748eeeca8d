//! Built-in dynamic systems and observation models.
//!
//! A model maps a full parameter vector (continuous parameters followed by
//! discrete ones, in the order given by [`Model::param_names`] and
//! [`Model::discrete_param_names`]) to a predicted mean (and, for Gaussian
//! observations, a variance) for every row of a [`Dataset`].

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::integrate::{IntegrateError, IntegratorConfig};

mod dow;
mod nylon;
mod sir;
mod testbeds;

pub use dow::{dow_algebraic, dow_rhs, DowModel, DowParams, DowVariant, ALGEBRAIC_TOL};
pub use nylon::{nylon_coefficients, nylon_rhs, NylonCoefficients, NylonModel, NylonParams};
pub use sir::{sir_rhs, SirModel, SirParams};
pub use testbeds::{ConjugateNormal, HarmonicRegression, RatioModel, SumModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("model configuration: {0}")]
    Config(String),
    #[error("parameter vector has length {got}, model expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("parameter outside model domain: {0}")]
    Domain(String),
    #[error("experiment `{experiment}`: {source}")]
    Integration {
        experiment: String,
        #[source]
        source: IntegrateError,
    },
    #[error("algebraic closure failed: {0}")]
    Algebraic(String),
    #[error("invalid data: {0}")]
    Data(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsModel {
    GaussianPerVariable,
    Poisson,
}

/// Predicted distribution of one observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    /// Observation variance; `None` for Poisson observations.
    pub variance: Option<f64>,
}

/// Per-experiment conditions (temperature, catalyst level, initial states...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ExperimentContext {
    pub id: String,
    #[serde(default)]
    pub conditions: BTreeMap<String, f64>,
    /// Names of parameters supplying this experiment's initial conditions.
    #[serde(default)]
    pub init_params: Vec<String>,
}

impl ExperimentContext {
    pub fn condition(&self, name: &str) -> Result<f64, ModelError> {
        self.conditions
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::Config(format!("experiment `{}` is missing condition `{name}`", self.id)))
    }
}

/// Model selection plus fixed constants and experiment conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default)]
    pub constants: BTreeMap<String, f64>,
    #[serde(default)]
    pub experiments: Vec<ExperimentContext>,
}

pub trait Model: Send + Sync + Debug {
    fn name(&self) -> &str;
    fn state_names(&self) -> &[String];
    /// Continuous parameters.
    fn param_names(&self) -> &[String];
    fn discrete_param_names(&self) -> &[String] {
        &[]
    }
    fn constants(&self) -> &BTreeMap<String, f64>;
    /// Variables that may appear in a dataset.
    fn observables(&self) -> &[String];
    fn obs_model(&self) -> ObsModel;
    /// Experiment contexts; empty means any experiment id is accepted.
    fn experiments(&self) -> &[ExperimentContext] {
        &[]
    }
    /// Parameters that must be strictly positive.
    fn positive_params(&self) -> Vec<String> {
        Vec::new()
    }
    /// Predicted observation distribution for every row of `data`, in row order.
    fn predict(&self, params: &[f64], data: &Dataset, integ: &IntegratorConfig) -> Result<Vec<Prediction>, ModelError>;

    fn all_param_names(&self) -> Vec<String> {
        self.param_names()
            .iter()
            .chain(self.discrete_param_names())
            .cloned()
            .collect()
    }

    /// Reject datasets the model cannot score.
    fn validate_data(&self, data: &Dataset) -> Result<(), ModelError> {
        let obs = self.observables();
        let known: Vec<&str> = self.experiments().iter().map(|e| e.id.as_str()).collect();
        for (i, r) in data.rows().iter().enumerate() {
            if !obs.iter().any(|v| v == &r.variable) {
                return Err(ModelError::Data(format!(
                    "row {}: unobservable/unknown variable `{}` for model `{}` (observable: {})",
                    i + 1,
                    r.variable,
                    self.name(),
                    obs.join(", ")
                )));
            }
            if !known.is_empty() && !known.contains(&r.experiment.as_str()) {
                return Err(ModelError::Data(format!(
                    "row {}: unknown experiment `{}`",
                    i + 1,
                    r.experiment
                )));
            }
            if self.obs_model() == ObsModel::Poisson && (r.value < 0.0 || r.value.fract() != 0.0) {
                return Err(ModelError::Data(format!(
                    "row {}: Poisson observations must be nonnegative integers, got {}",
                    i + 1,
                    r.value
                )));
            }
        }
        Ok(())
    }
}

pub type SharedModel = Arc<dyn Model>;

/// Names accepted by [`build_model`].
pub const REGISTRY: &[&str] = &[
    "sir",
    "nylon",
    "dow",
    "dow_structural",
    "conjugate_normal",
    "sum_model",
    "ratio_model",
    "harmonic_regression",
];

pub fn build_model(cfg: &ModelConfig) -> Result<SharedModel, ModelError> {
    Ok(match cfg.name.as_str() {
        "sir" => Arc::new(SirModel::new(cfg)?),
        "nylon" => Arc::new(NylonModel::new(cfg)?),
        "dow" => Arc::new(DowModel::new(cfg, DowVariant::Reduced)?),
        "dow_structural" => Arc::new(DowModel::new(cfg, DowVariant::Structural)?),
        "conjugate_normal" => Arc::new(ConjugateNormal::new(cfg)?),
        "sum_model" => Arc::new(SumModel::new(cfg)?),
        "ratio_model" => Arc::new(RatioModel::new(cfg)?),
        "harmonic_regression" => Arc::new(HarmonicRegression::new(cfg)?),
        other => return Err(ModelError::UnknownModel(other.to_owned())),
    })
}

/// Predicted observation means at a design, e.g. for generating synthetic data.
pub fn simulate(
    model: &dyn Model,
    params: &[f64],
    design: &[(String, f64, String)],
    integ: &IntegratorConfig,
) -> Result<Vec<Prediction>, ModelError> {
    let data = Dataset::from_design(design).map_err(|e| ModelError::Data(e.to_string()))?;
    model.predict(params, &data, integ)
}

pub(crate) fn check_dim(model: &dyn Model, params: &[f64]) -> Result<(), ModelError> {
    let expected = model.param_names().len() + model.discrete_param_names().len();
    if params.len() != expected {
        return Err(ModelError::Dimension {
            expected,
            got: params.len(),
        });
    }
    Ok(())
}

pub(crate) fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| (*s).to_owned()).collect()
}

pub(crate) fn constant(cfg: &ModelConfig, name: &str, default: Option<f64>) -> Result<f64, ModelError> {
    match (cfg.constants.get(name), default) {
        (Some(v), _) => Ok(*v),
        (None, Some(d)) => Ok(d),
        (None, None) => Err(ModelError::Config(format!(
            "model `{}` requires constant `{name}`",
            cfg.name
        ))),
    }
}

/// An ODE system observed through some state map. Implementors get
/// [`predict_ode`] for free.
pub(crate) trait OdeSystem {
    fn dim(&self) -> usize;
    fn initial_state(&self, params: &[f64], ctx: &ExperimentContext) -> Result<Vec<f64>, ModelError>;
    /// Parameter-dependent quantities evaluated once per experiment before
    /// integration.
    type Prepared;
    fn prepare(&self, params: &[f64], ctx: &ExperimentContext) -> Result<Self::Prepared, ModelError>;
    fn rhs(&self, prep: &Self::Prepared, t: f64, x: &[f64], dx: &mut [f64]) -> Result<(), ModelError>;
    fn observe(&self, variable: &str, x: &[f64], params: &[f64]) -> Result<Prediction, ModelError>;
    fn check_state(&self, _x: &[f64]) -> Result<(), ModelError> {
        Ok(())
    }
}

pub(crate) fn predict_ode<S: OdeSystem>(
    sys: &S,
    contexts: &[ExperimentContext],
    params: &[f64],
    data: &Dataset,
    integ: &IntegratorConfig,
) -> Result<Vec<Prediction>, ModelError> {
    let default_ctx = ExperimentContext::default();
    let mut out = vec![
        Prediction {
            mean: f64::NAN,
            variance: None
        };
        data.len()
    ];
    for exp in data.experiments() {
        let ctx = if contexts.is_empty() {
            &default_ctx
        } else {
            contexts
                .iter()
                .find(|c| c.id == exp.id)
                .ok_or_else(|| ModelError::Data(format!("unknown experiment `{}`", exp.id)))?
        };
        let t0 = ctx.conditions.get("t0").copied().unwrap_or(0.0);
        if exp.times[0] < t0 {
            return Err(ModelError::Data(format!(
                "experiment `{}` has observations before t0 = {t0}",
                exp.id
            )));
        }
        let x0 = sys.initial_state(params, ctx)?;
        if x0.len() != sys.dim() {
            return Err(ModelError::Config(format!(
                "initial state has {} components, system has {}",
                x0.len(),
                sys.dim()
            )));
        }
        sys.check_state(&x0)?;
        let prep = sys.prepare(params, ctx)?;
        let field = |t: f64, x: &[f64], dx: &mut [f64]| {
            sys.rhs(&prep, t, x, dx)
                .map_err(|e| IntegrateError::Field { t, msg: e.to_string() })
        };
        let traj = integ
            .integrate(field, &x0, t0, &exp.times)
            .map_err(|source| ModelError::Integration {
                experiment: exp.id.clone(),
                source,
            })?;
        for s in &traj.states {
            sys.check_state(s)?;
        }
        for &(row, ti) in &exp.rows {
            let var = &data.rows()[row].variable;
            out[row] = sys.observe(var, &traj.states[ti], params)?;
        }
    }
    Ok(out)
}
