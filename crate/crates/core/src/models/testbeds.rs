//! Small models with closed-form likelihood structure, used to check
//! estimability verdicts and sampler behaviour against known answers.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use super::{check_dim, constant, names, predict_ode, ExperimentContext, Model, ModelConfig, ModelError, ObsModel, OdeSystem, Prediction};
use crate::data::Dataset;
use crate::integrate::IntegratorConfig;

fn positive_constant(cfg: &ModelConfig, name: &str, default: f64) -> Result<f64, ModelError> {
    let v = constant(cfg, name, Some(default))?;
    if !(v > 0.0 && v.is_finite()) {
        return Err(ModelError::Config(format!("{name} must be finite and > 0, got {v}")));
    }
    Ok(v)
}

fn unknown_variable(v: &str) -> ModelError {
    ModelError::Data(format!("unobservable/unknown variable `{v}`"))
}

/// y ~ N(θ, σ²) with σ² known.
#[derive(Debug, Clone)]
pub struct ConjugateNormal {
    sigma2: f64,
    vars: Vec<String>,
    params: Vec<String>,
    constants: BTreeMap<String, f64>,
}

impl ConjugateNormal {
    pub fn new(cfg: &ModelConfig) -> Result<Self, ModelError> {
        Ok(Self {
            sigma2: positive_constant(cfg, "sigma2", 1.0)?,
            vars: names(&["y"]),
            params: names(&["theta"]),
            constants: cfg.constants.clone(),
        })
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }
}

impl Model for ConjugateNormal {
    fn name(&self) -> &str {
        "conjugate_normal"
    }
    fn state_names(&self) -> &[String] {
        &self.vars
    }
    fn param_names(&self) -> &[String] {
        &self.params
    }
    fn constants(&self) -> &BTreeMap<String, f64> {
        &self.constants
    }
    fn observables(&self) -> &[String] {
        &self.vars
    }
    fn obs_model(&self) -> ObsModel {
        ObsModel::GaussianPerVariable
    }
    fn predict(&self, params: &[f64], data: &Dataset, _integ: &IntegratorConfig) -> Result<Vec<Prediction>, ModelError> {
        check_dim(self, params)?;
        data.rows()
            .iter()
            .map(|r| match r.variable.as_str() {
                "y" => Ok(Prediction {
                    mean: params[0],
                    variance: Some(self.sigma2),
                }),
                v => Err(unknown_variable(v)),
            })
            .collect()
    }
}

/// y ~ N(a + b, σ²): only the sum is informed by data.
#[derive(Debug, Clone)]
pub struct SumModel {
    sigma2: f64,
    vars: Vec<String>,
    params: Vec<String>,
    constants: BTreeMap<String, f64>,
}

impl SumModel {
    pub fn new(cfg: &ModelConfig) -> Result<Self, ModelError> {
        Ok(Self {
            sigma2: positive_constant(cfg, "sigma2", 1.0)?,
            vars: names(&["y"]),
            params: names(&["a", "b"]),
            constants: cfg.constants.clone(),
        })
    }
}

impl Model for SumModel {
    fn name(&self) -> &str {
        "sum_model"
    }
    fn state_names(&self) -> &[String] {
        &self.vars
    }
    fn param_names(&self) -> &[String] {
        &self.params
    }
    fn constants(&self) -> &BTreeMap<String, f64> {
        &self.constants
    }
    fn observables(&self) -> &[String] {
        &self.vars
    }
    fn obs_model(&self) -> ObsModel {
        ObsModel::GaussianPerVariable
    }
    fn predict(&self, params: &[f64], data: &Dataset, _integ: &IntegratorConfig) -> Result<Vec<Prediction>, ModelError> {
        check_dim(self, params)?;
        data.rows()
            .iter()
            .map(|r| match r.variable.as_str() {
                "y" => Ok(Prediction {
                    mean: params[0] + params[1],
                    variance: Some(self.sigma2),
                }),
                v => Err(unknown_variable(v)),
            })
            .collect()
    }
}

/// x' = −(a/b)·x observed with Gaussian noise; only a/b is informed.
#[derive(Debug, Clone)]
pub struct RatioModel {
    x0: f64,
    sigma2: f64,
    states: Vec<String>,
    params: Vec<String>,
    constants: BTreeMap<String, f64>,
}

impl RatioModel {
    pub fn new(cfg: &ModelConfig) -> Result<Self, ModelError> {
        Ok(Self {
            x0: constant(cfg, "x0", Some(1.0))?,
            sigma2: positive_constant(cfg, "sigma2", 0.01)?,
            states: names(&["y"]),
            params: names(&["a", "b"]),
            constants: cfg.constants.clone(),
        })
    }
}

impl OdeSystem for RatioModel {
    type Prepared = f64;

    fn dim(&self) -> usize {
        1
    }

    fn initial_state(&self, _params: &[f64], _ctx: &ExperimentContext) -> Result<Vec<f64>, ModelError> {
        Ok(vec![self.x0])
    }

    fn prepare(&self, params: &[f64], _ctx: &ExperimentContext) -> Result<f64, ModelError> {
        let (a, b) = (params[0], params[1]);
        if !(a > 0.0 && b > 0.0) {
            return Err(ModelError::Domain(format!("a and b must be > 0 (a={a}, b={b})")));
        }
        let rate = a / b;
        if !rate.is_finite() {
            return Err(ModelError::Domain(format!("a/b is not finite (a={a}, b={b})")));
        }
        Ok(rate)
    }

    fn rhs(&self, rate: &f64, _t: f64, x: &[f64], dx: &mut [f64]) -> Result<(), ModelError> {
        dx[0] = -rate * x[0];
        Ok(())
    }

    fn observe(&self, variable: &str, x: &[f64], _params: &[f64]) -> Result<Prediction, ModelError> {
        match variable {
            "y" => Ok(Prediction {
                mean: x[0],
                variance: Some(self.sigma2),
            }),
            v => Err(unknown_variable(v)),
        }
    }
}

impl Model for RatioModel {
    fn name(&self) -> &str {
        "ratio_model"
    }
    fn state_names(&self) -> &[String] {
        &self.states
    }
    fn param_names(&self) -> &[String] {
        &self.params
    }
    fn constants(&self) -> &BTreeMap<String, f64> {
        &self.constants
    }
    fn observables(&self) -> &[String] {
        &self.states
    }
    fn obs_model(&self) -> ObsModel {
        ObsModel::GaussianPerVariable
    }
    fn positive_params(&self) -> Vec<String> {
        self.params.clone()
    }
    fn predict(&self, params: &[f64], data: &Dataset, integ: &IntegratorConfig) -> Result<Vec<Prediction>, ModelError> {
        check_dim(self, params)?;
        predict_ode(self, &[], params, data, integ)
    }
}

/// y = a + b·cos(2πt/m) + c·sin(2πt/m) + N(0, σ²), with integer period m.
/// Over whole periods the three regressors are orthogonal, so the Fisher
/// information is diagonal.
#[derive(Debug, Clone)]
pub struct HarmonicRegression {
    sigma2: f64,
    vars: Vec<String>,
    params: Vec<String>,
    discrete: Vec<String>,
    constants: BTreeMap<String, f64>,
}

impl HarmonicRegression {
    pub fn new(cfg: &ModelConfig) -> Result<Self, ModelError> {
        Ok(Self {
            sigma2: positive_constant(cfg, "sigma2", 1.0)?,
            vars: names(&["y"]),
            params: names(&["a", "b", "c"]),
            discrete: names(&["m"]),
            constants: cfg.constants.clone(),
        })
    }

    pub fn mean(params: &[f64], t: f64) -> f64 {
        let w = 2.0 * PI * t / params[3];
        params[0] + params[1] * w.cos() + params[2] * w.sin()
    }
}

impl Model for HarmonicRegression {
    fn name(&self) -> &str {
        "harmonic_regression"
    }
    fn state_names(&self) -> &[String] {
        &self.vars
    }
    fn param_names(&self) -> &[String] {
        &self.params
    }
    fn discrete_param_names(&self) -> &[String] {
        &self.discrete
    }
    fn constants(&self) -> &BTreeMap<String, f64> {
        &self.constants
    }
    fn observables(&self) -> &[String] {
        &self.vars
    }
    fn obs_model(&self) -> ObsModel {
        ObsModel::GaussianPerVariable
    }
    fn predict(&self, params: &[f64], data: &Dataset, _integ: &IntegratorConfig) -> Result<Vec<Prediction>, ModelError> {
        check_dim(self, params)?;
        let m = params[3];
        if !(m >= 1.0) || m.fract() != 0.0 {
            return Err(ModelError::Domain(format!("period m must be a positive integer, got {m}")));
        }
        data.rows()
            .iter()
            .map(|r| match r.variable.as_str() {
                "y" => Ok(Prediction {
                    mean: Self::mean(params, r.time),
                    variance: Some(self.sigma2),
                }),
                v => Err(unknown_variable(v)),
            })
            .collect()
    }
}
