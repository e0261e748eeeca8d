use std::collections::BTreeMap;

use super::{
    check_dim, constant, names, predict_ode, ExperimentContext, Model, ModelConfig, ModelError, ObsModel, OdeSystem,
    Prediction,
};
use crate::data::Dataset;
use crate::integrate::IntegratorConfig;

/// Closed-population SIR parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SirParams {
    /// Per-capita infection rate.
    pub beta: f64,
    /// Removal rate.
    pub alpha: f64,
    /// Initial infectious count.
    pub i0: u64,
    /// Population size.
    pub n: u64,
}

impl SirParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) || !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(ModelError::Domain(format!(
                "beta and alpha must be finite and >= 0 (beta={}, alpha={})",
                self.beta, self.alpha
            )));
        }
        if self.i0 < 1 || self.i0 > self.n {
            return Err(ModelError::Domain(format!("I0 must lie in [1, N={}], got {}", self.n, self.i0)));
        }
        Ok(())
    }

    /// (S, I, R) at time zero.
    pub fn initial_state(&self) -> [f64; 3] {
        [(self.n - self.i0) as f64, self.i0 as f64, 0.0]
    }
}

/// (dS, dI, dR) = (−βSI, βSI − αI, αI).
pub fn sir_rhs(state: [f64; 3], p: &SirParams) -> [f64; 3] {
    let [s, i, _] = state;
    let infection = p.beta * s * i;
    let removal = p.alpha * i;
    [-infection, infection - removal, removal]
}

#[derive(Debug, Clone)]
pub struct SirModel {
    n: u64,
    states: Vec<String>,
    params: Vec<String>,
    discrete: Vec<String>,
    constants: BTreeMap<String, f64>,
}

impl SirModel {
    pub fn new(cfg: &ModelConfig) -> Result<Self, ModelError> {
        let n = constant(cfg, "N", None)?;
        if !(n >= 1.0) || n.fract() != 0.0 {
            return Err(ModelError::Config(format!("N must be a positive integer, got {n}")));
        }
        Ok(Self {
            n: n as u64,
            states: names(&["S", "I", "R"]),
            params: names(&["beta", "alpha"]),
            discrete: names(&["I0"]),
            constants: cfg.constants.clone(),
        })
    }

    pub fn population(&self) -> u64 {
        self.n
    }

    fn sir_params(&self, params: &[f64]) -> Result<SirParams, ModelError> {
        let i0 = params[2];
        if i0.fract() != 0.0 || !(i0 >= 1.0) {
            return Err(ModelError::Domain(format!("I0 must be a positive integer, got {i0}")));
        }
        let p = SirParams {
            beta: params[0],
            alpha: params[1],
            i0: i0 as u64,
            n: self.n,
        };
        p.validate()?;
        Ok(p)
    }
}

impl OdeSystem for SirModel {
    type Prepared = SirParams;

    fn dim(&self) -> usize {
        3
    }

    fn initial_state(&self, params: &[f64], _ctx: &ExperimentContext) -> Result<Vec<f64>, ModelError> {
        Ok(self.sir_params(params)?.initial_state().to_vec())
    }

    fn prepare(&self, params: &[f64], _ctx: &ExperimentContext) -> Result<SirParams, ModelError> {
        self.sir_params(params)
    }

    fn rhs(&self, p: &SirParams, _t: f64, x: &[f64], dx: &mut [f64]) -> Result<(), ModelError> {
        dx.copy_from_slice(&sir_rhs([x[0], x[1], x[2]], p));
        Ok(())
    }

    fn observe(&self, variable: &str, x: &[f64], _params: &[f64]) -> Result<Prediction, ModelError> {
        let idx = match variable {
            "S" => 0,
            "I" => 1,
            "R" => 2,
            other => return Err(ModelError::Data(format!("unobservable/unknown variable `{other}`"))),
        };
        // Round-off can leave R(0)-adjacent values a hair below zero.
        Ok(Prediction {
            mean: x[idx].max(0.0),
            variance: None,
        })
    }
}

impl Model for SirModel {
    fn name(&self) -> &str {
        "sir"
    }
    fn state_names(&self) -> &[String] {
        &self.states
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
        &self.states
    }
    fn obs_model(&self) -> ObsModel {
        ObsModel::Poisson
    }
    fn positive_params(&self) -> Vec<String> {
        self.params.clone()
    }
    fn predict(&self, params: &[f64], data: &Dataset, integ: &IntegratorConfig) -> Result<Vec<Prediction>, ModelError> {
        check_dim(self, params)?;
        predict_ode(self, &[], params, data, integ)
    }
}
