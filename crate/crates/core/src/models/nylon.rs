//! Melt-phase nylon polymerization: amine (A) and carboxyl (C) end groups
//! forming links (L) and water (W), with steam-driven water removal.

use std::collections::BTreeMap;

use super::{check_dim, names, predict_ode, ExperimentContext, Model, ModelConfig, ModelError, ObsModel, OdeSystem, Prediction};
use crate::data::Dataset;
use crate::integrate::IntegratorConfig;

const GAS_CONSTANT: f64 = 8.3145e-3;
const REFERENCE_TEMPERATURE: f64 = 549.15;
const MASS_TRANSFER: f64 = 24.3;

const KINETIC: [&str; 8] = ["kp0", "E", "alpha", "beta", "Ka0", "H", "sigmaA2", "sigmaC2"];

#[derive(Debug, Clone, PartialEq)]
pub struct NylonParams {
    pub kp0: f64,
    pub e: f64,
    pub alpha: f64,
    pub beta: f64,
    pub ka0: f64,
    pub h: f64,
    pub sigma_a2: f64,
    pub sigma_c2: f64,
}

impl NylonParams {
    fn from_slice(p: &[f64]) -> Self {
        Self {
            kp0: p[0],
            e: p[1],
            alpha: p[2],
            beta: p[3],
            ka0: p[4],
            h: p[5],
            sigma_a2: p[6],
            sigma_c2: p[7],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NylonCoefficients {
    pub kp: f64,
    pub ka: f64,
    pub g: f64,
}

/// Rate constant kp, equilibrium constant Ka and the water-dependence
/// factor g(α, β, T) at temperature `t`.
pub fn nylon_coefficients(p: &NylonParams, t: f64, weq: f64) -> Result<NylonCoefficients, ModelError> {
    if !(t > 0.0) {
        return Err(ModelError::Domain(format!("temperature must be > 0, got {t}")));
    }
    let bracket = 1.0 / t - 1.0 / REFERENCE_TEMPERATURE;
    let kp = p.kp0 * 1e-3 * (-p.e / GAS_CONSTANT * bracket).exp();
    let g = (p.alpha + 1e3 * p.beta / t).exp();
    let denom = (9.624 - 3613.0 / t).exp() * (p.h / GAS_CONSTANT * bracket).exp();
    let ka = 20.97 * (1.0 + g * weq) * p.ka0 / denom;
    if !kp.is_finite() || !g.is_finite() || !ka.is_finite() {
        return Err(ModelError::Domain(format!(
            "overflow in rate coefficients (kp={kp}, g={g}, Ka={ka})"
        )));
    }
    if ka == 0.0 {
        return Err(ModelError::Domain("equilibrium constant Ka is zero".into()));
    }
    Ok(NylonCoefficients { kp, ka, g })
}

fn rates(x: &[f64], c: &NylonCoefficients, weq: f64) -> [f64; 4] {
    let [l, a, cc, w] = [x[0], x[1], x[2], x[3]];
    let net = c.kp * (cc * a - l * w / c.ka);
    // dL/dt = −dA/dt, dA/dt = dC/dt
    [net, -net, -net, net - MASS_TRANSFER * (w - weq)]
}

/// Time derivative of (L, A, C, W) for one experiment.
pub fn nylon_rhs(state: [f64; 4], p: &NylonParams, ctx: &ExperimentContext) -> Result<[f64; 4], ModelError> {
    let t = ctx.condition("T")?;
    let weq = ctx.condition("Weq")?;
    let c = nylon_coefficients(p, t, weq)?;
    Ok(rates(&state, &c, weq))
}

#[derive(Debug, Clone)]
pub struct NylonModel {
    states: Vec<String>,
    params: Vec<String>,
    observables: Vec<String>,
    constants: BTreeMap<String, f64>,
    experiments: Vec<ExperimentContext>,
    /// Parameter indices of (A0, C0, W0) per experiment.
    init_index: Vec<[usize; 3]>,
}

impl NylonModel {
    pub fn new(cfg: &ModelConfig) -> Result<Self, ModelError> {
        if cfg.experiments.is_empty() {
            return Err(ModelError::Config("nylon model needs at least one experiment".into()));
        }
        let mut params = names(&KINETIC);
        let mut experiments = Vec::with_capacity(cfg.experiments.len());
        let mut init_index = Vec::with_capacity(cfg.experiments.len());
        for ctx in &cfg.experiments {
            ctx.condition("T")?;
            ctx.condition("Weq")?;
            if !ctx.conditions.contains_key("L0") && !ctx.conditions.contains_key("link_total") {
                return Err(ModelError::Config(format!(
                    "experiment `{}` needs condition `L0` or `link_total`",
                    ctx.id
                )));
            }
            let init: Vec<String> = if ctx.init_params.is_empty() {
                ["A0", "C0", "W0"].iter().map(|s| format!("{s}_{}", ctx.id)).collect()
            } else if ctx.init_params.len() == 3 {
                ctx.init_params.clone()
            } else {
                return Err(ModelError::Config(format!(
                    "experiment `{}`: init_params must name (A0, C0, W0)",
                    ctx.id
                )));
            };
            let mut idx = [0; 3];
            for (slot, name) in idx.iter_mut().zip(&init) {
                if params.contains(name) {
                    return Err(ModelError::Config(format!("duplicate parameter name `{name}`")));
                }
                *slot = params.len();
                params.push(name.clone());
            }
            init_index.push(idx);
            experiments.push(ExperimentContext {
                init_params: init,
                ..ctx.clone()
            });
        }
        Ok(Self {
            states: names(&["L", "A", "C", "W"]),
            params,
            observables: names(&["A", "C"]),
            constants: cfg.constants.clone(),
            experiments,
            init_index,
        })
    }
}

pub(crate) struct NylonPrepared {
    coef: NylonCoefficients,
    weq: f64,
}

impl OdeSystem for NylonModel {
    type Prepared = NylonPrepared;

    fn dim(&self) -> usize {
        4
    }

    fn initial_state(&self, params: &[f64], ctx: &ExperimentContext) -> Result<Vec<f64>, ModelError> {
        let e = self
            .experiments
            .iter()
            .position(|c| c.id == ctx.id)
            .ok_or_else(|| ModelError::Data(format!("unknown experiment `{}`", ctx.id)))?;
        let [ia, ic, iw] = self.init_index[e];
        let (a0, c0, w0) = (params[ia], params[ic], params[iw]);
        let l0 = match ctx.conditions.get("L0") {
            Some(&l0) => l0,
            None => ctx.condition("link_total")? - a0,
        };
        Ok(vec![l0, a0, c0, w0])
    }

    fn prepare(&self, params: &[f64], ctx: &ExperimentContext) -> Result<NylonPrepared, ModelError> {
        let p = NylonParams::from_slice(params);
        let weq = ctx.condition("Weq")?;
        let coef = nylon_coefficients(&p, ctx.condition("T")?, weq)?;
        Ok(NylonPrepared { coef, weq })
    }

    fn rhs(&self, prep: &NylonPrepared, _t: f64, x: &[f64], dx: &mut [f64]) -> Result<(), ModelError> {
        dx.copy_from_slice(&rates(x, &prep.coef, prep.weq));
        Ok(())
    }

    fn observe(&self, variable: &str, x: &[f64], params: &[f64]) -> Result<Prediction, ModelError> {
        let (mean, variance) = match variable {
            "A" => (x[1], params[6]),
            "C" => (x[2], params[7]),
            other => return Err(ModelError::Data(format!("unobservable/unknown variable `{other}`"))),
        };
        Ok(Prediction {
            mean,
            variance: Some(variance),
        })
    }

    fn check_state(&self, x: &[f64]) -> Result<(), ModelError> {
        let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if x.iter().any(|&v| v < -1e-9 * scale) {
            return Err(ModelError::Domain(format!("negative concentration in state {x:?}")));
        }
        Ok(())
    }
}

impl Model for NylonModel {
    fn name(&self) -> &str {
        "nylon"
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
        &self.observables
    }
    fn obs_model(&self) -> ObsModel {
        ObsModel::GaussianPerVariable
    }
    fn experiments(&self) -> &[ExperimentContext] {
        &self.experiments
    }
    fn positive_params(&self) -> Vec<String> {
        let mut v = names(&["sigmaA2", "sigmaC2"]);
        v.extend(self.params[KINETIC.len()..].iter().cloned());
        v
    }
    fn predict(&self, params: &[f64], data: &Dataset, integ: &IntegratorConfig) -> Result<Vec<Prediction>, ModelError> {
        check_dim(self, params)?;
        if !(params[6] > 0.0 && params[7] > 0.0) {
            return Err(ModelError::Domain("observation variances must be > 0".into()));
        }
        predict_ode(self, &self.experiments, params, data, integ)
    }
}
