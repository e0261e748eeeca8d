//! Catalyzed batch-reactor DAE: six differential components y1..y6 and four
//! algebraic components y7..y10, closed per evaluation by solving a scalar
//! equation for y7.

use std::collections::BTreeMap;

use super::{check_dim, constant, names, predict_ode, ExperimentContext, Model, ModelConfig, ModelError, ObsModel, OdeSystem, Prediction};
use crate::data::Dataset;
use crate::integrate::{newton_bisect, IntegratorConfig};

const REFERENCE_TEMPERATURE: f64 = 340.15;
/// Absolute residual allowed on the y7 closure (scaled by the state magnitude).
pub const ALGEBRAIC_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DowVariant {
    /// (k1, k2, k3, θ7, θ8, θ9)
    Reduced,
    /// (k10, k20, k30, E1, E2, E3, θ7, θ8, θ9) with Arrhenius-type temperature terms
    Structural,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DowParams {
    pub k: [f64; 3],
    pub theta7: f64,
    pub theta8: f64,
    pub theta9: f64,
    /// Catalyst level [Q+].
    pub q: f64,
}

impl DowParams {
    /// Rate constants at temperature `t` from reference-temperature values.
    pub fn structural_rates(k0: [f64; 3], e: [f64; 3], t: f64) -> [f64; 3] {
        let bracket = 1.0 / t - 1.0 / REFERENCE_TEMPERATURE;
        [
            k0[0] * (-e[0] * bracket).exp(),
            k0[1] * (-e[1] * bracket).exp(),
            k0[2] * (-e[2] * bracket).exp(),
        ]
    }

    fn validate(&self) -> Result<(), ModelError> {
        if !(self.theta7 > 0.0 && self.theta8 > 0.0 && self.theta9 > 0.0) {
            return Err(ModelError::Domain(format!(
                "theta7, theta8, theta9 must be > 0 (got {}, {}, {})",
                self.theta7, self.theta8, self.theta9
            )));
        }
        if self.k.iter().any(|k| !k.is_finite()) {
            return Err(ModelError::Domain(format!("non-finite rate constant {:?}", self.k)));
        }
        Ok(())
    }
}

/// Solve the algebraic block: returns (y7, y8, y9, y10).
pub fn dow_algebraic(y: [f64; 6], p: &DowParams) -> Result<[f64; 4], ModelError> {
    p.validate()?;
    let [y1, _, y3, _, y5, y6] = y;
    let terms = [(p.theta8, y1), (p.theta9, y3), (p.theta7, y5)];
    let active: Vec<(f64, f64)> = terms.iter().copied().filter(|&(_, v)| v != 0.0).collect();
    let y7 = if active.is_empty() {
        y6 - p.q
    } else {
        let residual = |y7: f64| {
            let mut r = y7 + p.q - y6;
            let mut slope = 1.0;
            for &(th, v) in &active {
                let d = th + y7;
                r -= th * v / d;
                slope += th * v / (d * d);
            }
            (r, slope)
        };
        let theta_min = active.iter().map(|&(th, _)| th).fold(f64::INFINITY, f64::min);
        let scale = 1.0 + y6.abs() + p.q.abs() + y1.abs() + y3.abs() + y5.abs();
        let mut eps = 1e-9 * theta_min.max(1e-300);
        let mut lo = -theta_min + eps;
        while residual(lo).0 > 0.0 {
            eps *= 1e-3;
            if eps < theta_min * 1e-300 || eps == 0.0 {
                return Err(ModelError::Algebraic(format!(
                    "no bracketable root for y7 at state {y:?}, params {p:?}"
                )));
            }
            lo = -theta_min + eps;
        }
        let mut hi = (y6 - p.q + y1.abs() + y3.abs() + y5.abs()).max(lo + 1.0);
        let mut width = hi - lo;
        while residual(hi).0 < 0.0 {
            width *= 2.0;
            hi = lo + width;
            if !hi.is_finite() {
                return Err(ModelError::Algebraic(format!(
                    "no bracketable root for y7 at state {y:?}, params {p:?}"
                )));
            }
        }
        newton_bisect(residual, (lo, hi), 1e-15 * scale)
            .map_err(|e| ModelError::Algebraic(format!("{e} at state {y:?}, params {p:?}")))?
    };
    let y8 = p.theta8 * y1 / (p.theta8 + y7);
    let y9 = p.theta9 * y3 / (p.theta9 + y7);
    let y10 = p.theta7 * y5 / (p.theta7 + y7);
    let res = y7 - (-p.q + y6 + y8 + y9 + y10);
    let scale = 1.0 + y6.abs() + p.q.abs() + y8.abs() + y9.abs() + y10.abs();
    if !(res.abs() <= ALGEBRAIC_TOL * scale) {
        return Err(ModelError::Algebraic(format!(
            "closure residual {res:e} exceeds tolerance at state {y:?}"
        )));
    }
    Ok([y7, y8, y9, y10])
}

/// Time derivative of (y1..y6).
pub fn dow_rhs(y: [f64; 6], p: &DowParams) -> Result<[f64; 6], ModelError> {
    let [_, y8, y9, y10] = dow_algebraic(y, p)?;
    let [k1, k2, k3] = p.k;
    let [_, y2, _, y4, _, y6] = y;
    Ok([
        -k2 * y8 * y2,
        -k1 * y6 * y2 + k3 * y10 - k2 * y8 * y2,
        -k2 * y8 * y2 + k1 * y6 * y4 - 0.5 * k3 * y9,
        -k1 * y6 * y4 + 0.5 * k3 * y9,
        k1 * y6 * y2 - k3 * y10,
        -k1 * (y6 * y2 + y6 * y4) + k3 * (y10 + 0.5 * y9),
    ])
}

#[derive(Debug, Clone)]
pub struct DowModel {
    variant: DowVariant,
    q: f64,
    sigma2: f64,
    temperature: Option<f64>,
    states: Vec<String>,
    params: Vec<String>,
    constants: BTreeMap<String, f64>,
    experiments: Vec<ExperimentContext>,
}

impl DowModel {
    pub fn new(cfg: &ModelConfig, variant: DowVariant) -> Result<Self, ModelError> {
        let q = constant(cfg, "Q", None)?;
        let sigma2 = constant(cfg, "sigma2", None)?;
        if !(sigma2 > 0.0) {
            return Err(ModelError::Config(format!("sigma2 must be > 0, got {sigma2}")));
        }
        if cfg.experiments.is_empty() {
            return Err(ModelError::Config("dow model needs at least one experiment".into()));
        }
        for ctx in &cfg.experiments {
            for i in 1..=6 {
                ctx.condition(&format!("y{i}_0"))?;
            }
            if variant == DowVariant::Structural && !ctx.conditions.contains_key("T") && !cfg.constants.contains_key("T") {
                return Err(ModelError::Config(format!(
                    "experiment `{}` needs a temperature `T` for the structural variant",
                    ctx.id
                )));
            }
        }
        let params = match variant {
            DowVariant::Reduced => names(&["k1", "k2", "k3", "theta7", "theta8", "theta9"]),
            DowVariant::Structural => names(&["k10", "k20", "k30", "E1", "E2", "E3", "theta7", "theta8", "theta9"]),
        };
        Ok(Self {
            variant,
            q,
            sigma2,
            temperature: cfg.constants.get("T").copied(),
            states: (1..=6).map(|i| format!("y{i}")).collect(),
            params,
            constants: cfg.constants.clone(),
            experiments: cfg.experiments.clone(),
        })
    }

    pub fn variant(&self) -> DowVariant {
        self.variant
    }

    fn dow_params(&self, params: &[f64], ctx: &ExperimentContext) -> Result<DowParams, ModelError> {
        let (k, th) = match self.variant {
            DowVariant::Reduced => ([params[0], params[1], params[2]], &params[3..6]),
            DowVariant::Structural => {
                let t = ctx
                    .conditions
                    .get("T")
                    .copied()
                    .or(self.temperature)
                    .ok_or_else(|| ModelError::Config(format!("experiment `{}` has no temperature `T`", ctx.id)))?;
                (
                    DowParams::structural_rates([params[0], params[1], params[2]], [params[3], params[4], params[5]], t),
                    &params[6..9],
                )
            }
        };
        let p = DowParams {
            k,
            theta7: th[0],
            theta8: th[1],
            theta9: th[2],
            q: self.q,
        };
        p.validate()?;
        Ok(p)
    }
}

impl OdeSystem for DowModel {
    type Prepared = DowParams;

    fn dim(&self) -> usize {
        6
    }

    fn initial_state(&self, _params: &[f64], ctx: &ExperimentContext) -> Result<Vec<f64>, ModelError> {
        (1..=6).map(|i| ctx.condition(&format!("y{i}_0"))).collect()
    }

    fn prepare(&self, params: &[f64], ctx: &ExperimentContext) -> Result<DowParams, ModelError> {
        self.dow_params(params, ctx)
    }

    fn rhs(&self, p: &DowParams, _t: f64, x: &[f64], dx: &mut [f64]) -> Result<(), ModelError> {
        let y = [x[0], x[1], x[2], x[3], x[4], x[5]];
        dx.copy_from_slice(&dow_rhs(y, p)?);
        Ok(())
    }

    fn observe(&self, variable: &str, x: &[f64], _params: &[f64]) -> Result<Prediction, ModelError> {
        let idx = self
            .states
            .iter()
            .position(|s| s == variable)
            .ok_or_else(|| ModelError::Data(format!("unobservable/unknown variable `{variable}`")))?;
        Ok(Prediction {
            mean: x[idx],
            variance: Some(self.sigma2),
        })
    }
}

impl Model for DowModel {
    fn name(&self) -> &str {
        match self.variant {
            DowVariant::Reduced => "dow",
            DowVariant::Structural => "dow_structural",
        }
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
    fn experiments(&self) -> &[ExperimentContext] {
        &self.experiments
    }
    fn positive_params(&self) -> Vec<String> {
        match self.variant {
            DowVariant::Reduced => self.params.clone(),
            DowVariant::Structural => names(&["k10", "k20", "k30", "theta7", "theta8", "theta9"]),
        }
    }
    fn predict(&self, params: &[f64], data: &Dataset, integ: &IntegratorConfig) -> Result<Vec<Prediction>, ModelError> {
        check_dim(self, params)?;
        predict_ode(self, &self.experiments, params, data, integ)
    }
}
