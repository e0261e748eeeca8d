//! The clone-level × prior grid and the combined estimator over its cells.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::inference::{
    run_chain, Chain, ClonedTarget, Constraint, InferenceError, McmcConfig, ParamDiagnostics, PriorSet,
};
use crate::integrate::IntegratorConfig;
use crate::models::SharedModel;

/// Wald multiplier for the 95% interval.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Error)]
pub enum CloningError {
    #[error("{0}")]
    Config(String),
    #[error("cell k={k}, prior `{prior_id}`: {source}")]
    Cell {
        k: u64,
        prior_id: String,
        #[source]
        source: InferenceError,
    },
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error("no cells to combine")]
    Empty,
    #[error("cells disagree on parameter names")]
    MixedParameters,
    #[error("cells failed convergence diagnostics: {0}")]
    Unconverged(String),
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub k: u64,
    pub prior_id: String,
}

impl CellKey {
    /// Directory name `<k>_<prior_id>`.
    pub fn dir_name(&self) -> String {
        format!("{}_{}", self.k, self.prior_id)
    }
}

impl std::fmt::Display for CellKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "k={}, prior={}", self.k, self.prior_id)
    }
}

/// Posterior summary of one (K, prior) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    #[serde(flatten)]
    pub key: CellKey,
    pub param_names: Vec<String>,
    pub means: Vec<f64>,
    /// Posterior variances of the retained draws.
    pub variances: Vec<f64>,
    pub n_draws: usize,
    pub diagnostics: Vec<ParamDiagnostics>,
    /// Per-parameter pass/fail against the gate.
    pub param_ok: Vec<bool>,
    pub diag_ok: bool,
    pub seed: u64,
    pub acceptance_rate: f64,
    pub chain_ref: Option<String>,
}

impl CellResult {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.param_names.iter().position(|n| n == name)
    }

    /// Summaries, diagnostics and gate verdicts for a finished chain.
    pub fn from_chain(key: CellKey, chain: &Chain, gate: &crate::inference::Gate) -> Result<Self, InferenceError> {
        let summaries = chain.summarize()?;
        let diagnostics = chain.diagnostics()?;
        let param_ok: Vec<bool> = diagnostics.iter().map(|d| d.passes(gate)).collect();
        Ok(Self {
            key,
            param_names: chain.param_names().to_vec(),
            means: summaries.iter().map(|s| s.mean).collect(),
            variances: summaries.iter().map(|s| s.variance).collect(),
            n_draws: chain.draws.len(),
            diag_ok: param_ok.iter().all(|&b| b),
            param_ok,
            diagnostics,
            seed: chain.seed,
            acceptance_rate: chain.acceptance_rate,
            chain_ref: None,
        })
    }
}

/// A cell's summary together with its retained draws.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRun {
    pub result: CellResult,
    pub chain: Chain,
}

/// Everything needed to run a grid.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub model: SharedModel,
    pub data: Arc<Dataset>,
    pub priors: Vec<PriorSet>,
    pub k_levels: Vec<u64>,
    pub mcmc: McmcConfig,
    pub fixed: BTreeMap<String, f64>,
    pub constraints: BTreeMap<String, Constraint>,
    /// Starting values overriding the prior median.
    pub init: BTreeMap<String, f64>,
    pub integrator: IntegratorConfig,
    pub seed: u64,
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), CloningError> {
        if self.priors.len() < 2 {
            return Err(CloningError::Config(format!(
                "need >= 2 priors for the prior-effect test, got {}",
                self.priors.len()
            )));
        }
        if self.k_levels.len() < 2 {
            return Err(CloningError::Config(format!(
                "need >= 2 clone levels for the clone-effect test, got {}",
                self.k_levels.len()
            )));
        }
        if self.k_levels.iter().any(|&k| k == 0) {
            return Err(CloningError::Config("clone levels must be >= 1".into()));
        }
        if self.k_levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CloningError::Config(format!(
                "clone levels must be strictly ascending, got {:?}",
                self.k_levels
            )));
        }
        for (i, a) in self.priors.iter().enumerate() {
            for b in &self.priors[i + 1..] {
                if a.id == b.id {
                    return Err(CloningError::Config(format!("duplicate prior id `{}`", a.id)));
                }
                if a.params == b.params {
                    return Err(CloningError::Config(format!(
                        "priors `{}` and `{}` are identical",
                        a.id, b.id
                    )));
                }
            }
        }
        self.mcmc.validate()?;
        self.integrator
            .validate()
            .map_err(|e| CloningError::Config(format!("integrator: {e}")))?;
        Ok(())
    }

    pub fn keys(&self) -> Vec<CellKey> {
        let mut keys: Vec<CellKey> = self
            .k_levels
            .iter()
            .flat_map(|&k| {
                self.priors.iter().map(move |p| CellKey {
                    k,
                    prior_id: p.id.clone(),
                })
            })
            .collect();
        keys.sort();
        keys
    }

    fn target(&self, key: &CellKey) -> Result<ClonedTarget, InferenceError> {
        let prior = self
            .priors
            .iter()
            .find(|p| p.id == key.prior_id)
            .expect("key built from priors");
        ClonedTarget::new(
            self.model.clone(),
            self.data.clone(),
            prior,
            key.k,
            &self.fixed,
            &self.constraints,
            self.integrator.clone(),
        )
    }

    /// Run one cell's chain.
    pub fn run_cell(&self, key: &CellKey) -> Result<CellRun, CloningError> {
        let wrap = |source| CloningError::Cell {
            k: key.k,
            prior_id: key.prior_id.clone(),
            source,
        };
        let target = self.target(key).map_err(wrap)?;
        let mut init = target.prior_median();
        for (name, v) in target.param_names().iter().zip(init.iter_mut()) {
            if let Some(&x) = self.init.get(name) {
                *v = x;
            }
        }
        let scales = self.mcmc.scales_for(target.param_names());
        let seed = cell_seed(self.seed, key.k, &key.prior_id, 0);
        let chain = run_chain(&target, &init, &self.mcmc.settings(), &scales, seed).map_err(wrap)?;
        let result = CellResult::from_chain(key.clone(), &chain, &self.mcmc.gate).map_err(wrap)?;
        if !result.diag_ok {
            log::warn!("cell {key} failed convergence diagnostics; it will be excluded from tests");
        }
        Ok(CellRun { result, chain })
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent stream seed for chain `chain` of cell (k, prior_id).
pub fn cell_seed(base: u64, k: u64, prior_id: &str, chain: u64) -> u64 {
    let mut h = splitmix64(base);
    h = splitmix64(h ^ k);
    for b in prior_id.bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    h = splitmix64(h ^ (prior_id.len() as u64));
    splitmix64(h ^ chain)
}

/// Run every cell on a pool of `workers` threads; results are sorted by key,
/// so the output does not depend on scheduling.
pub fn run_grid(spec: &GridSpec, workers: usize) -> Result<Vec<CellRun>, CloningError> {
    spec.validate()?;
    let keys = spec.keys();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CloningError::Pool(e.to_string()))?;
    let mut runs = pool.install(|| {
        keys.par_iter()
            .map(|key| spec.run_cell(key))
            .collect::<Result<Vec<_>, _>>()
    })?;
    runs.sort_by(|a, b| a.result.key.cmp(&b.result.key));
    Ok(runs)
}

/// Drop cells at the listed clone levels.
pub fn drop_k_levels(cells: &[CellResult], drop: &[u64]) -> Vec<CellResult> {
    cells.iter().filter(|c| !drop.contains(&c.key.k)).cloned().collect()
}

/// Draw-weighted combination across cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedEstimate {
    pub param_names: Vec<String>,
    pub mle: Vec<f64>,
    pub asymptotic_variance: Vec<f64>,
    pub interval95: Vec<(f64, f64)>,
}

/// One parameter's combined point estimate and variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Combined1 {
    pub mle: f64,
    pub asymptotic_variance: f64,
    pub interval95: (f64, f64),
}

impl Combined1 {
    pub fn half_width(&self) -> f64 {
        Z_95 * self.asymptotic_variance.sqrt()
    }
}

/// Weights N/ΣN in key order (the order makes the sums reproducible).
fn ordered_weights(cells: &[&CellResult]) -> Vec<f64> {
    let total: f64 = cells.iter().map(|c| c.n_draws as f64).sum();
    cells.iter().map(|c| c.n_draws as f64 / total).collect()
}

/// Combine parameter `j` across `cells` without any convergence gate.
pub(crate) fn combine_param(cells: &[CellResult], j: usize) -> Combined1 {
    let mut sorted: Vec<&CellResult> = cells.iter().collect();
    sorted.sort_by(|a, b| a.key.cmp(&b.key));
    let w = ordered_weights(&sorted);
    let mut mle = 0.0;
    let mut var = 0.0;
    for (c, wi) in sorted.iter().zip(&w) {
        mle += wi * c.means[j];
        var += wi * c.key.k as f64 * c.variances[j];
    }
    let hw = Z_95 * var.sqrt();
    Combined1 {
        mle,
        asymptotic_variance: var,
        interval95: (mle - hw, mle + hw),
    }
}

/// φ̂ = Σ w φ̂_{k,p} and var(φ̂) = Σ w k var(φ̂_{k,p}) with w = N/ΣN.
/// Unconverged cells are refused unless `force` is set.
pub fn combined_estimate(cells: &[CellResult], force: bool) -> Result<CombinedEstimate, CloningError> {
    let first = cells.first().ok_or(CloningError::Empty)?;
    if cells.iter().any(|c| c.param_names != first.param_names) {
        return Err(CloningError::MixedParameters);
    }
    if !force {
        let bad: Vec<String> = cells.iter().filter(|c| !c.diag_ok).map(|c| c.key.to_string()).collect();
        if !bad.is_empty() {
            return Err(CloningError::Unconverged(bad.join("; ")));
        }
    }
    let parts: Vec<Combined1> = (0..first.param_names.len()).map(|j| combine_param(cells, j)).collect();
    Ok(CombinedEstimate {
        param_names: first.param_names.clone(),
        mle: parts.iter().map(|p| p.mle).collect(),
        asymptotic_variance: parts.iter().map(|p| p.asymptotic_variance).collect(),
        interval95: parts.iter().map(|p| p.interval95).collect(),
    })
}
