//! Run configuration files (JSON).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use clonestat_core::inference::Gate;
use clonestat_core::profile::MIN_REGION_SAMPLES;
use clonestat_core::{build_model, Constraint, Dataset, GridSpec, IntegratorConfig, McmcConfig, ModelConfig, PriorSet, SharedModel};

use crate::error::{validation, CliError, Result};

pub const SEED_ENV: &str = "CLONESTAT_SEED";

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    #[default]
    None,
    Positive,
}

/// How one continuous parameter is sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterSpec {
    pub name: String,
    #[serde(default)]
    pub constraint: ConstraintKind,
    /// Sample a positive parameter on the log scale. Defaults to true for
    /// positive parameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<bool>,
}

impl ParameterSpec {
    fn constraint(&self) -> Result<Constraint> {
        match (self.constraint, self.transform) {
            (ConstraintKind::None, Some(true)) => Err(validation(format!(
                "parameters.{}: transform requires constraint \"positive\"",
                self.name
            ))),
            (ConstraintKind::None, _) => Ok(Constraint::Unconstrained),
            (ConstraintKind::Positive, Some(false)) => Ok(Constraint::Positive),
            (ConstraintKind::Positive, _) => Ok(Constraint::LogPositive),
        }
    }
}

/// Discrete parameter to profile over: either an inclusive range searched
/// outward from `start`, or an explicit candidate list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[i64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileSettings {
    pub level: f64,
    /// Normal draws per candidate for the joint region.
    pub n_samples: usize,
}

impl Default for ProfileSettings {
    fn default() -> Self {
        Self {
            level: 0.95,
            n_samples: MIN_REGION_SAMPLES,
        }
    }
}

/// Observation times for `simulate` when no dataset is used as template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignBlock {
    pub experiment: String,
    pub variable: String,
    pub times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    /// CSV path, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub parameters: Vec<ParameterSpec>,
    /// Parameters held at a value instead of sampled.
    #[serde(default)]
    pub fixed: BTreeMap<String, f64>,
    /// Chain start; defaults to the prior median.
    #[serde(default)]
    pub init: BTreeMap<String, f64>,
    pub priors: Vec<PriorSet>,
    pub k_levels: Vec<u64>,
    #[serde(default)]
    pub mcmc: McmcConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub transforms: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discrete: Option<DiscreteSpec>,
    #[serde(default)]
    pub profile: ProfileSettings,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub design: Vec<DesignBlock>,
}

/// A parsed config with its location, ready to build runs from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub dir: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        let config = parse_config(&text)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, dir })
    }

    pub fn data_path(&self) -> Option<PathBuf> {
        self.config.data.as_ref().map(|p| self.dir.join(p))
    }

    pub fn load_dataset(&self, model: &SharedModel) -> Result<Dataset> {
        let path = self
            .data_path()
            .ok_or_else(|| validation("data: no dataset path given"))?;
        load_dataset(&path, model)
    }

    /// SHA-256 over the canonical JSON of the effective config (with the
    /// resolved seed) and the dataset bytes.
    pub fn config_hash(&self, seed: u64) -> Result<String> {
        let mut effective = self.config.clone();
        effective.seed = seed;
        let canonical = serde_json::to_string(&serde_json::to_value(&effective).expect("serializable config"))
            .expect("serializable value");
        let mut h = Sha256::new();
        h.update(canonical.as_bytes());
        if let Some(path) = self.data_path() {
            let bytes = std::fs::read(&path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            h.update(b"\0data\0");
            h.update(&bytes);
        }
        Ok(hex::encode(h.finalize()))
    }
}

/// Parse and validate config text. Defaults are filled by serde.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let config: RunConfig = serde_json::from_str(text).map_err(|e| validation(format!("config: {e}")))?;
    config.validate()?;
    Ok(config)
}

/// Read a dataset and check it against the model.
pub fn load_dataset(path: &Path, model: &SharedModel) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let data = Dataset::read_csv(file).map_err(|e| validation(format!("{}: {e}", path.display())))?;
    model
        .validate_data(&data)
        .map_err(|e| validation(format!("{}: {e}", path.display())))?;
    Ok(data)
}

/// --seed, then CLONESTAT_SEED, then the config.
pub fn resolve_seed(flag: Option<u64>, config: &RunConfig) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| validation(format!("{SEED_ENV}: expected an unsigned integer, got `{v}`"))),
        Err(_) => Ok(config.seed),
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let model = build_model(&self.model)?;
        let continuous = model.param_names().to_vec();
        let discrete = model.discrete_param_names().to_vec();
        let all = model.all_param_names();

        if self.k_levels.len() < 2 {
            return Err(validation(format!(
                "k_levels: need ≥ 2 clone levels, got {}",
                self.k_levels.len()
            )));
        }
        if self.k_levels.contains(&0) {
            return Err(validation("k_levels: clone levels must be ≥ 1"));
        }
        if self.k_levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(validation(format!(
                "k_levels: must be strictly ascending, got {:?}",
                self.k_levels
            )));
        }
        if self.priors.len() < 2 {
            return Err(validation(format!("priors: need ≥ 2 prior sets, got {}", self.priors.len())));
        }
        for (i, p) in self.priors.iter().enumerate() {
            for (name, m) in &p.params {
                m.validate()
                    .map_err(|e| validation(format!("priors[{i}] (`{}`).{name}: {e}", p.id)))?;
            }
        }
        for (name, what) in self
            .fixed
            .keys()
            .map(|n| (n, "fixed"))
            .chain(self.init.keys().map(|n| (n, "init")))
            .chain(self.parameters.iter().map(|p| (&p.name, "parameters")))
            .chain(self.mcmc.proposal_scales.keys().map(|n| (n, "mcmc.proposal_scales")))
        {
            if !all.contains(name) {
                return Err(validation(format!(
                    "{what}: unknown parameter `{name}` for model `{}` (parameters: {})",
                    self.model.name,
                    all.join(", ")
                )));
            }
        }
        for p in &self.parameters {
            if !continuous.contains(&p.name) {
                return Err(validation(format!("parameters: `{}` is not a continuous parameter", p.name)));
            }
            p.constraint()?;
        }
        for (i, t) in self.transforms.iter().enumerate() {
            let e = clonestat_core::Expr::parse(t).map_err(|e| validation(format!("transforms[{i}]: {e}")))?;
            for v in e.free_vars() {
                if !continuous.contains(&v) {
                    return Err(validation(format!("transforms[{i}]: unknown parameter `{v}`")));
                }
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(validation(format!("alpha: must lie in (0, 1), got {}", self.alpha)));
        }
        self.mcmc.validate().map_err(|e| validation(e.to_string()))?;
        self.integrator
            .validate()
            .map_err(|e| validation(format!("integrator: {e}")))?;
        if let Some(d) = &self.discrete {
            if !discrete.contains(&d.name) {
                return Err(validation(format!(
                    "discrete.name: `{}` is not a discrete parameter of `{}`",
                    d.name, self.model.name
                )));
            }
            match (&d.range, &d.candidates) {
                (Some([lo, hi]), None) => {
                    if lo > hi {
                        return Err(validation(format!("discrete.range: empty range [{lo}, {hi}]")));
                    }
                    if let Some(s) = d.start {
                        if s < *lo || s > *hi {
                            return Err(validation(format!("discrete.start: {s} outside [{lo}, {hi}]")));
                        }
                    }
                }
                (None, Some(c)) => {
                    if c.is_empty() {
                        return Err(validation("discrete.candidates: empty list"));
                    }
                    if d.start.is_some() {
                        return Err(validation("discrete.start: only meaningful with discrete.range"));
                    }
                }
                _ => return Err(validation("discrete: give exactly one of `range` or `candidates`")),
            }
        }
        if !(self.profile.level > 0.0 && self.profile.level < 1.0) {
            return Err(validation(format!("profile.level: must lie in (0, 1), got {}", self.profile.level)));
        }
        if self.profile.n_samples < MIN_REGION_SAMPLES {
            return Err(validation(format!(
                "profile.n_samples: need ≥ {MIN_REGION_SAMPLES}, got {}",
                self.profile.n_samples
            )));
        }
        for (i, b) in self.design.iter().enumerate() {
            if b.times.is_empty() {
                return Err(validation(format!("design[{i}].times: empty")));
            }
        }
        Ok(())
    }

    pub fn constraints(&self) -> Result<BTreeMap<String, Constraint>> {
        self.parameters
            .iter()
            .map(|p| Ok((p.name.clone(), p.constraint()?)))
            .collect()
    }

    pub fn gate(&self) -> Gate {
        self.mcmc.gate
    }

    /// The grid for this config on `data`, with the discrete parameter (if
    /// any) left to the caller to fix.
    pub fn grid_spec(&self, model: SharedModel, data: Arc<Dataset>, seed: u64) -> Result<GridSpec> {
        let spec = GridSpec {
            model,
            data,
            priors: self.priors.clone(),
            k_levels: self.k_levels.clone(),
            mcmc: self.mcmc.clone(),
            fixed: self.fixed.clone(),
            constraints: self.constraints()?,
            init: self.init.clone(),
            integrator: self.integrator.clone(),
            seed,
        };
        Ok(spec)
    }

    /// Design rows for `simulate`: the config's design blocks if present.
    pub fn design_rows(&self) -> Vec<(String, f64, String)> {
        self.design
            .iter()
            .flat_map(|b| b.times.iter().map(move |&t| (b.experiment.clone(), t, b.variable.clone())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL_SIR: &str = r#"{
        "model": {"name": "sir", "constants": {"N": 261}},
        "data": "eyam.csv",
        "fixed": {"I0": 5},
        "priors": [
            {"id": "a", "params": {"beta": {"dist": "gamma", "shape": 2, "scale": 0.0005},
                                   "alpha": {"dist": "gamma", "shape": 2, "scale": 0.05}}},
            {"id": "b", "params": {"beta": {"dist": "gamma", "shape": 4, "scale": 0.0002},
                                   "alpha": {"dist": "gamma", "shape": 4, "scale": 0.02}}}
        ],
        "k_levels": [100, 200]
    }"#;

    #[test]
    fn minimal_sir_gets_defaults() {
        let c = parse_config(MINIMAL_SIR).unwrap();
        assert_eq!(c.alpha, 0.05);
        assert_eq!(c.mcmc.burn_frac, 0.5);
        assert!(c.mcmc.adapt);
        assert_eq!(c.seed, 0);
        assert_eq!(c.profile.level, 0.95);
        assert!(c.discrete.is_none());
    }

    fn err_of(text: &str) -> String {
        match parse_config(text) {
            Err(CliError::Validation(m)) => m,
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn one_clone_level_is_rejected() {
        let text = MINIMAL_SIR.replace("[100, 200]", "[100]");
        assert!(err_of(&text).contains("need ≥ 2 clone levels"));
    }

    #[test]
    fn zero_gamma_scale_is_rejected() {
        let text = MINIMAL_SIR.replace("\"scale\": 0.0005", "\"scale\": 0");
        let msg = err_of(&text);
        assert!(msg.contains("priors[0]") && msg.contains("beta") && msg.contains("scale"), "{msg}");
    }

    #[test]
    fn unknown_names_are_rejected() {
        assert!(err_of(&MINIMAL_SIR.replace("\"sir\"", "\"sirs\"")).contains("unknown model"));
        assert!(err_of(&MINIMAL_SIR.replace("\"I0\": 5", "\"gamma\": 5")).contains("fixed: unknown parameter `gamma`"));
        assert!(err_of(&MINIMAL_SIR.replace("\"k_levels\"", "\"k_level\"")).contains("k_level"));
        let t = MINIMAL_SIR.replace("\"k_levels\"", "\"transforms\": [\"beta/gamma\"], \"k_levels\"");
        assert!(err_of(&t).contains("transforms[0]"));
    }

    #[test]
    fn discrete_spec_checks() {
        let with = |d: &str| MINIMAL_SIR.replace("\"k_levels\"", &format!("\"discrete\": {d}, \"k_levels\""));
        assert!(parse_config(&with(r#"{"name": "I0", "range": [1, 15], "start": 5}"#)).is_ok());
        assert!(parse_config(&with(r#"{"name": "I0", "candidates": [4, 5, 6]}"#)).is_ok());
        assert!(err_of(&with(r#"{"name": "beta", "range": [1, 15]}"#)).contains("discrete.name"));
        assert!(err_of(&with(r#"{"name": "I0"}"#)).contains("exactly one"));
        assert!(err_of(&with(r#"{"name": "I0", "range": [1, 15], "start": 20}"#)).contains("discrete.start"));
    }

    #[test]
    fn parameter_constraints() {
        let p = |c, t| ParameterSpec {
            name: "x".into(),
            constraint: c,
            transform: t,
        };
        assert_eq!(p(ConstraintKind::Positive, None).constraint().unwrap(), Constraint::LogPositive);
        assert_eq!(p(ConstraintKind::Positive, Some(false)).constraint().unwrap(), Constraint::Positive);
        assert_eq!(p(ConstraintKind::None, None).constraint().unwrap(), Constraint::Unconstrained);
        assert!(p(ConstraintKind::None, Some(true)).constraint().is_err());
    }

    #[test]
    fn hash_depends_on_seed() {
        let loaded = LoadedConfig {
            config: RunConfig {
                data: None,
                ..parse_config(MINIMAL_SIR).unwrap()
            },
            dir: PathBuf::new(),
        };
        let a = loaded.config_hash(1).unwrap();
        assert_eq!(a.len(), 64);
        assert_eq!(a, loaded.config_hash(1).unwrap());
        assert_ne!(a, loaded.config_hash(2).unwrap());
    }
}
