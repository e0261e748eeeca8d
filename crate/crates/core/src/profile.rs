//! Profiling a discrete parameter by conditional data cloning, the
//! cloned likelihood-ratio statistic, profile sets and joint regions.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloning::{cell_seed, combined_estimate, run_grid, CloningError, GridSpec};
use crate::estimability::{estimability_report, EstimabilityError, EstimabilityReport, Status};
use crate::inference::{ClonedTarget, InferenceError};
use crate::statfun::chi2_quantile;

/// Fewest samples per candidate value for the joint region.
pub const MIN_REGION_SAMPLES: usize = 1000;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("{0}")]
    Config(String),
    #[error("non-finite log-likelihood: {0}")]
    NonFinite(String),
    #[error("no usable conditional fits")]
    Empty,
    #[error("no sampled point fell inside the joint region; widen the candidate range or draw more samples")]
    NoAccepted,
    #[error("{value_name}={value}: {source}")]
    Fit {
        value_name: String,
        value: i64,
        #[source]
        source: Box<ProfileError>,
    },
    #[error(transparent)]
    Cloning(#[from] CloningError),
    #[error(transparent)]
    Estimability(#[from] EstimabilityError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

/// −(2/K)(num − den) for K-cloned log-likelihoods, −2(num − den) otherwise.
/// The two agree exactly when the cloned values are K times the uncloned ones.
pub fn dclr_statistic(log_num: f64, log_den: f64, k: u64, cloned: bool) -> Result<f64, ProfileError> {
    if !log_num.is_finite() || !log_den.is_finite() {
        return Err(ProfileError::NonFinite(format!("num={log_num}, den={log_den}")));
    }
    if cloned {
        if k == 0 {
            return Err(ProfileError::Config("K must be >= 1".into()));
        }
        Ok(-(2.0 / k as f64) * (log_num - log_den))
    } else {
        Ok(-2.0 * (log_num - log_den))
    }
}

/// Data cloning with the discrete parameter held at one value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalFit {
    pub discrete_value: i64,
    pub param_names: Vec<String>,
    pub cond_mle: Vec<f64>,
    /// K × posterior variance, combined over cells.
    pub cond_inv_fim: Vec<f64>,
    /// Uncloned log-likelihood at the conditional MLE.
    pub logl_at_mle: f64,
    pub report: EstimabilityReport,
    /// False when some parameter was not declared estimable; such fits are
    /// left out of profiling.
    pub usable: bool,
}

impl ConditionalFit {
    pub fn standard_errors(&self) -> Vec<f64> {
        self.cond_inv_fim.iter().map(|v| v.sqrt()).collect()
    }
}

/// Grid settings plus the name of the discrete parameter being profiled.
#[derive(Debug, Clone)]
pub struct ProfileContext {
    pub spec: GridSpec,
    pub discrete_name: String,
    pub alpha: f64,
    pub workers: usize,
}

impl ProfileContext {
    fn spec_at(&self, value: i64) -> GridSpec {
        let mut spec = self.spec.clone();
        spec.fixed.insert(self.discrete_name.clone(), value as f64);
        spec
    }

    /// Uncloned log-likelihood at (value, continuous parameters).
    pub fn loglik(&self, value: i64, params: &[f64]) -> Result<f64, ProfileError> {
        let spec = self.spec_at(value);
        let target = ClonedTarget::new(
            spec.model.clone(),
            spec.data.clone(),
            &spec.priors[0],
            1,
            &spec.fixed,
            &spec.constraints,
            spec.integrator.clone(),
        )?;
        Ok(target.log_likelihood(params))
    }

    /// Run the full grid conditional on `value`.
    pub fn conditional_dc(&self, value: i64) -> Result<ConditionalFit, ProfileError> {
        let wrap = |e: ProfileError| ProfileError::Fit {
            value_name: self.discrete_name.clone(),
            value,
            source: Box::new(e),
        };
        let spec = self.spec_at(value);
        let runs = run_grid(&spec, self.workers).map_err(|e| wrap(e.into()))?;
        let cells: Vec<_> = runs.into_iter().map(|r| r.result).collect();
        let report = estimability_report(&cells, self.alpha, None).map_err(|e| wrap(e.into()))?;
        let combined = combined_estimate(&cells, true).map_err(|e| wrap(e.into()))?;
        let usable = report.params.iter().all(|p| p.status == Status::Estimable);
        if !usable {
            let bad: Vec<String> = report
                .params
                .iter()
                .filter(|p| p.status != Status::Estimable)
                .map(|p| format!("{} ({})", p.parameter, p.status.as_str()))
                .collect();
            log::warn!(
                "{}={value}: excluded from profiling, not estimable: {}",
                self.discrete_name,
                bad.join(", ")
            );
        }
        let logl = self.loglik(value, &combined.mle).map_err(wrap)?;
        if !logl.is_finite() {
            return Err(wrap(ProfileError::NonFinite(format!(
                "at conditional MLE {:?}",
                combined.mle
            ))));
        }
        Ok(ConditionalFit {
            discrete_value: value,
            param_names: combined.param_names,
            cond_mle: combined.mle,
            cond_inv_fim: combined.asymptotic_variance,
            logl_at_mle: logl,
            report,
            usable,
        })
    }
}

/// Overall MLE over the discrete values and the profile confidence set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileResult {
    pub mle_value: i64,
    pub mle_params: Vec<f64>,
    pub param_names: Vec<String>,
    pub level: f64,
    pub threshold: f64,
    pub profile_set: Vec<i64>,
    pub logl_by_value: BTreeMap<i64, f64>,
    pub statistic_by_value: BTreeMap<i64, f64>,
}

/// Argmax and { v : −2(ℓ(v) − ℓ_max) ≤ χ²₁(level) }.
pub fn profile_set_from_loglik(logl: &BTreeMap<i64, f64>, level: f64) -> Result<(i64, Vec<i64>), ProfileError> {
    let threshold = threshold(level, 1.0)?;
    let (&best, &lmax) = logl
        .iter()
        .filter(|(_, l)| l.is_finite())
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(a.0)))
        .ok_or(ProfileError::Empty)?;
    let mut set = Vec::new();
    for (&v, &l) in logl {
        if l.is_finite() && dclr_statistic(l, lmax, 1, false)? <= threshold {
            set.push(v);
        }
    }
    Ok((best, set))
}

fn threshold(level: f64, df: f64) -> Result<f64, ProfileError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(ProfileError::Config(format!("level must lie in (0, 1), got {level}")));
    }
    Ok(chi2_quantile(level, df).expect("valid level and df"))
}

/// Profile set over the usable fits.
pub fn profile_interval_set(fits: &[ConditionalFit], level: f64) -> Result<Vec<i64>, ProfileError> {
    Ok(profile_result(fits, level)?.profile_set)
}

pub fn profile_result(fits: &[ConditionalFit], level: f64) -> Result<ProfileResult, ProfileError> {
    let logl: BTreeMap<i64, f64> = fits
        .iter()
        .filter(|f| f.usable)
        .map(|f| (f.discrete_value, f.logl_at_mle))
        .collect();
    let (best, set) = profile_set_from_loglik(&logl, level)?;
    let fit = fits
        .iter()
        .find(|f| f.usable && f.discrete_value == best)
        .expect("argmax among fits");
    let lmax = fit.logl_at_mle;
    Ok(ProfileResult {
        mle_value: best,
        mle_params: fit.cond_mle.clone(),
        param_names: fit.param_names.clone(),
        level,
        threshold: threshold(level, 1.0)?,
        profile_set: set,
        statistic_by_value: logl.iter().map(|(&v, &l)| (v, -2.0 * (l - lmax))).collect(),
        logl_by_value: logl,
    })
}

/// Evaluate candidates outward from `start` one value at a time until the
/// statistic exceeds twice the χ²₁ threshold on both sides (or the domain
/// ends). The evaluated values always form a contiguous range.
pub fn profile_search<F>(
    domain: (i64, i64),
    start: i64,
    level: f64,
    mut fit: F,
) -> Result<Vec<ConditionalFit>, ProfileError>
where
    F: FnMut(i64) -> Result<ConditionalFit, ProfileError>,
{
    let (lo_dom, hi_dom) = domain;
    if lo_dom > hi_dom || start < lo_dom || start > hi_dom {
        return Err(ProfileError::Config(format!(
            "start {start} outside candidate domain [{lo_dom}, {hi_dom}]"
        )));
    }
    let stop = 2.0 * threshold(level, 1.0)?;
    let mut fits: BTreeMap<i64, ConditionalFit> = BTreeMap::new();
    fits.insert(start, fit(start)?);
    loop {
        let lmax = fits
            .values()
            .filter(|f| f.usable)
            .map(|f| f.logl_at_mle)
            .fold(f64::NEG_INFINITY, f64::max);
        let beyond = |f: &ConditionalFit| f.usable && lmax.is_finite() && -2.0 * (f.logl_at_mle - lmax) > stop;
        let (&lo, lo_fit) = fits.iter().next().expect("nonempty");
        let (&hi, hi_fit) = fits.iter().next_back().expect("nonempty");
        let left_done = lo == lo_dom || beyond(lo_fit);
        let right_done = hi == hi_dom || beyond(hi_fit);
        if left_done && right_done {
            break;
        }
        if !left_done {
            fits.insert(lo - 1, fit(lo - 1)?);
        }
        if !right_done {
            fits.insert(hi + 1, fit(hi + 1)?);
        }
    }
    if !fits.values().any(|f| f.usable) {
        return Err(ProfileError::Empty);
    }
    Ok(fits.into_values().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPoint {
    pub discrete_value: i64,
    pub params: Vec<f64>,
    pub statistic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSample {
    pub param_names: Vec<String>,
    pub threshold: f64,
    pub mle_value: i64,
    pub mle_params: Vec<f64>,
    pub mle_logl: f64,
    /// Accepted points, grouped by discrete value in ascending order.
    pub accepted: Vec<RegionPoint>,
    /// discrete value → (drawn, accepted)
    pub counts: BTreeMap<i64, (usize, usize)>,
}

/// Sample each usable fit's asymptotic normal (independent components with
/// the inverse-FIM variances) and keep points whose statistic against the
/// overall MLE is within the χ²₃ quantile.
pub fn joint_region_sample<L>(
    fits: &[ConditionalFit],
    n_samples: usize,
    level: f64,
    seed: u64,
    loglik: L,
) -> Result<RegionSample, ProfileError>
where
    L: Fn(i64, &[f64]) -> Result<f64, ProfileError>,
{
    if n_samples < MIN_REGION_SAMPLES {
        return Err(ProfileError::Config(format!(
            "need >= {MIN_REGION_SAMPLES} samples per candidate, got {n_samples}"
        )));
    }
    let usable: Vec<&ConditionalFit> = fits.iter().filter(|f| f.usable).collect();
    let best = usable
        .iter()
        .max_by(|a, b| a.logl_at_mle.total_cmp(&b.logl_at_mle).then(b.discrete_value.cmp(&a.discrete_value)))
        .ok_or(ProfileError::Empty)?;
    let thr = threshold(level, 3.0)?;
    let mut accepted = Vec::new();
    let mut counts = BTreeMap::new();
    let mut sorted = usable.clone();
    sorted.sort_by_key(|f| f.discrete_value);
    for fit in sorted {
        let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(seed, fit.discrete_value as u64, "joint-region", 0));
        let normals: Vec<Normal<f64>> = fit
            .cond_mle
            .iter()
            .zip(&fit.cond_inv_fim)
            .map(|(&m, &v)| Normal::new(m, v.max(0.0).sqrt()).expect("finite mean and sd"))
            .collect();
        let mut n_acc = 0;
        let mut point = vec![0.0; normals.len()];
        for _ in 0..n_samples {
            for (x, nd) in point.iter_mut().zip(&normals) {
                *x = nd.sample(&mut rng);
            }
            let l = loglik(fit.discrete_value, &point)?;
            if !l.is_finite() {
                continue;
            }
            let stat = dclr_statistic(l, best.logl_at_mle, 1, false)?;
            if stat <= thr {
                n_acc += 1;
                accepted.push(RegionPoint {
                    discrete_value: fit.discrete_value,
                    params: point.clone(),
                    statistic: stat,
                });
            }
        }
        counts.insert(fit.discrete_value, (n_samples, n_acc));
    }
    if accepted.is_empty() {
        return Err(ProfileError::NoAccepted);
    }
    Ok(RegionSample {
        param_names: best.param_names.clone(),
        threshold: thr,
        mle_value: best.discrete_value,
        mle_params: best.cond_mle.clone(),
        mle_logl: best.logl_at_mle,
        accepted,
        counts,
    })
}
