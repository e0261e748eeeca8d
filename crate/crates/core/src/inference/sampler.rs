use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::diagnostics::{summarize_values, Gate, ParamDiagnostics, ParamSummary};
use super::draws::Draws;
use super::target::ClonedTarget;
use super::transform::{from_sampling_space_into, to_sampling_space};
use super::InferenceError;

/// Per-component acceptance the Robbins–Monro step aims for.
pub const COMPONENT_TARGET_ACCEPT: f64 = 0.44;
/// Acceptance aimed for by the full-vector move.
pub const JOINT_TARGET_ACCEPT: f64 = 0.234;
const ADAPT_EXPONENT: f64 = 0.6;
const CHOLESKY_REFRESH: usize = 100;

/// Sampler settings shared by every cell of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    /// Total iterations, burn-in included.
    pub n_iter: usize,
    pub burn_frac: f64,
    pub adapt: bool,
    /// Starting proposal standard deviation (sampling space) for parameters
    /// not listed in `proposal_scales`.
    pub initial_scale: f64,
    pub proposal_scales: BTreeMap<String, f64>,
    /// Add a full-vector move whose covariance is learned during burn-in.
    pub joint_moves: bool,
    pub gate: Gate,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_iter: 20_000,
            burn_frac: 0.5,
            adapt: true,
            initial_scale: 0.1,
            proposal_scales: BTreeMap::new(),
            joint_moves: true,
            gate: Gate::default(),
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<(), InferenceError> {
        if !(0.0..1.0).contains(&self.burn_frac) {
            return Err(InferenceError::Config(format!(
                "mcmc.burn_frac must lie in [0, 1), got {}",
                self.burn_frac
            )));
        }
        if self.n_iter < 2 {
            return Err(InferenceError::Config("mcmc.n_iter must be >= 2".into()));
        }
        if self.n_iter - self.n_burn() < 2 {
            return Err(InferenceError::Config("mcmc settings retain fewer than 2 draws".into()));
        }
        if !(self.initial_scale > 0.0 && self.initial_scale.is_finite()) {
            return Err(InferenceError::Config(format!(
                "mcmc.initial_scale must be > 0, got {}",
                self.initial_scale
            )));
        }
        for (k, v) in &self.proposal_scales {
            if !(*v > 0.0 && v.is_finite()) {
                return Err(InferenceError::Config(format!("mcmc.proposal_scales.{k} must be > 0, got {v}")));
            }
        }
        if !(self.gate.max_abs_z > 0.0) || !(self.gate.min_ess >= 0.0) {
            return Err(InferenceError::Config("mcmc.gate thresholds must be positive".into()));
        }
        Ok(())
    }

    pub fn n_burn(&self) -> usize {
        (self.n_iter as f64 * self.burn_frac).floor() as usize
    }

    pub fn settings(&self) -> SamplerSettings {
        SamplerSettings {
            n_iter: self.n_iter,
            n_burn: self.n_burn(),
            adapt: self.adapt,
            joint_moves: self.joint_moves,
        }
    }

    pub fn scales_for(&self, names: &[String]) -> Vec<f64> {
        names
            .iter()
            .map(|n| self.proposal_scales.get(n).copied().unwrap_or(self.initial_scale))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerSettings {
    pub n_iter: usize,
    pub n_burn: usize,
    pub adapt: bool,
    pub joint_moves: bool,
}

/// A finished chain: retained draws in the original parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub draws: Draws,
    pub n_total: usize,
    pub n_burn: usize,
    /// Accepted / proposed moves after burn-in.
    pub acceptance_rate: f64,
    pub accepted: u64,
    pub proposed: u64,
    pub component_acceptance: Vec<f64>,
    pub final_scales: Vec<f64>,
    pub seed: u64,
}

impl Chain {
    pub fn param_names(&self) -> &[String] {
        self.draws.names()
    }

    pub fn diagnostics(&self) -> Result<Vec<ParamDiagnostics>, InferenceError> {
        (0..self.draws.dim())
            .map(|j| ParamDiagnostics::compute(&self.draws.column(j)))
            .collect()
    }

    pub fn summarize(&self) -> Result<Vec<ParamSummary>, InferenceError> {
        (0..self.draws.dim())
            .map(|j| summarize_values(&self.draws.column(j)))
            .collect()
    }
}

/// Running mean and covariance.
struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(d: usize) -> Self {
        Self {
            n: 0.0,
            mean: vec![0.0; d],
            m2: vec![0.0; d * d],
        }
    }

    fn push(&mut self, x: &[f64]) {
        let d = x.len();
        self.n += 1.0;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl / self.n;
        }
        for i in 0..d {
            let after_i = x[i] - self.mean[i];
            for j in 0..d {
                self.m2[i * d + j] += delta[j] * after_i;
            }
        }
    }

    fn covariance(&self) -> Option<Vec<f64>> {
        if self.n < 2.0 {
            return None;
        }
        Some(self.m2.iter().map(|v| v / (self.n - 1.0)).collect())
    }
}

/// Lower Cholesky factor of a symmetric matrix with a small relative jitter.
fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            if i == j {
                s += 1e-10 * a[i * d + i].abs();
            }
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

fn accept_prob(log_alpha: f64) -> f64 {
    if log_alpha.is_nan() {
        0.0
    } else {
        log_alpha.min(0.0).exp()
    }
}

/// Random-walk Metropolis on the cloned target, started at `init` (θ space).
///
/// Each iteration updates the components one at a time with Gaussian
/// proposals in sampling space. With `joint_moves`, a full-vector move
/// follows once burn-in has collected enough draws to estimate the
/// posterior covariance. All adaptation stops at the end of burn-in.
pub fn run_chain(
    target: &ClonedTarget,
    init: &[f64],
    settings: &SamplerSettings,
    scales: &[f64],
    seed: u64,
) -> Result<Chain, InferenceError> {
    let d = target.param_names().len();
    let SamplerSettings {
        n_iter,
        n_burn,
        adapt,
        joint_moves,
    } = *settings;
    if init.len() != d || scales.len() != d {
        return Err(InferenceError::Config(format!(
            "init has {} and scales {} components; target has {d}",
            init.len(),
            scales.len()
        )));
    }
    if n_burn >= n_iter {
        return Err(InferenceError::Config(format!("burn-in {n_burn} must be < n_iter {n_iter}")));
    }
    if scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(InferenceError::Config(format!("proposal scales must be > 0, got {scales:?}")));
    }
    let (mut z, _) = to_sampling_space(init, target.constraints())
        .map_err(|e| InferenceError::InitNotFinite(format!("initial point {init:?}: {e}")))?;
    let mut theta = vec![0.0; d];
    let mut cur = target.log_density_z(&z, &mut theta);
    if !cur.is_finite() {
        return Err(InferenceError::InitNotFinite(format!(
            "target density at initial point {init:?} is {cur}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log_scale: Vec<f64> = scales.iter().map(|s| s.ln()).collect();
    let mut scale: Vec<f64> = scales.to_vec();

    let use_joint = joint_moves && d >= 2 && n_burn >= 200;
    let cov_start = n_burn / 4;
    let joint_start = n_burn / 2;
    let mut welford = Welford::new(d);
    let mut chol: Option<Vec<f64>> = None;
    let mut log_lambda = (2.38 / (d as f64).sqrt()).ln();
    let mut eps = vec![0.0; d];
    let mut proposal = vec![0.0; d];

    let mut draws = Draws::new(target.param_names().to_vec());
    let mut burn_accepts = 0u64;
    let (mut accepted, mut proposed) = (0u64, 0u64);
    let mut comp_acc = vec![0u64; d];

    for t in 0..n_iter {
        let burning = t < n_burn;
        let gamma = (t as f64 + 1.0).powf(-ADAPT_EXPONENT);

        for j in 0..d {
            let old = z[j];
            let step: f64 = rng.sample(StandardNormal);
            z[j] = old + scale[j] * step;
            let new = target.log_density_z(&z, &mut theta);
            let log_alpha = new - cur;
            let u: f64 = rng.random();
            let accept = u.ln() < log_alpha;
            if accept {
                cur = new;
            } else {
                z[j] = old;
            }
            if burning {
                burn_accepts += accept as u64;
                if adapt {
                    log_scale[j] += gamma * (accept_prob(log_alpha) - COMPONENT_TARGET_ACCEPT);
                    scale[j] = log_scale[j].exp();
                }
            } else {
                accepted += accept as u64;
                proposed += 1;
                comp_acc[j] += accept as u64;
            }
        }

        if use_joint {
            if burning && t >= cov_start {
                welford.push(&z);
                let refresh = t + 1 == n_burn || (t >= joint_start && (t - joint_start) % CHOLESKY_REFRESH == 0);
                if refresh {
                    if let Some(l) = welford.covariance().and_then(|c| cholesky(&c, d)) {
                        chol = Some(l);
                    }
                }
            }
            if t >= joint_start {
                if let Some(l) = &chol {
                    for e in eps.iter_mut() {
                        *e = rng.sample(StandardNormal);
                    }
                    let lambda = log_lambda.exp();
                    for i in 0..d {
                        let mut s = 0.0;
                        for k in 0..=i {
                            s += l[i * d + k] * eps[k];
                        }
                        proposal[i] = z[i] + lambda * s;
                    }
                    let new = target.log_density_z(&proposal, &mut theta);
                    let log_alpha = new - cur;
                    let u: f64 = rng.random();
                    let accept = u.ln() < log_alpha;
                    if accept {
                        cur = new;
                        z.copy_from_slice(&proposal);
                    }
                    if burning {
                        burn_accepts += accept as u64;
                        if adapt {
                            log_lambda += gamma * (accept_prob(log_alpha) - JOINT_TARGET_ACCEPT);
                        }
                    } else {
                        accepted += accept as u64;
                        proposed += 1;
                    }
                }
            }
        }

        if t + 1 == n_burn && burn_accepts == 0 {
            return Err(InferenceError::NoAcceptance { n_burn });
        }
        if !burning {
            from_sampling_space_into(&z, target.constraints(), &mut theta);
            draws.push(&theta)?;
        }
    }

    let kept = (n_iter - n_burn) as f64;
    Ok(Chain {
        draws,
        n_total: n_iter,
        n_burn,
        acceptance_rate: if proposed == 0 { 0.0 } else { accepted as f64 / proposed as f64 },
        accepted,
        proposed,
        component_acceptance: comp_acc.iter().map(|&a| a as f64 / kept).collect(),
        final_scales: scale,
        seed,
    })
}
