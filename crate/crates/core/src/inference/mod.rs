//! Likelihoods, priors, the K-cloned target and the Metropolis sampler with
//! its convergence diagnostics.

use thiserror::Error;

use crate::models::ModelError;

mod diagnostics;
mod draws;
mod prior;
mod sampler;
mod target;
mod transform;

pub use diagnostics::{
    autocovariance, ess, geweke_z, integrated_autocorr_time, summarize_values, Gate, ParamDiagnostics, ParamSummary,
    MIN_DIAGNOSTIC_DRAWS,
};
pub use draws::Draws;
pub use prior::{Marginal, PriorSet, ResolvedPrior};
pub use sampler::{run_chain, Chain, McmcConfig, SamplerSettings, COMPONENT_TARGET_ACCEPT, JOINT_TARGET_ACCEPT};
pub use target::{log_obs_likelihood, ClonedTarget};
pub use transform::{from_sampling_space, from_sampling_space_into, to_sampling_space, Constraint};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("prior: {0}")]
    Prior(String),
    #[error("outside parameter domain: {0}")]
    Domain(String),
    #[error("{0}")]
    Config(String),
    #[error("cannot start chain: {0}")]
    InitNotFinite(String),
    #[error("no proposal accepted during {n_burn} burn-in iterations; reduce the proposal scale")]
    NoAcceptance { n_burn: usize },
    #[error("need at least {need} draws, got {got}")]
    TooFewDraws { got: usize, need: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("chain file: {0}")]
    Io(String),
}

impl From<csv::Error> for InferenceError {
    fn from(e: csv::Error) -> Self {
        InferenceError::Io(e.to_string())
    }
}
