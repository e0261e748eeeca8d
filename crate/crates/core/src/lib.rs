//! Data cloning for dynamic models: cloned-likelihood MCMC, estimability
//! tests on the clone/prior grid, and profile-likelihood sets for a
//! discrete parameter.

pub mod cloning;
pub mod data;
pub mod estimability;
pub mod expr;
pub mod inference;
pub mod integrate;
pub mod models;
pub mod profile;
pub mod results;
pub mod statfun;

pub use cloning::{combined_estimate, run_grid, CellKey, CellResult, CellRun, CombinedEstimate, GridSpec};
pub use data::{Dataset, Observation};
pub use estimability::{estimability_report, oneway_anova, transform_cells, AnovaResult, EstimabilityReport, Status};
pub use expr::{Evaluated, Expr};
pub use inference::{ClonedTarget, Constraint, Draws, Marginal, McmcConfig, PriorSet};
pub use integrate::IntegratorConfig;
pub use models::{build_model, Model, ModelConfig, SharedModel};
pub use profile::{dclr_statistic, ConditionalFit, ProfileContext, ProfileResult};
