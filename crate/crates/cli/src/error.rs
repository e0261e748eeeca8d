use std::process::ExitCode;

use thiserror::Error;

use clonestat_core::cloning::CloningError;
use clonestat_core::data::DataError;
use clonestat_core::estimability::EstimabilityError;
use clonestat_core::expr::ExprError;
use clonestat_core::inference::InferenceError;
use clonestat_core::models::ModelError;
use clonestat_core::profile::ProfileError;
use clonestat_core::results::ResultsError;

/// Every failure maps to one of three exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad config, data or arguments (exit 1).
    #[error("{0}")]
    Validation(String),
    /// Anything that went wrong while computing or writing (exit 2).
    #[error("{0}")]
    Runtime(String),
    /// Results were written but some chains failed the gate (exit 3).
    #[error("{0}")]
    Convergence(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Runtime(_) => "runtime",
            CliError::Convergence(_) => "convergence",
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Convergence(_) => 3,
        })
    }

    /// `clonestat: error[kind]: message` on a single line.
    pub fn render(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("clonestat: error[{}]: {msg}", self.kind())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

pub(crate) fn runtime(msg: impl Into<String>) -> CliError {
    CliError::Runtime(msg.into())
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io(_) => CliError::Runtime(format!("data: {e}")),
            _ => CliError::Validation(format!("data: {e}")),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) | ModelError::Data(_) | ModelError::UnknownModel(_) => {
                CliError::Validation(format!("model: {e}"))
            }
            _ => CliError::Runtime(format!("model: {e}")),
        }
    }
}

impl From<CloningError> for CliError {
    fn from(e: CloningError) -> Self {
        match e {
            CloningError::Config(_) => CliError::Validation(e.to_string()),
            CloningError::Unconverged(_) => CliError::Convergence(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::Prior(_) | InferenceError::Config(_) => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<EstimabilityError> for CliError {
    fn from(e: EstimabilityError) -> Self {
        match e {
            EstimabilityError::Expr(_) | EstimabilityError::BadAlpha(_) | EstimabilityError::UnknownParameter(_) => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<ExprError> for CliError {
    fn from(e: ExprError) -> Self {
        CliError::Validation(format!("expression: {e}"))
    }
}

impl From<ResultsError> for CliError {
    fn from(e: ResultsError) -> Self {
        match e {
            ResultsError::HashMismatch { .. } => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<ProfileError> for CliError {
    fn from(e: ProfileError) -> Self {
        match e {
            ProfileError::Config(_) => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}
