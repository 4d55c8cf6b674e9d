use thiserror::Error;

use cem::experiments::ExperimentError;
use cem::verify::VerifyError;

#[derive(Debug, Error)]
pub enum CliError {
    /// Rejected before anything runs; exit code 2.
    #[error("invalid spec: {field}: {reason}")]
    Spec { field: String, reason: String },
    #[error("data: {0}")]
    Data(String),
    #[error("{0}")]
    Failed(String),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn spec(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::Spec {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Spec { .. } => 2,
            _ => 1,
        }
    }
}
