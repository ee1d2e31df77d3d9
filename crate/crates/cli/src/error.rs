use std::path::PathBuf;

use thiserror::Error;

/// Every failure a command can end with; each class has its own exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{} already exists; pass --force to overwrite", .0.display())]
    Exists(PathBuf),
    #[error("{} not found", .0.display())]
    Missing(PathBuf),
    #[error("stage 2 needs a stage-1 checkpoint (--init DIR) or --from-scratch")]
    NoStage1,
    #[error("gradient check failed: max relative error {0:e} exceeds {1:e}")]
    GradCheck(f64, f64),
    #[error(transparent)]
    Train(#[from] tetrad_train::TrainError),
    #[error(transparent)]
    Data(#[from] tetrad_data::DataError),
    #[error(transparent)]
    Core(#[from] tetrad_core::Error),
    #[error(transparent)]
    Metrics(#[from] tetrad_metrics::MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::Exists(_) => 4,
            CliError::Missing(_) => 5,
            CliError::NoStage1 => 6,
            CliError::GradCheck(..) => 7,
            CliError::Train(tetrad_train::TrainError::NonFinite { .. }) => 8,
            CliError::Train(tetrad_train::TrainError::Config(_)) => 3,
            CliError::Train(_) => 9,
            CliError::Data(tetrad_data::DataError::Transport { .. }) => 10,
            CliError::Data(tetrad_data::DataError::Config(_)) => 3,
            CliError::Data(_) => 11,
            CliError::Core(_) | CliError::Metrics(_) => 12,
            CliError::Io(_) | CliError::Json(_) => 13,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
