use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Core(#[from] tetrad_core::Error),
    #[error(transparent)]
    Data(#[from] tetrad_data::DataError),
    #[error(transparent)]
    Metrics(#[from] tetrad_metrics::MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("configuration error: {0}")]
    Config(String),
    /// Training stopped on a NaN/inf loss or gradient.
    #[error("non-finite {what} at step {step} (epoch {epoch}, lr {lr}, examples [{examples}])")]
    NonFinite { what: String, step: u64, epoch: usize, lr: f64, examples: String },
    #[error("stage {stage}: {msg}")]
    Stage { stage: u8, msg: String },
    #[error("example `{id}`: {msg}")]
    Example { id: String, msg: String },
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

pub(crate) fn config(msg: impl Into<String>) -> TrainError {
    TrainError::Config(msg.into())
}
