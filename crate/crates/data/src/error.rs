use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error(transparent)]
    Core(#[from] tetrad_core::Error),
    #[error(transparent)]
    Feature(#[from] tetrad_music::FeatureError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}:{line}: {msg}")]
    Malformed { path: PathBuf, line: usize, msg: String },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("record `{id}` has no {field}")]
    Missing { id: String, field: &'static str },
    #[error("invalid {what}: {msg}")]
    Invalid { what: &'static str, msg: String },
    #[error("unifier request failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("config: {0}")]
    Config(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

pub(crate) fn invalid(what: &'static str, msg: impl Into<String>) -> DataError {
    DataError::Invalid { what, msg: msg.into() }
}
