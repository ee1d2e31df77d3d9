use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("audio of {samples} samples is shorter than one frame of {frame}")]
    TooShort { samples: usize, frame: usize },
    #[error("invalid framing: frame {frame}, hop {hop} (need frame > hop > 0)")]
    Framing { frame: usize, hop: usize },
    #[error("invalid audio: {0}")]
    InvalidAudio(String),
    #[error("feature text parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = FeatureError> = std::result::Result<T, E>;
