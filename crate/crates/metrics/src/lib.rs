//! Text-generation metrics (BLEU, ROUGE-L) and per-example evaluation reports.

pub mod report;
pub mod text;

pub use report::{
    radar_normalize, write_radar_csv, Aggregate, EvalReport, ExampleScore, ExternalScorer, Radar, Triple,
};
pub use text::{bleu, lcs_len, rouge_l, tokenize, Bleu, RougeL};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;
