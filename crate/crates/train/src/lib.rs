//! Two-stage training, evaluation and the ablation grid.

pub mod adam;
pub mod config;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod grid;
pub mod pipeline;
pub mod prep;
pub mod trainer;

pub use adam::{Adam, AdamConfig};
pub use config::{stage1_trainable, stage2_trainable, AblationConfig, EvalConfig, ModelSpec, RunConfig, StageConfig};
pub use error::{Result, TrainError};
pub use eval::{evaluate, EvalOptions, Sanity};
pub use grid::{default_grid, run_ablation_grid, GridCell, GridConfig, GridResult};
pub use pipeline::Corpus;
pub use prep::{build_tokenizer, prepare, prepare_all, Datasets, Example};
pub use trainer::{begin_stage2, epoch_order, load_model, save_model, StepLog, Trainer};
