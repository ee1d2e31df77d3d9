//! Stage 1 then stage 2 for one configuration, and the test-split
//! benchmarks.

use std::path::Path;

use log::info;
use tetrad_core::{Model, ParamStore, Tokenizer};
use tetrad_data::{EmbeddingTable, Split, TaskTag};
use tetrad_metrics::EvalReport;

use crate::config::{AblationConfig, ModelSpec, StageConfig};
use crate::error::Result;
use crate::eval::{evaluate, EvalOptions, Sanity};
use crate::prep::{prepare_all, Datasets, Example};
use crate::trainer::{begin_stage2, StepLog, Trainer};

/// Shared inputs of every run on one corpus.
pub struct Corpus<'a> {
    pub datasets: &'a Datasets,
    pub table: &'a EmbeddingTable,
    pub tokenizer: &'a Tokenizer,
    pub d_enc: usize,
}

impl Corpus<'_> {
    pub fn examples(
        &self,
        pairs: &[&tetrad_data::InstructionPair],
        ablation: &AblationConfig,
        spec: &ModelSpec,
    ) -> Result<Vec<Example>> {
        prepare_all(pairs, self.table, self.tokenizer, ablation, spec.max_seq_len)
    }

    /// Test examples of one benchmark, the first `limit` of them.
    pub fn benchmark(
        &self,
        task: TaskTag,
        ablation: &AblationConfig,
        spec: &ModelSpec,
        limit: Option<usize>,
    ) -> Result<Vec<Example>> {
        let mut pairs = self.datasets.benchmark(task, Split::Test);
        if let Some(n) = limit {
            pairs.truncate(n);
        }
        self.examples(&pairs, ablation, spec)
    }
}

/// A freshly initialised model for `ablation`.
pub fn init_model(
    corpus: &Corpus<'_>,
    spec: &ModelSpec,
    ablation: &AblationConfig,
    seed: u64,
) -> Result<(Model, ParamStore<f32>)> {
    let cfg = spec.model_config(corpus.tokenizer.len(), corpus.d_enc, ablation.pt_layers);
    let mut store = ParamStore::new();
    let model = Model::new(&mut store, cfg, seed)?;
    Ok((model, store))
}

pub fn run_stage1(
    corpus: &Corpus<'_>,
    model: &Model,
    store: &mut ParamStore<f32>,
    spec: &ModelSpec,
    ablation: &AblationConfig,
    stage: &StageConfig,
    seed: u64,
) -> Result<Vec<StepLog>> {
    let data = corpus.examples(&corpus.datasets.stage1(Split::Train), ablation, spec)?;
    info!("stage 1: {} examples", data.len());
    let mut t = Trainer::new(model, store, stage.clone(), ablation.mode(), seed)?;
    t.run(store, &data, None)?;
    Ok(t.log)
}

/// Attaches LoRA (if needed) and runs stage 2.
#[allow(clippy::too_many_arguments)]
pub fn run_stage2(
    corpus: &Corpus<'_>,
    model: &mut Model,
    store: &mut ParamStore<f32>,
    spec: &ModelSpec,
    ablation: &AblationConfig,
    stage: &StageConfig,
    seed: u64,
) -> Result<Vec<StepLog>> {
    begin_stage2(model, store, seed ^ 0x10a)?;
    let data = corpus.examples(&corpus.datasets.stage2(Split::Train, ablation.mwit), ablation, spec)?;
    info!("stage 2: {} examples", data.len());
    let mut t = Trainer::new(&*model, store, stage.clone(), ablation.mode(), seed)?;
    t.run(store, &data, None)?;
    Ok(t.log)
}

/// Scores `model` on the test split of each task.
#[allow(clippy::too_many_arguments)]
pub fn run_benchmarks(
    corpus: &Corpus<'_>,
    model: &Model,
    store: &ParamStore<f32>,
    spec: &ModelSpec,
    ablation: &AblationConfig,
    tasks: &[TaskTag],
    limit: Option<usize>,
    max_new: usize,
    sanity: Sanity,
) -> Result<Vec<EvalReport>> {
    let opts = EvalOptions { mode: ablation.mode(), max_new, sanity };
    let mut out = Vec::new();
    for &task in tasks {
        let ex = corpus.benchmark(task, ablation, spec, limit)?;
        let label = match sanity {
            Sanity::Full => task.name().to_string(),
            Sanity::TextOnly => format!("{}/text-only", task.name()),
        };
        out.push(evaluate(model, store, corpus.tokenizer, &ex, &label, opts));
    }
    Ok(out)
}

/// Writes each report as `<label>.json` and per-example `<label>.jsonl`
/// plus an `aggregate.csv` over all of them.
pub fn write_reports(dir: &Path, reports: &[EvalReport]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for r in reports {
        let stem = r.label.replace('/', "-");
        r.write_json(&dir.join(format!("{stem}.json")))?;
        r.write_jsonl(&dir.join(format!("{stem}.jsonl")))?;
    }
    let refs: Vec<&EvalReport> = reports.iter().collect();
    EvalReport::write_csv(&refs, &dir.join("aggregate.csv"))?;
    Ok(())
}
