//! The ablation grid: configurations × seeds, trained at desk scale and
//! scored on the MI2T and MV2T test splits.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use tetrad_core::{Model, ParamStore};
use tetrad_data::{TargetVariant, TaskTag};
use tetrad_metrics::EvalReport;

use crate::config::{AblationConfig, ModelSpec, StageConfig};
use crate::error::Result;
use crate::eval::Sanity;
use crate::pipeline::{init_model, run_benchmarks, run_stage1, run_stage2, Corpus};

pub const BENCHMARKS: [TaskTag; 2] = [TaskTag::Mi2t, TaskTag::Mv2t];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridCell {
    pub name: String,
    pub ablation: AblationConfig,
}

fn cell(name: &str, mwit: bool, mie: bool, pt_layers: usize) -> GridCell {
    GridCell {
        name: name.to_string(),
        ablation: AblationConfig { mwit, mie, pt_layers, target_variant: TargetVariant::Full },
    }
}

/// Eight rows: the baseline without multi-way data with and without MIE,
/// then the multi-way rows with MIE and with 0/1/2/6 fusion layers, and one
/// fusion layer without MIE.
pub fn default_grid() -> Vec<GridCell> {
    vec![
        cell("vanilla", false, false, 0),
        cell("mie", false, true, 0),
        cell("mwit", true, false, 0),
        cell("alpha", true, true, 0),
        cell("mwit-pt1", true, false, 1),
        cell("beta", true, true, 1),
        cell("mwit-mie-pt2", true, true, 2),
        cell("mwit-mie-pt6", true, true, 6),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub model: ModelSpec,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub seeds: Vec<u64>,
    /// Test examples scored per benchmark.
    pub eval_limit: Option<usize>,
    pub max_new: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            model: ModelSpec {
                d_model: 32,
                n_layers: 2,
                n_heads: 2,
                fusion_heads: 2,
                lora_rank: 16,
                lora_alpha: 16.0,
                ..ModelSpec::default()
            },
            stage1: StageConfig { lr: 1e-3, max_steps: Some(100), ..StageConfig::stage1() },
            stage2: StageConfig { lr: 1e-3, max_steps: Some(200), ..StageConfig::stage2() },
            seeds: vec![0, 1, 2],
            eval_limit: Some(16),
            max_new: 160,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRun {
    pub cell: String,
    pub label: String,
    pub seed: u64,
    pub seconds: f64,
    pub reports: Vec<EvalReport>,
    /// A failed cell is recorded and the grid moves on.
    pub error: Option<String>,
}

/// Mean over successful seeds, per benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub cell: String,
    pub label: String,
    pub seeds_ok: usize,
    pub seeds_failed: usize,
    /// Per benchmark: BLEU-1, BLEU, ROUGE-L P, R, F1.
    pub scores: Vec<(String, [f64; 5])>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub runs: Vec<CellRun>,
}

fn one_cell(
    corpus: &Corpus<'_>,
    cfg: &GridConfig,
    cell: &GridCell,
    seed: u64,
    stage1_cache: &mut HashMap<(usize, bool, u64), (Model, ParamStore<f32>)>,
) -> Result<Vec<EvalReport>> {
    let ab = &cell.ablation;
    let key = (ab.pt_layers, ab.mie, seed);
    // stage 1 does not see the multi-way data, so cells differing only in
    // MWIT share it
    let (mut model, mut store) = match stage1_cache.get(&key) {
        Some((m, s)) => (m.clone(), s.clone()),
        None => {
            let (model, mut store) = init_model(corpus, &cfg.model, ab, seed)?;
            run_stage1(corpus, &model, &mut store, &cfg.model, ab, &cfg.stage1, seed)?;
            stage1_cache.insert(key, (model.clone(), store.clone()));
            (model, store)
        }
    };
    run_stage2(corpus, &mut model, &mut store, &cfg.model, ab, &cfg.stage2, seed)?;
    run_benchmarks(corpus, &model, &store, &cfg.model, ab, &BENCHMARKS, cfg.eval_limit, cfg.max_new, Sanity::Full)
}

/// Trains and scores every cell for every seed. `on_run` sees each
/// finished run (for progress output or incremental files).
pub fn run_ablation_grid(
    corpus: &Corpus<'_>,
    cfg: &GridConfig,
    cells: &[GridCell],
    mut on_run: impl FnMut(&CellRun),
) -> GridResult {
    let mut result = GridResult::default();
    let mut cache = HashMap::new();
    for &seed in &cfg.seeds {
        for c in cells {
            let t = Instant::now();
            let (reports, error) = match one_cell(corpus, cfg, c, seed, &mut cache) {
                Ok(r) => (r, None),
                Err(e) => {
                    warn!("grid cell {} seed {seed} failed: {e}", c.name);
                    (Vec::new(), Some(e.to_string()))
                }
            };
            let run = CellRun {
                cell: c.name.clone(),
                label: c.ablation.label(),
                seed,
                seconds: t.elapsed().as_secs_f64(),
                reports,
                error,
            };
            info!("grid cell {} seed {seed}: {:.1}s", c.name, run.seconds);
            on_run(&run);
            result.runs.push(run);
        }
        // stage-1 weights are per seed
        cache.clear();
    }
    result
}

impl GridResult {
    /// One row per cell, in first-seen order.
    pub fn rows(&self) -> Vec<GridRow> {
        let mut order: Vec<&str> = Vec::new();
        for r in &self.runs {
            if !order.contains(&r.cell.as_str()) {
                order.push(&r.cell);
            }
        }
        order
            .into_iter()
            .map(|name| {
                let runs: Vec<&CellRun> = self.runs.iter().filter(|r| r.cell == name).collect();
                let ok: Vec<&CellRun> = runs.iter().copied().filter(|r| r.error.is_none()).collect();
                let mut scores = Vec::new();
                for b in BENCHMARKS {
                    let aggs: Vec<_> = ok
                        .iter()
                        .filter_map(|r| r.reports.iter().find(|x| x.label == b.name()))
                        .map(|x| &x.aggregate)
                        .collect();
                    let n = aggs.len().max(1) as f64;
                    let mut s = [0.0; 5];
                    for a in &aggs {
                        for (k, v) in [a.bleu1, a.bleu, a.rouge_l_p, a.rouge_l_r, a.rouge_l_f1].into_iter().enumerate()
                        {
                            s[k] += v / n;
                        }
                    }
                    scores.push((b.name().to_string(), s));
                }
                GridRow {
                    cell: name.to_string(),
                    label: runs[0].label.clone(),
                    seeds_ok: ok.len(),
                    seeds_failed: runs.len() - ok.len(),
                    scores,
                }
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["cell".to_string(), "label".into(), "seeds_ok".into(), "seeds_failed".into()];
        for b in BENCHMARKS {
            for m in ["bleu1", "bleu", "rouge_l_p", "rouge_l_r", "rouge_l_f1"] {
                header.push(format!("{}_{m}", b.name()));
            }
        }
        w.write_record(&header)?;
        for row in self.rows() {
            let mut rec = vec![row.cell, row.label, row.seeds_ok.to_string(), row.seeds_failed.to_string()];
            for (_, s) in &row.scores {
                rec.extend(s.iter().map(|v| format!("{v:.6}")));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Markdown table, one block of five metric columns per benchmark.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Config |");
        for b in BENCHMARKS {
            for m in ["BLEU-1", "BLEU", "R-L P", "R-L R", "R-L F1"] {
                let _ = write!(s, " {} {m} |", b.name());
            }
        }
        s.push_str(" seeds |\n|---|");
        s.push_str(&"---:|".repeat(BENCHMARKS.len() * 5 + 1));
        s.push('\n');
        for row in self.rows() {
            let _ = write!(s, "| {} ({}) |", row.label, row.cell);
            for (_, v) in &row.scores {
                for x in v {
                    let _ = write!(s, " {:.2} |", 100.0 * x);
                }
            }
            let _ = writeln!(s, " {}/{} |", row.seeds_ok, row.seeds_ok + row.seeds_failed);
        }
        s
    }

    pub fn write_markdown(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_markdown())?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
