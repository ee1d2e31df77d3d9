//! Per-example scores, mean aggregates and their files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::text::{bleu, rouge_l, tokenize};
use crate::{MetricsError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Triple {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// A plug-in similarity scorer (for example an embedding-based one).
pub trait ExternalScorer {
    /// Column name in reports.
    fn name(&self) -> &str;
    fn score(&self, candidate: &str, reference: &str) -> std::result::Result<Triple, String>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub id: String,
    pub candidate: String,
    pub reference: String,
    pub bleu1: f64,
    pub bleu: f64,
    pub rouge_l: Triple,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external: Option<Triple>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    /// Set when this example could not be scored (generation or scorer
    /// failure); such rows are left out of the aggregates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ExampleScore {
    pub fn score(id: &str, candidate: &str, reference: &str, scorer: Option<&dyn ExternalScorer>) -> Self {
        let (c, r) = (tokenize(candidate), tokenize(reference));
        let b1 = bleu(&c, &r, 1);
        let b4 = bleu(&c, &r, 4);
        let rl = rouge_l(&c, &r);
        let mut flags = Vec::new();
        if c.is_empty() {
            flags.push("empty_candidate".to_string());
        } else if b4.zero_flag {
            flags.push("bleu_zero_ngrams".to_string());
        }
        if rl.empty_flag {
            flags.push("rouge_both_empty".to_string());
        }
        let (external, error) = match scorer.map(|s| s.score(candidate, reference)) {
            None => (None, None),
            Some(Ok(t)) => (Some(t), None),
            Some(Err(e)) => (None, Some(format!("external scorer: {e}"))),
        };
        Self {
            id: id.to_string(),
            candidate: candidate.to_string(),
            reference: reference.to_string(),
            bleu1: b1.score,
            bleu: b4.score,
            rouge_l: Triple { precision: rl.precision, recall: rl.recall, f1: rl.f1 },
            external,
            flags,
            error,
        }
    }

    pub fn failed(id: &str, reference: &str, error: String) -> Self {
        Self {
            id: id.to_string(),
            candidate: String::new(),
            reference: reference.to_string(),
            bleu1: 0.0,
            bleu: 0.0,
            rouge_l: Triple { precision: 0.0, recall: 0.0, f1: 0.0 },
            external: None,
            flags: Vec::new(),
            error: Some(error),
        }
    }
}

/// Arithmetic means over the successfully scored examples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub failed: usize,
    pub bleu1: f64,
    pub bleu: f64,
    pub rouge_l_p: f64,
    pub rouge_l_r: f64,
    pub rouge_l_f1: f64,
    pub external_name: Option<String>,
    pub external: Option<Triple>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Free-form label, e.g. dataset and mode.
    pub label: String,
    pub examples: Vec<ExampleScore>,
    pub aggregate: Aggregate,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

impl EvalReport {
    pub fn new(label: &str, examples: Vec<ExampleScore>, external_name: Option<&str>) -> Self {
        let ok: Vec<&ExampleScore> = examples.iter().filter(|e| e.error.is_none()).collect();
        let external = external_name.and_then(|_| {
            let ts: Vec<Triple> = ok.iter().filter_map(|e| e.external).collect();
            (!ts.is_empty()).then(|| Triple {
                precision: mean(ts.iter().map(|t| t.precision)),
                recall: mean(ts.iter().map(|t| t.recall)),
                f1: mean(ts.iter().map(|t| t.f1)),
            })
        });
        let aggregate = Aggregate {
            n: ok.len(),
            failed: examples.len() - ok.len(),
            bleu1: mean(ok.iter().map(|e| e.bleu1)),
            bleu: mean(ok.iter().map(|e| e.bleu)),
            rouge_l_p: mean(ok.iter().map(|e| e.rouge_l.precision)),
            rouge_l_r: mean(ok.iter().map(|e| e.rouge_l.recall)),
            rouge_l_f1: mean(ok.iter().map(|e| e.rouge_l.f1)),
            external_name: external.map(|_| external_name.unwrap_or_default().to_string()),
            external,
        };
        Self { label: label.to_string(), examples, aggregate }
    }

    /// Scores `(id, candidate, reference)` triples.
    pub fn score_all<'a, I>(label: &str, items: I, scorer: Option<&dyn ExternalScorer>) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    {
        let examples = items.into_iter().map(|(id, c, r)| ExampleScore::score(id, c, r, scorer)).collect();
        Self::new(label, examples, scorer.map(|s| s.name()))
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for e in &self.examples {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), self)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
    }

    /// Header plus one row per report.
    pub fn write_csv(reports: &[&EvalReport], path: &Path) -> Result<()> {
        let ext = reports.iter().find_map(|r| r.aggregate.external_name.clone());
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["label", "n", "failed", "bleu1", "bleu", "rouge_l_p", "rouge_l_r", "rouge_l_f1"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        if let Some(name) = &ext {
            for s in ["p", "r", "f1"] {
                header.push(format!("{name}_{s}"));
            }
        }
        w.write_record(&header)?;
        for r in reports {
            let a = &r.aggregate;
            let mut row = vec![
                r.label.clone(),
                a.n.to_string(),
                a.failed.to_string(),
                a.bleu1.to_string(),
                a.bleu.to_string(),
                a.rouge_l_p.to_string(),
                a.rouge_l_r.to_string(),
                a.rouge_l_f1.to_string(),
            ];
            if ext.is_some() {
                match a.external {
                    Some(t) => row.extend([t.precision, t.recall, t.f1].map(|v| v.to_string())),
                    None => row.extend(["".to_string(), "".to_string(), "".to_string()]),
                }
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Values divided by their axis maximum; axes whose maximum is not
/// positive are flagged and emitted as zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct Radar {
    pub values: Vec<Vec<f64>>,
    pub flagged_axes: Vec<usize>,
}

/// `results[model][axis]`.
pub fn radar_normalize(results: &[Vec<f64>]) -> Result<Radar> {
    let axes = results.first().map(Vec::len).unwrap_or(0);
    if results.iter().any(|r| r.len() != axes) {
        return Err(MetricsError::Invalid("radar rows differ in length".into()));
    }
    let mut flagged = Vec::new();
    let mut values = vec![vec![0.0; axes]; results.len()];
    for a in 0..axes {
        let max = results.iter().map(|r| r[a]).fold(f64::NEG_INFINITY, f64::max);
        if !(max > 0.0 && max.is_finite()) {
            flagged.push(a);
            continue;
        }
        for (m, r) in results.iter().enumerate() {
            values[m][a] = r[a] / max;
        }
    }
    Ok(Radar { values, flagged_axes: flagged })
}

pub fn write_radar_csv(path: &Path, models: &[String], axes: &[String], radar: &Radar) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["model".to_string()];
    header.extend(axes.iter().cloned());
    w.write_record(&header)?;
    for (m, row) in models.iter().zip(&radar.values) {
        let mut rec = vec![m.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
