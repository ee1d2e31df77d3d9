//! From instruction pairs to token ids and embedding inputs.

use serde::{Deserialize, Serialize};
use tetrad_core::{ModalInputs, Modality, Tokenizer};
use tetrad_data::cache::lookup;
use tetrad_data::instructions::inline_text;
use tetrad_data::{
    build_dataset, DatasetKind, EmbeddingTable, InstructionPair, Music4wayRecord, Split, TargetVariant, TaskTag,
    Unifier,
};

use crate::config::AblationConfig;
use crate::error::{Result, TrainError};

/// One tokenized training or evaluation example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub task: TaskTag,
    pub inputs: ModalInputs,
    pub query: Vec<usize>,
    pub target: Vec<usize>,
    /// Target text, the reference for scoring.
    pub reference: String,
}

impl Example {
    /// Rows of the assembled training sequence.
    pub fn seq_len(&self) -> usize {
        let media: usize = Modality::ALL.iter().filter_map(|&m| self.inputs.get(m)).map(|s| s.count()).sum();
        media + self.inputs.text.len() + self.query.len() + self.target.len() + 1
    }
}

/// Every dataset of a unified corpus.
#[derive(Clone, Debug, Default)]
pub struct Datasets {
    /// Music, image and video captioning.
    pub captions: Vec<InstructionPair>,
    pub mi2t: Vec<InstructionPair>,
    pub mv2t: Vec<InstructionPair>,
    pub any2t: Vec<InstructionPair>,
}

fn in_split(pairs: &[InstructionPair], split: Split) -> impl Iterator<Item = &InstructionPair> {
    pairs.iter().filter(move |p| p.split == Some(split))
}

impl Datasets {
    /// `records` must already carry unified captions.
    pub fn build(
        records: &[Music4wayRecord],
        unifier: &dyn Unifier,
        variant: TargetVariant,
        seed: u64,
    ) -> Result<Self> {
        let get = |k| build_dataset(records, k, unifier, variant, seed).map(|d| d.pairs);
        Ok(Self {
            captions: get(DatasetKind::M2t)?,
            mi2t: get(DatasetKind::Mi2t)?,
            mv2t: get(DatasetKind::Mv2t)?,
            any2t: get(DatasetKind::Any2t)?,
        })
    }

    /// Regroups pairs loaded from files by task.
    pub fn from_pairs(pairs: impl IntoIterator<Item = InstructionPair>) -> Self {
        let mut d = Datasets::default();
        for p in pairs {
            match p.task {
                TaskTag::Mi2t => d.mi2t.push(p),
                TaskTag::Mv2t => d.mv2t.push(p),
                TaskTag::Any2t => d.any2t.push(p),
                _ => d.captions.push(p),
            }
        }
        d
    }

    pub fn all(&self) -> impl Iterator<Item = &InstructionPair> {
        self.captions.iter().chain(&self.mi2t).chain(&self.mv2t).chain(&self.any2t)
    }

    /// Stage-1 alignment data: captioning only.
    pub fn stage1(&self, split: Split) -> Vec<&InstructionPair> {
        in_split(&self.captions, split).collect()
    }

    /// Stage-2 instruction data: captioning, plus MI2T and MV2T when
    /// multi-way instruction tuning is on. Any2T is held out for testing.
    pub fn stage2(&self, split: Split, mwit: bool) -> Vec<&InstructionPair> {
        let mut out: Vec<&InstructionPair> = in_split(&self.captions, split).collect();
        if mwit {
            out.extend(in_split(&self.mi2t, split).chain(in_split(&self.mv2t, split)));
        }
        out
    }

    pub fn benchmark(&self, task: TaskTag, split: Split) -> Vec<&InstructionPair> {
        let pool = match task {
            TaskTag::Mi2t => &self.mi2t,
            TaskTag::Mv2t => &self.mv2t,
            TaskTag::Any2t => &self.any2t,
            _ => &self.captions,
        };
        in_split(pool, split).filter(|p| p.task == task).collect()
    }
}

/// Texts the vocabulary is built from: inputs, instructions, targets.
pub fn corpus_texts<'a>(pairs: impl IntoIterator<Item = &'a InstructionPair>) -> Vec<&'a str> {
    let mut out = Vec::new();
    for p in pairs {
        out.push(p.input.as_str());
        out.push(p.instruction.as_str());
        out.push(p.target.as_str());
    }
    out
}

pub fn build_tokenizer<'a>(pairs: impl IntoIterator<Item = &'a InstructionPair>, cap: usize) -> Result<Tokenizer> {
    Ok(Tokenizer::build(corpus_texts(pairs), cap)?)
}

/// Tokenizes one pair and attaches its cached embeddings. The input text
/// (`e_t`) keeps its placeholders and is empty when the input is nothing
/// but placeholders.
pub fn prepare(
    pair: &InstructionPair,
    table: &EmbeddingTable,
    tokenizer: &Tokenizer,
    ablation: &AblationConfig,
) -> Result<Example> {
    let rid = pair.record_id.as_deref().ok_or_else(|| TrainError::Example {
        id: pair.id.clone(),
        msg: "pair has no source record, so no embeddings".into(),
    })?;
    let emb = lookup(table, rid)?;
    let mut inputs = ModalInputs::default();
    for m in pair.slots() {
        let set = Some(emb.get(m).clone());
        match m {
            Modality::Music => inputs.music = set,
            Modality::Video => inputs.video = set,
            Modality::Image => inputs.image = set,
        }
    }
    if !inline_text(&pair.input).is_empty() {
        inputs.text = tokenizer.encode(&pair.input);
    }
    Ok(Example {
        id: pair.id.clone(),
        task: pair.task,
        inputs: ablation.shape_inputs(inputs),
        query: tokenizer.encode(&pair.instruction),
        target: tokenizer.encode(&pair.target),
        reference: pair.target.clone(),
    })
}

/// Prepares every pair; an example that would not fit the context is an
/// error naming it.
pub fn prepare_all(
    pairs: &[&InstructionPair],
    table: &EmbeddingTable,
    tokenizer: &Tokenizer,
    ablation: &AblationConfig,
    max_seq_len: usize,
) -> Result<Vec<Example>> {
    pairs
        .iter()
        .map(|p| {
            let ex = prepare(p, table, tokenizer, ablation)?;
            let need = ex.seq_len();
            if need > max_seq_len {
                return Err(TrainError::Example {
                    id: ex.id,
                    msg: format!("needs {need} positions, the model has {max_seq_len}"),
                });
            }
            Ok(ex)
        })
        .collect()
}
