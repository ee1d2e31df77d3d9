//! Whole-corpus drivers: synthesis to disk, unification, dataset building.

use std::path::Path;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::instructions::{make_any2t, make_caption_pairs, make_mi2t, make_mv2t, make_target_variant, InstructionPair};
use crate::jsonl::write_jsonl;
use crate::record::{build_record, Music4wayRecord, RecordMedia};
use crate::split::assign_split;
use crate::synth::synth_one;
use crate::unify::{TargetVariant, Unifier};

pub const RECORDS_FILE: &str = "records.jsonl";

/// Synthesizes `count` records under `root` (media files plus
/// `records.jsonl`). Each record depends only on `seed` and its index.
pub fn synth_corpus(root: &Path, seed: u64, count: usize, test_fraction: f64) -> Result<Vec<Music4wayRecord>> {
    if count == 0 {
        return Err(invalid("synth_corpus", "count must be at least one"));
    }
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(invalid("synth_corpus", format!("test fraction {test_fraction} outside [0, 1]")));
    }
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let item = synth_one(seed, i)?;
        let split = assign_split(&item.id, seed, test_fraction);
        let built = build_record(&item.id, &item.music, &item.video, &item.params, split, item.seed)?;
        let media = RecordMedia { music: item.music, video: item.video, image: built.image };
        media.save(root, &built.record.media)?;
        records.push(built.record);
    }
    write_jsonl(&root.join(RECORDS_FILE), &records)?;
    Ok(records)
}

/// Fills every record's unified caption. Errors are returned as they are;
/// nothing falls back to another unifier.
pub fn unify_records(records: &[Music4wayRecord], unifier: &dyn Unifier) -> Result<Vec<Music4wayRecord>> {
    records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.unified_caption = Some(unifier.unify(&r)?);
            r.unifier = Some(unifier.kind());
            r.validate()?;
            Ok(r)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mi2t,
    Mv2t,
    Any2t,
    /// Music, image and video captioning.
    M2t,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Mi2t => "mi2t",
            DatasetKind::Mv2t => "mv2t",
            DatasetKind::Any2t => "any2t",
            DatasetKind::M2t => "m2t",
        }
    }
}

impl FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "mi2t" => Ok(DatasetKind::Mi2t),
            "mv2t" => Ok(DatasetKind::Mv2t),
            "any2t" => Ok(DatasetKind::Any2t),
            "m2t" => Ok(DatasetKind::M2t),
            _ => Err(format!("unknown dataset kind `{s}` (mi2t, mv2t, any2t, m2t)")),
        }
    }
}

/// Pairs built for one dataset, plus the records that were skipped.
#[derive(Clone, Debug, Default)]
pub struct BuiltDataset {
    pub pairs: Vec<InstructionPair>,
    pub skipped: Vec<(String, String)>,
}

/// One dataset from unified records. Any2T triplets that fail validation
/// are skipped with a warning; other failures abort.
pub fn build_dataset(
    records: &[Music4wayRecord],
    kind: DatasetKind,
    unifier: &dyn Unifier,
    variant: TargetVariant,
    seed: u64,
) -> Result<BuiltDataset> {
    let mut out = BuiltDataset::default();
    for r in records {
        match kind {
            DatasetKind::Mi2t | DatasetKind::Mv2t => {
                let p = if kind == DatasetKind::Mi2t { make_mi2t(r)? } else { make_mv2t(r)? };
                out.pairs.push(make_target_variant(&p, r, variant)?);
            }
            DatasetKind::M2t => out.pairs.extend(make_caption_pairs(r)?),
            DatasetKind::Any2t => match make_any2t(r, unifier, seed) {
                Ok(p) => out.pairs.push(p),
                Err(e @ crate::error::DataError::Invalid { .. }) => {
                    warn!("skipping {} for Any2T: {e}", r.id);
                    out.skipped.push((r.id.clone(), e.to_string()));
                }
                Err(e) => return Err(e),
            },
        }
    }
    Ok(out)
}
