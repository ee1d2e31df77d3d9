use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{DataError, Result};
use crate::instructions::InstructionPair;
use crate::record::Music4wayRecord;

/// Items with a dataset-unique id.
pub trait Keyed {
    fn key(&self) -> &str;
}

impl Keyed for Music4wayRecord {
    fn key(&self) -> &str {
        &self.id
    }
}

impl Keyed for InstructionPair {
    fn key(&self) -> &str {
        &self.id
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Blank lines are skipped; anything else must parse.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| DataError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn check_unique<T: Keyed>(items: &[T]) -> Result<()> {
    let mut seen = HashSet::new();
    for it in items {
        if !seen.insert(it.key()) {
            return Err(DataError::DuplicateId(it.key().to_string()));
        }
    }
    Ok(())
}

pub fn load_records(path: &Path) -> Result<Vec<Music4wayRecord>> {
    let records: Vec<Music4wayRecord> = read_jsonl(path)?;
    check_unique(&records)?;
    for r in &records {
        r.validate()?;
    }
    Ok(records)
}

pub fn load_pairs(path: &Path) -> Result<Vec<InstructionPair>> {
    let pairs: Vec<InstructionPair> = read_jsonl(path)?;
    check_unique(&pairs)?;
    for p in &pairs {
        p.validate()?;
    }
    Ok(pairs)
}
