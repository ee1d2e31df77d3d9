//! Frozen-encoder outputs per record, computed once per encoder config.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tetrad_core::{ClipEmbeddingSet, Encoder, EncoderConfig, Modality};

use crate::error::{invalid, Result};
use crate::jsonl::{read_jsonl, write_jsonl};
use crate::record::{Music4wayRecord, RecordMedia};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordEmbeddings {
    pub id: String,
    pub music: ClipEmbeddingSet,
    pub video: ClipEmbeddingSet,
    pub image: ClipEmbeddingSet,
}

impl RecordEmbeddings {
    pub fn get(&self, m: Modality) -> &ClipEmbeddingSet {
        match m {
            Modality::Music => &self.music,
            Modality::Video => &self.video,
            Modality::Image => &self.image,
        }
    }
}

pub fn encode_media(encoder: &Encoder, id: &str, media: &RecordMedia) -> Result<RecordEmbeddings> {
    Ok(RecordEmbeddings {
        id: id.to_string(),
        music: encoder.encode_music(&media.music)?,
        video: encoder.encode_video(&media.video)?,
        image: encoder.encode_image(&media.image)?,
    })
}

/// Short fingerprint of an encoder config.
pub fn config_hash(config: &EncoderConfig) -> String {
    let json = serde_json::to_string(config).expect("plain struct");
    let d = Sha256::digest(json.as_bytes());
    d.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

pub fn cache_path(root: &Path, config: &EncoderConfig) -> PathBuf {
    root.join(format!("embeddings-{}.jsonl", config_hash(config)))
}

pub type EmbeddingTable = HashMap<String, RecordEmbeddings>;

/// Loads the cache file under `root` for this config, or encodes every
/// record's media and writes it.
pub fn load_or_build(root: &Path, records: &[Music4wayRecord], config: &EncoderConfig) -> Result<EmbeddingTable> {
    let path = cache_path(root, config);
    let mut table: EmbeddingTable = if path.exists() {
        read_jsonl::<RecordEmbeddings>(&path)?.into_iter().map(|e| (e.id.clone(), e)).collect()
    } else {
        HashMap::new()
    };
    let missing: Vec<&Music4wayRecord> = records.iter().filter(|r| !table.contains_key(&r.id)).collect();
    if missing.is_empty() {
        return Ok(table);
    }
    info!("encoding {} record(s) into {}", missing.len(), path.display());
    let encoder = Encoder::new(config.clone())?;
    for r in missing {
        let media = RecordMedia::load(root, &r.media)?;
        table.insert(r.id.clone(), encode_media(&encoder, &r.id, &media)?);
    }
    let mut rows: Vec<&RecordEmbeddings> = table.values().collect();
    rows.sort_by(|a, b| a.id.cmp(&b.id));
    write_jsonl(&path, &rows)?;
    Ok(table)
}

pub fn lookup<'a>(table: &'a EmbeddingTable, id: &str) -> Result<&'a RecordEmbeddings> {
    table.get(id).ok_or_else(|| invalid("embeddings", format!("no cached embeddings for `{id}`")))
}
