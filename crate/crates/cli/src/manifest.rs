//! Run manifests: what ran, with which resolved config, on which bytes.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    /// Fully resolved configuration (flags over file over defaults).
    pub config: serde_json::Value,
    pub inputs: Vec<Hashed>,
    pub outputs: Vec<Hashed>,
    /// Tree hash over every output file.
    pub content_hash: String,
    pub started_unix: u64,
    pub finished_unix: u64,
}

/// A file or directory and its tree hash.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hashed {
    pub path: String,
    pub sha256: String,
}

impl Hashed {
    pub fn of(path: &Path) -> Result<Self> {
        let base = if path.is_dir() { path } else { path.parent().unwrap_or(Path::new("")) };
        Ok(Self { path: path.display().to_string(), sha256: tree_hash(base, &[path.to_path_buf()])? })
    }
}

pub fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Git-style blob hash (`blob <len>\0<bytes>`), SHA-256 flavoured.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            walk(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Hash over every file under the given paths (directories recursively),
/// keyed by path relative to `base` and independent of listing order.
/// Manifests themselves are skipped.
pub fn tree_hash(base: &Path, paths: &[PathBuf]) -> Result<String> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            walk(p, &mut files)?;
        } else if p.exists() {
            files.push(p.clone());
        } else {
            return Err(CliError::Missing(p.clone()));
        }
    }
    let mut lines: Vec<String> = files
        .iter()
        .filter(|f| f.file_name().and_then(|n| n.to_str()) != Some(MANIFEST_FILE))
        .map(|f| {
            let rel = f.strip_prefix(base).unwrap_or(f).to_string_lossy().replace('\\', "/");
            Ok(format!("{} {rel}\n", blob_hash(&fs::read(f)?)))
        })
        .collect::<Result<_>>()?;
    lines.sort();
    Ok(hex(&Sha256::digest(lines.concat().as_bytes())))
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?)
    }
}

/// Refuses to reuse a non-empty directory unless forced.
pub fn claim_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.is_file() {
        return Err(CliError::Exists(dir.to_path_buf()));
    }
    let occupied = dir.is_dir() && fs::read_dir(dir)?.next().is_some();
    if occupied && !force {
        return Err(CliError::Exists(dir.to_path_buf()));
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Refuses to replace an existing file unless forced.
pub fn claim_file(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(CliError::Exists(path.to_path_buf()));
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_frames_length() {
        assert_ne!(blob_hash(b"ab"), blob_hash(b"abc"));
        assert_eq!(blob_hash(b""), blob_hash(b""));
    }

    #[test]
    fn tree_hash_ignores_order_and_manifest() {
        let d = tempfile::tempdir().unwrap();
        fs::write(d.path().join("a"), "1").unwrap();
        fs::create_dir(d.path().join("s")).unwrap();
        fs::write(d.path().join("s/b"), "2").unwrap();
        let h = tree_hash(d.path(), &[d.path().to_path_buf()]).unwrap();
        fs::write(d.path().join(MANIFEST_FILE), "{}").unwrap();
        assert_eq!(tree_hash(d.path(), &[d.path().to_path_buf()]).unwrap(), h);
        let swapped = tree_hash(d.path(), &[d.path().join("s"), d.path().join("a")]).unwrap();
        assert_eq!(swapped, h);
        fs::write(d.path().join("a"), "3").unwrap();
        assert_ne!(tree_hash(d.path(), &[d.path().to_path_buf()]).unwrap(), h);
    }

    #[test]
    fn claims() {
        let d = tempfile::tempdir().unwrap();
        let sub = d.path().join("out");
        claim_dir(&sub, false).unwrap();
        claim_dir(&sub, false).unwrap(); // still empty
        fs::write(sub.join("x"), "").unwrap();
        assert!(matches!(claim_dir(&sub, false), Err(CliError::Exists(_))));
        claim_dir(&sub, true).unwrap();
        assert!(claim_file(&sub.join("x"), false).is_err());
        claim_file(&sub.join("y"), false).unwrap();
    }
}
