//! Name-addressed tensor checkpoints.
//!
//! A checkpoint directory holds `manifest.json` (name → shape → byte offset)
//! and `tensors.bin`, a single buffer of little-endian 32-bit floats laid out
//! in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BUFFER_FILE: &str = "tensors.bin";
const DTYPE: &str = "f32-le";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the buffer file.
    pub offset: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trainable: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dtype: String,
    pub entries: Vec<ManifestEntry>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

/// One named tensor to be written.
pub struct Entry<'a, T> {
    pub name: String,
    pub tensor: &'a Tensor<T>,
    pub trainable: Option<bool>,
}

pub fn write_tensors<T: Scalar>(dir: &Path, entries: &[Entry<'_, T>], metadata: serde_json::Value) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut seen = std::collections::HashSet::new();
    let mut buf = Vec::new();
    let mut manifest = Manifest { dtype: DTYPE.to_string(), entries: Vec::with_capacity(entries.len()), metadata };
    for e in entries {
        if !seen.insert(e.name.as_str()) {
            return Err(Error::Checkpoint(format!("duplicate tensor name `{}`", e.name)));
        }
        manifest.entries.push(ManifestEntry {
            name: e.name.clone(),
            shape: e.tensor.shape().to_vec(),
            offset: buf.len(),
            trainable: e.trainable,
        });
        for &x in e.tensor.data() {
            let v = x.to_f32().unwrap_or(f32::NAN);
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(dir.join(BUFFER_FILE), &buf)?;
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = fs::read(dir.join(MANIFEST_FILE))?;
    let manifest: Manifest = serde_json::from_slice(&text)?;
    if manifest.dtype != DTYPE {
        return Err(Error::Checkpoint(format!("unsupported dtype `{}`", manifest.dtype)));
    }
    Ok(manifest)
}

/// Tensors in checkpoint order, keyed by parameter name.
pub type NamedTensors<T> = Vec<(String, Tensor<T>)>;

pub fn read_tensors<T: Scalar>(dir: &Path) -> Result<(Manifest, NamedTensors<T>)> {
    let manifest = read_manifest(dir)?;
    let buf = fs::read(dir.join(BUFFER_FILE))?;
    let mut out = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let n: usize = e.shape.iter().product();
        let end = e.offset + 4 * n;
        let bytes = buf
            .get(e.offset..end)
            .ok_or_else(|| Error::Checkpoint(format!("`{}` extends past the end of the buffer", e.name)))?;
        let data = bytes.chunks_exact(4).map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)).collect();
        out.push((e.name.clone(), Tensor::new(e.shape.clone(), data)?));
    }
    Ok((manifest, out))
}

pub fn save_store<T: Scalar>(dir: &Path, store: &ParamStore<T>, metadata: serde_json::Value) -> Result<Manifest> {
    let entries: Vec<Entry<'_, T>> = store
        .iter()
        .map(|(_, p)| Entry { name: p.name.clone(), tensor: &p.tensor, trainable: Some(p.trainable) })
        .collect();
    write_tensors(dir, &entries, metadata)
}

/// Loads every parameter of `store` by name. Missing names, unexpected
/// names and shape disagreements are errors naming the parameter.
pub fn load_store<T: Scalar>(dir: &Path, store: &mut ParamStore<T>) -> Result<Manifest> {
    let (manifest, tensors) = read_tensors::<T>(dir)?;
    let mut found = std::collections::HashSet::new();
    for (name, tensor) in tensors {
        let id = store
            .id(&name)
            .map_err(|_| Error::Checkpoint(format!("checkpoint parameter `{name}` does not exist in the model")))?;
        let p = store.get_mut(id);
        if p.tensor.shape() != tensor.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter `{name}`: checkpoint shape {:?} vs model shape {:?}",
                tensor.shape(),
                p.tensor.shape()
            )));
        }
        p.tensor = tensor;
        found.insert(name);
    }
    if let Some(missing) = store.names().into_iter().find(|n| !found.contains(n)) {
        return Err(Error::Checkpoint(format!("parameter `{missing}` missing from checkpoint")));
    }
    Ok(manifest)
}
