use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{FeatureError, Result};

/// Mono waveform.
#[derive(Clone, Debug, PartialEq)]
pub struct RawMusic {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    sample_rate: u32,
    samples: usize,
    format: String,
}

impl RawMusic {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        let m = Self { samples, sample_rate };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(FeatureError::InvalidAudio("sample rate must be positive".into()));
        }
        if let Some(i) = self.samples.iter().position(|s| !s.is_finite()) {
            return Err(FeatureError::InvalidAudio(format!("non-finite sample at index {i}")));
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples `[start, start + len)`, zero-padded past the end.
    pub fn window(&self, start: usize, len: usize) -> RawMusic {
        let mut samples = vec![0.0; len];
        let end = (start + len).min(self.samples.len());
        if start < end {
            samples[..end - start].copy_from_slice(&self.samples[start..end]);
        }
        RawMusic { samples, sample_rate: self.sample_rate }
    }

    /// Writes `<path>` (little-endian f32 samples) and `<path>.json` (sample rate).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.samples.len() * 4);
        for s in &self.samples {
            bytes.extend_from_slice(&s.to_le_bytes());
        }
        fs::write(path, bytes)?;
        let sidecar =
            Sidecar { sample_rate: self.sample_rate, samples: self.samples.len(), format: "f32-le-mono".into() };
        fs::write(sidecar_path(path), serde_json::to_vec_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let sidecar: Sidecar = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
        let bytes = fs::read(path)?;
        if bytes.len() != sidecar.samples * 4 {
            return Err(FeatureError::InvalidAudio(format!(
                "{}: expected {} samples, found {} bytes",
                path.display(),
                sidecar.samples,
                bytes.len()
            )));
        }
        let samples = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Self::new(samples, sidecar.sample_rate)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}
