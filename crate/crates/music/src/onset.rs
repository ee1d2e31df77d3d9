use crate::audio::RawMusic;
use crate::error::Result;
use crate::spectrum::{frame_center, stft};

/// Spectral-flux novelty curve, one value per STFT frame.
#[derive(Clone, Debug, PartialEq)]
pub struct OnsetEnvelope {
    pub values: Vec<f64>,
    pub frame: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

/// Frames between the compared spectra. Half a window at the desk
/// framing, which puts the flux maximum on the frame centred on a transient.
const FLUX_LAG: usize = 2;
const LOG_GAIN: f64 = 100.0;

impl OnsetEnvelope {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Frames per second.
    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    pub fn frame_time(&self, f: f64) -> f64 {
        let whole = frame_center(0, self.frame, self.hop, self.sample_rate);
        whole + f * self.hop as f64 / self.sample_rate as f64
    }

    /// Linear interpolation between frames; zero outside the curve.
    pub fn at(&self, f: f64) -> f64 {
        if f < 0.0 {
            return 0.0;
        }
        let i = f.floor() as usize;
        let frac = f - i as f64;
        let a = self.values.get(i).copied().unwrap_or(0.0);
        let b = self.values.get(i + 1).copied().unwrap_or(0.0);
        a + (b - a) * frac
    }
}

/// Half-wave rectified increase of log magnitude against the spectrum
/// `FLUX_LAG` frames earlier (silence before the first frame).
pub fn onset_envelope(music: &RawMusic, frame: usize, hop: usize) -> Result<OnsetEnvelope> {
    let spec = stft(music, frame, hop)?;
    let logs: Vec<Vec<f64>> =
        spec.frames.iter().map(|m| m.iter().map(|&v| (1.0 + LOG_GAIN * v).ln()).collect()).collect();
    let values = (0..logs.len())
        .map(|f| {
            let cur = &logs[f];
            match f.checked_sub(FLUX_LAG) {
                Some(p) => cur.iter().zip(&logs[p]).map(|(c, q)| (c - q).max(0.0)).sum(),
                None => cur.iter().map(|c| c.max(0.0)).sum(),
            }
        })
        .collect();
    Ok(OnsetEnvelope { values, frame, hop, sample_rate: music.sample_rate })
}
