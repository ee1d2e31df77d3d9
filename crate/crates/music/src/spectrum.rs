use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio::RawMusic;
use crate::error::{FeatureError, Result};

/// Desk defaults: 8 kHz mono, 1024-sample frames, 256-sample hop.
pub const SAMPLE_RATE: u32 = 8000;
pub const FRAME: usize = 1024;
pub const HOP: usize = 256;

/// Magnitude spectrogram, one row of `frame / 2 + 1` bins per frame.
#[derive(Clone, Debug)]
pub struct Spectrogram {
    pub frames: Vec<Vec<f64>>,
    pub frame: usize,
    pub hop: usize,
    pub sample_rate: u32,
    pub n_samples: usize,
}

impl Spectrogram {
    pub fn bin_hz(&self) -> f64 {
        self.sample_rate as f64 / self.frame as f64
    }

    /// Time of the centre of frame `f`, in seconds.
    pub fn frame_time(&self, f: usize) -> f64 {
        frame_center(f, self.frame, self.hop, self.sample_rate)
    }
}

pub fn frame_center(f: usize, frame: usize, hop: usize, sample_rate: u32) -> f64 {
    (f * hop + frame / 2) as f64 / sample_rate as f64
}

pub fn check_framing(n_samples: usize, frame: usize, hop: usize) -> Result<usize> {
    if hop == 0 || frame <= hop {
        return Err(FeatureError::Framing { frame, hop });
    }
    if n_samples < frame {
        return Err(FeatureError::TooShort { samples: n_samples, frame });
    }
    Ok(1 + (n_samples - frame) / hop)
}

fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect()
}

pub fn stft(music: &RawMusic, frame: usize, hop: usize) -> Result<Spectrogram> {
    music.validate()?;
    let count = check_framing(music.samples.len(), frame, hop)?;
    let window = hann(frame);
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(frame);
    let mut buf = vec![Complex::new(0.0, 0.0); frame];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut frames = Vec::with_capacity(count);
    for f in 0..count {
        let start = f * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(music.samples[start + i] as f64 * window[i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        frames.push(buf[..=frame / 2].iter().map(|c| c.norm()).collect());
    }
    Ok(Spectrogram { frames, frame, hop, sample_rate: music.sample_rate, n_samples: music.samples.len() })
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank between 0 Hz and Nyquist.
pub fn mel_filterbank(bands: usize, frame: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let bins = frame / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..bands + 2).map(|i| mel_to_hz(top * i as f64 / (bands + 1) as f64)).collect();
    let bin_hz = sample_rate as f64 / frame as f64;
    (0..bands)
        .map(|b| {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// Log-compressed mel energies per frame.
pub fn log_mel(spec: &Spectrogram, bands: usize) -> Vec<Vec<f64>> {
    let bank = mel_filterbank(bands, spec.frame, spec.sample_rate);
    spec.frames
        .iter()
        .map(|mags| {
            bank.iter()
                .map(|filter| {
                    let e: f64 = filter.iter().zip(mags).map(|(w, m)| w * m * m).sum();
                    (1e-6 + e).ln()
                })
                .collect()
        })
        .collect()
}
