use crate::audio::RawMusic;
use crate::error::Result;
use crate::spectrum::stft;

pub const PITCH_CLASSES: usize = 12;
pub const NOTE_NAMES: [&str; PITCH_CLASSES] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

const MIN_HZ: f64 = 60.0;
const MAX_HZ: f64 = 2100.0;
/// Spectral peaks below this fraction of the frame maximum are ignored.
const PEAK_FLOOR: f64 = 1e-3;

/// Pitch-class energy per frame, each frame scaled to a maximum of one.
#[derive(Clone, Debug, PartialEq)]
pub struct Chromagram {
    pub frames: Vec<[f64; PITCH_CLASSES]>,
    pub frame: usize,
    pub hop: usize,
    pub sample_rate: u32,
    pub n_samples: usize,
}

impl Chromagram {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.n_samples as f64 / self.sample_rate as f64
    }

    /// Boundary between frames `f - 1` and `f`: halfway between their centres.
    pub fn boundary_time(&self, f: usize) -> f64 {
        if f == 0 {
            return 0.0;
        }
        (f * self.hop + self.frame / 2) as f64 / self.sample_rate as f64
            - self.hop as f64 / (2.0 * self.sample_rate as f64)
    }

    /// Sum over frames.
    pub fn aggregate(&self) -> [f64; PITCH_CLASSES] {
        let mut acc = [0.0; PITCH_CLASSES];
        for f in &self.frames {
            for (a, v) in acc.iter_mut().zip(f) {
                *a += v;
            }
        }
        acc
    }
}

/// Pitch class of a frequency, with C = 0 and A4 = 440 Hz.
pub fn pitch_class(hz: f64) -> usize {
    let semis = (12.0 * (hz / 440.0).log2()).round() as i64 + 9;
    semis.rem_euclid(12) as usize
}

/// Folds spectral peak energy into 12 pitch classes.
///
/// Only local maxima of the magnitude spectrum contribute; their frequency
/// is refined by parabolic interpolation on log magnitude.
pub fn chromagram(music: &RawMusic, frame: usize, hop: usize) -> Result<Chromagram> {
    let spec = stft(music, frame, hop)?;
    let bin_hz = spec.bin_hz();
    let frames = spec
        .frames
        .iter()
        .map(|mags| {
            let mut chroma = [0.0; PITCH_CLASSES];
            let peak = mags.iter().copied().fold(0.0, f64::max);
            if peak <= 1e-9 {
                return chroma;
            }
            for k in 1..mags.len() - 1 {
                let m = mags[k];
                if m <= mags[k - 1] || m < mags[k + 1] || m < PEAK_FLOOR * peak {
                    continue;
                }
                let (a, b, c) = (mags[k - 1].max(1e-12).ln(), m.ln(), mags[k + 1].max(1e-12).ln());
                let denom = a - 2.0 * b + c;
                let delta = if denom.abs() > 1e-12 { 0.5 * (a - c) / denom } else { 0.0 };
                let hz = (k as f64 + delta.clamp(-0.5, 0.5)) * bin_hz;
                if (MIN_HZ..=MAX_HZ).contains(&hz) {
                    chroma[pitch_class(hz)] += m * m;
                }
            }
            let max = chroma.iter().copied().fold(0.0, f64::max);
            if max > 0.0 {
                for v in &mut chroma {
                    *v /= max;
                }
            }
            chroma
        })
        .collect();
    Ok(Chromagram { frames, frame, hop, sample_rate: music.sample_rate, n_samples: music.samples.len() })
}
