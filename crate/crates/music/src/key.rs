use crate::chroma::{Chromagram, NOTE_NAMES, PITCH_CLASSES};

/// Krumhansl–Kessler probe-tone profiles, tonic first.
pub const MAJOR_PROFILE: [f64; 12] = [6.35, 2.23, 3.48, 2.33, 4.38, 4.09, 2.52, 5.19, 2.39, 3.66, 2.29, 2.88];
pub const MINOR_PROFILE: [f64; 12] = [6.33, 2.68, 3.52, 5.38, 2.60, 3.53, 2.54, 4.75, 3.98, 2.69, 3.34, 3.17];

/// Scale applied to correlations before the softmax.
pub const KEY_SHARPNESS: f64 = 20.0;

pub const KEYS: usize = 24;

/// Probabilities over 24 keys: indices 0–11 are C..B major, 12–23 C..B minor.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyDistribution {
    pub probabilities: Vec<f64>,
}

impl KeyDistribution {
    pub fn uniform() -> Self {
        Self { probabilities: vec![1.0 / KEYS as f64; KEYS] }
    }

    pub fn argmax(&self) -> usize {
        self.probabilities
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

pub fn key_name(index: usize) -> String {
    let mode = if index < 12 { "major" } else { "minor" };
    format!("{} {mode}", NOTE_NAMES[index % 12])
}

fn pearson(x: &[f64; 12], y: &[f64; 12]) -> Option<f64> {
    let mx = x.iter().sum::<f64>() / 12.0;
    let my = y.iter().sum::<f64>() / 12.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..12 {
        let (a, b) = (x[i] - mx, y[i] - my);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if sxx <= 1e-12 || syy <= 1e-12 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

fn rotate(profile: &[f64; 12], tonic: usize) -> [f64; 12] {
    let mut out = [0.0; 12];
    for (i, v) in profile.iter().enumerate() {
        out[(i + tonic) % PITCH_CLASSES] = *v;
    }
    out
}

/// Profile correlations for the 24 keys, `None` if the chroma is flat.
pub fn key_correlations(profile: &[f64; 12]) -> Option<Vec<f64>> {
    let mut out = Vec::with_capacity(KEYS);
    for base in [&MAJOR_PROFILE, &MINOR_PROFILE] {
        for tonic in 0..12 {
            out.push(pearson(profile, &rotate(base, tonic))?);
        }
    }
    Some(out)
}

pub fn estimate_key(chroma: &Chromagram) -> KeyDistribution {
    estimate_key_from_profile(&chroma.aggregate())
}

pub fn estimate_key_from_profile(profile: &[f64; 12]) -> KeyDistribution {
    let Some(corr) = key_correlations(profile) else {
        return KeyDistribution::uniform();
    };
    let max = corr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = corr.iter().map(|c| (KEY_SHARPNESS * (c - max)).exp()).collect();
    let total: f64 = exps.iter().sum();
    KeyDistribution { probabilities: exps.into_iter().map(|e| e / total).collect() }
}
