use serde::{Deserialize, Serialize};

use crate::onset::OnsetEnvelope;

pub const MIN_BPM: f64 = 40.0;
pub const MAX_BPM: f64 = 200.0;
const BPM_STEP: f64 = 0.05;
/// Reported when the envelope carries no periodicity.
pub const FALLBACK_BPM: f64 = 120.0;

/// One tempo hypothesis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TempoCandidate {
    pub bpm: f64,
    pub strength: f64,
}

/// Ranked tempo hypotheses; strengths sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct TempoEstimate {
    pub candidates: Vec<TempoCandidate>,
    pub low_confidence: bool,
}

impl TempoEstimate {
    pub fn top(&self) -> Option<TempoCandidate> {
        self.candidates.first().copied()
    }

    fn fallback() -> Self {
        Self { candidates: vec![TempoCandidate { bpm: FALLBACK_BPM, strength: 1.0 }], low_confidence: true }
    }
}

/// Unbiased autocorrelation of the mean-removed envelope at integer lags.
fn autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    (0..=max_lag.min(n.saturating_sub(1)))
        .map(|lag| {
            let s: f64 = (0..n - lag).map(|t| c[t] * c[t + lag]).sum();
            s / (n - lag) as f64
        })
        .collect()
}

fn interp(r: &[f64], lag: f64) -> f64 {
    let i = lag.floor() as usize;
    if i + 1 >= r.len() {
        return r.last().copied().unwrap_or(0.0);
    }
    let f = lag - i as f64;
    r[i] * (1.0 - f) + r[i + 1] * f
}

/// Top-`k` periodicities in the 40–200 BPM band.
///
/// Each candidate period is scored by summing the envelope autocorrelation
/// at all its multiples up to two thirds of the envelope length, so the
/// true beat period outranks its sub-multiples (whose odd multiples land
/// between beats and score negative).
pub fn estimate_tempo(env: &OnsetEnvelope, k: usize) -> TempoEstimate {
    let n = env.len();
    let var = {
        let mean = env.values.iter().sum::<f64>() / n.max(1) as f64;
        env.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
    };
    if n < 4 || var <= 1e-12 {
        return TempoEstimate::fallback();
    }
    let fps = env.frame_rate();
    let max_lag = (2 * n) / 3;
    let r = autocorrelation(&env.values, max_lag);
    let steps = ((MAX_BPM - MIN_BPM) / BPM_STEP).round() as usize;
    let grid: Vec<f64> = (0..=steps).map(|i| MIN_BPM + i as f64 * BPM_STEP).collect();
    let scores: Vec<f64> = grid
        .iter()
        .map(|&bpm| {
            let period = 60.0 * fps / bpm;
            let mut s = 0.0;
            let mut m = 1.0;
            while m * period <= max_lag as f64 {
                s += interp(&r, m * period);
                m += 1.0;
            }
            s
        })
        .collect();

    let mut peaks: Vec<(f64, f64)> = (0..scores.len())
        .filter(|&i| {
            let left = i == 0 || scores[i] > scores[i - 1];
            let right = i + 1 == scores.len() || scores[i] >= scores[i + 1];
            left && right && scores[i] > 0.0
        })
        .map(|i| (grid[i], scores[i]))
        .collect();
    if peaks.is_empty() {
        return TempoEstimate::fallback();
    }
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.total_cmp(&b.0)));
    peaks.truncate(k.max(1));
    let total: f64 = peaks.iter().map(|p| p.1).sum();
    TempoEstimate {
        candidates: peaks
            .into_iter()
            .map(|(bpm, s)| TempoCandidate { bpm: round_to(bpm, 2), strength: s / total })
            .collect(),
        low_confidence: false,
    }
}

pub(crate) fn round_to(x: f64, decimals: i32) -> f64 {
    let p = 10f64.powi(decimals);
    (x * p).round() / p
}
