use crate::onset::OnsetEnvelope;
use crate::tempo::{round_to, TempoEstimate};

pub const DEFAULT_METER: u32 = 4;
const PHASE_STEP: f64 = 0.1;

/// One beat of the tracked grid; position 1 marks a downbeat.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Downbeat {
    pub time: f64,
    pub beat_position: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeatTrack {
    pub beats: Vec<Downbeat>,
    /// Set when the tempo was not trustworthy and no grid was produced.
    pub low_confidence: bool,
}

/// Fixed-tempo beat grid with energy-maximising phase, labelled with bar
/// positions `1..=meter`.
pub fn track_downbeats(env: &OnsetEnvelope, tempo: &TempoEstimate, meter: u32) -> BeatTrack {
    let empty = BeatTrack { beats: Vec::new(), low_confidence: true };
    let Some(top) = tempo.top() else { return empty };
    if tempo.low_confidence || meter == 0 || env.is_empty() {
        return empty;
    }
    let period = 60.0 * env.frame_rate() / top.bpm;
    let n = env.len() as f64;

    let grid = |phase: f64| -> Vec<f64> {
        let mut beats = Vec::new();
        let mut b = phase;
        while b <= n - 1.0 {
            beats.push(b);
            b += period;
        }
        beats
    };

    let mut best_phase = 0.0;
    let mut best_score = f64::NEG_INFINITY;
    let mut phase = 0.0;
    while phase < period {
        let score: f64 = grid(phase).iter().map(|&b| env.at(b)).sum();
        if score > best_score + 1e-12 {
            best_score = score;
            best_phase = phase;
        }
        phase += PHASE_STEP;
    }
    let beats = grid(best_phase);
    let meter_us = meter as usize;
    let offset = (0..meter_us)
        .max_by(|&a, &b| {
            let ea: f64 = beats.iter().skip(a).step_by(meter_us).map(|&x| env.at(x)).sum();
            let eb: f64 = beats.iter().skip(b).step_by(meter_us).map(|&x| env.at(x)).sum();
            ea.total_cmp(&eb).then(b.cmp(&a))
        })
        .unwrap_or(0);

    BeatTrack {
        beats: beats
            .iter()
            .enumerate()
            .map(|(k, &b)| Downbeat {
                time: round_to(env.frame_time(b), 2),
                beat_position: ((k + meter_us - offset % meter_us) % meter_us) as u32 + 1,
            })
            .collect(),
        low_confidence: false,
    }
}
