//! Deterministic test-signal synthesis: sines, triads, scales and click tracks.

use std::f64::consts::PI;

use crate::chords::ChordLabel;

pub fn midi_to_hz(midi: f64) -> f64 {
    440.0 * 2f64.powf((midi - 69.0) / 12.0)
}

/// Sum of sines with a 10 ms linear fade at both ends.
pub fn tones(freqs: &[f64], amplitude: f64, seconds: f64, sample_rate: u32) -> Vec<f32> {
    let n = (seconds * sample_rate as f64).round() as usize;
    let fade = (0.01 * sample_rate as f64) as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 / sample_rate as f64;
            let env = if fade == 0 { 1.0 } else { (i.min(n - 1 - i) as f64 / fade as f64).min(1.0) };
            let s: f64 = freqs.iter().map(|f| (2.0 * PI * f * t).sin()).sum();
            (amplitude * env * s) as f32
        })
        .collect()
}

/// Frequencies of a chord voiced from C4 upwards, plus its root an octave lower.
pub fn chord_frequencies(label: ChordLabel, with_bass: bool) -> Vec<f64> {
    let pcs = label.pitch_classes();
    let mut freqs: Vec<f64> = pcs.iter().map(|&pc| midi_to_hz(60.0 + pc as f64)).collect();
    if with_bass {
        if let Some(&root) = pcs.first() {
            freqs.push(midi_to_hz(48.0 + root as f64));
        }
    }
    freqs
}

/// Block chords, each held for `seconds_each`.
pub fn chord_progression(chords: &[ChordLabel], seconds_each: f64, amplitude: f64, sample_rate: u32) -> Vec<f32> {
    chords.iter().flat_map(|&c| tones(&chord_frequencies(c, false), amplitude, seconds_each, sample_rate)).collect()
}

/// Scale from `tonic` (MIDI) up to its octave, eight notes.
pub fn scale(tonic_midi: f64, minor: bool, note_seconds: f64, amplitude: f64, sample_rate: u32) -> Vec<f32> {
    let steps: [f64; 8] =
        if minor { [0.0, 2.0, 3.0, 5.0, 7.0, 8.0, 10.0, 12.0] } else { [0.0, 2.0, 4.0, 5.0, 7.0, 9.0, 11.0, 12.0] };
    steps.iter().flat_map(|s| tones(&[midi_to_hz(tonic_midi + s)], amplitude, note_seconds, sample_rate)).collect()
}

/// Decaying noise bursts on a beat grid; every `meter`-th beat (starting
/// with the first) is played at full amplitude, the rest at `weak`.
pub fn click_track(
    bpm: f64,
    seconds: f64,
    offset: f64,
    meter: usize,
    weak: f64,
    amplitude: f64,
    sample_rate: u32,
) -> Vec<f32> {
    let n = (seconds * sample_rate as f64).round() as usize;
    let mut out = vec![0f32; n];
    let burst = (0.012 * sample_rate as f64) as usize;
    let period = 60.0 / bpm;
    let mut state: u32 = 0x1234_5678;
    let mut k = 0usize;
    loop {
        let t = offset + k as f64 * period;
        let start = (t * sample_rate as f64).round() as usize;
        if start >= n {
            break;
        }
        let gain = if meter > 0 && k.is_multiple_of(meter) { 1.0 } else { weak };
        for i in 0..burst.min(n - start) {
            state = state.wrapping_mul(1_664_525).wrapping_add(1_013_904_223);
            let noise = (state >> 8) as f64 / (1u32 << 24) as f64 * 2.0 - 1.0;
            let decay = (-(i as f64) / (0.003 * sample_rate as f64)).exp();
            out[start + i] += (amplitude * gain * decay * noise) as f32;
        }
        k += 1;
    }
    out
}

/// Sample-wise sum; the result has the length of the longer input.
pub fn mix(a: &[f32], b: &[f32]) -> Vec<f32> {
    let n = a.len().max(b.len());
    (0..n).map(|i| a.get(i).copied().unwrap_or(0.0) + b.get(i).copied().unwrap_or(0.0)).collect()
}
