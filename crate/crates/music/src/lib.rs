//! Low-level music descriptors for 8 kHz mono audio: spectral-flux onsets,
//! autocorrelation tempo, peak-picked chroma, triad templates,
//! Krumhansl–Schmuckler key profiles and a fixed-meter beat grid.

pub mod audio;
pub mod chords;
pub mod chroma;
pub mod downbeats;
pub mod error;
pub mod key;
pub mod onset;
pub mod spectrum;
pub mod synth;
pub mod tempo;
pub mod text;

pub use audio::RawMusic;
pub use chords::{detect_chords, ChordLabel, ChordSegment, Quality};
pub use chroma::{chromagram, Chromagram};
pub use downbeats::{track_downbeats, BeatTrack, Downbeat, DEFAULT_METER};
pub use error::{FeatureError, Result};
pub use key::{estimate_key, KeyDistribution};
pub use onset::{onset_envelope, OnsetEnvelope};
pub use spectrum::{FRAME, HOP, SAMPLE_RATE};
pub use tempo::{estimate_tempo, TempoCandidate, TempoEstimate};
pub use text::{parse_features, textualize, FeatureSet};

/// Number of tempo candidates kept by [`extract_features`].
pub const TEMPO_CANDIDATES: usize = 3;

/// Runs every extractor at the desk framing.
pub fn extract_features(music: &RawMusic) -> Result<FeatureSet> {
    let env = onset_envelope(music, FRAME, HOP)?;
    let tempo = estimate_tempo(&env, TEMPO_CANDIDATES);
    let beats = track_downbeats(&env, &tempo, DEFAULT_METER);
    let chroma = chromagram(music, FRAME, HOP)?;
    let chords = detect_chords(&chroma);
    let key = estimate_key(&chroma);
    Ok(FeatureSet::new(&tempo, &chords, &beats.beats, &key))
}
