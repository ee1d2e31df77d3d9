use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::chroma::{Chromagram, NOTE_NAMES, PITCH_CLASSES};
use crate::tempo::round_to;

/// Cosine score below which a frame is labelled `N`.
pub const NO_CHORD_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quality {
    Major,
    Minor,
}

impl Quality {
    fn intervals(self) -> [usize; 3] {
        match self {
            Quality::Major => [0, 4, 7],
            Quality::Minor => [0, 3, 7],
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Quality::Major => "maj",
            Quality::Minor => "min",
        }
    }
}

/// `C:maj`-style label, or `N` for no chord.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ChordLabel {
    NoChord,
    Triad { root: usize, quality: Quality },
}

impl ChordLabel {
    pub fn triad(root: usize, quality: Quality) -> Self {
        ChordLabel::Triad { root: root % PITCH_CLASSES, quality }
    }

    pub fn pitch_classes(self) -> Vec<usize> {
        match self {
            ChordLabel::NoChord => Vec::new(),
            ChordLabel::Triad { root, quality } => quality.intervals().iter().map(|i| (root + i) % 12).collect(),
        }
    }

    pub fn transpose(self, semitones: usize) -> Self {
        match self {
            ChordLabel::NoChord => self,
            ChordLabel::Triad { root, quality } => Self::triad(root + semitones, quality),
        }
    }
}

impl fmt::Display for ChordLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChordLabel::NoChord => f.write_str("N"),
            ChordLabel::Triad { root, quality } => write!(f, "{}:{}", NOTE_NAMES[*root], quality.tag()),
        }
    }
}

impl FromStr for ChordLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "N" {
            return Ok(ChordLabel::NoChord);
        }
        let (root, qual) = s.split_once(':').ok_or_else(|| format!("bad chord label `{s}`"))?;
        let root = NOTE_NAMES.iter().position(|n| *n == root).ok_or_else(|| format!("bad chord root `{root}`"))?;
        let quality = match qual {
            "maj" => Quality::Major,
            "min" => Quality::Minor,
            _ => return Err(format!("bad chord quality `{qual}`")),
        };
        Ok(ChordLabel::triad(root, quality))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChordSegment {
    pub start: f64,
    pub end: f64,
    pub label: ChordLabel,
}

/// All 24 triads, majors first, each in root order C..B.
pub fn triad_vocabulary() -> Vec<ChordLabel> {
    [Quality::Major, Quality::Minor]
        .iter()
        .flat_map(|&q| (0..PITCH_CLASSES).map(move |r| ChordLabel::triad(r, q)))
        .collect()
}

/// Best-matching triad for one chroma frame by cosine score.
pub fn classify_frame(chroma: &[f64; PITCH_CLASSES]) -> (ChordLabel, f64) {
    let norm = chroma.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 1e-12 {
        return (ChordLabel::NoChord, 0.0);
    }
    let mut best = (ChordLabel::NoChord, f64::NEG_INFINITY);
    for label in triad_vocabulary() {
        let dot: f64 = label.pitch_classes().iter().map(|&pc| chroma[pc]).sum();
        let score = dot / (norm * 3f64.sqrt());
        if score > best.1 {
            best = (label, score);
        }
    }
    if best.1 < NO_CHORD_THRESHOLD {
        (ChordLabel::NoChord, best.1)
    } else {
        best
    }
}

/// Runs shorter than this many frames are absorbed by their neighbours.
pub const MIN_RUN_FRAMES: usize = 3;

/// Per-frame labels after absorbing short runs (transition frames that
/// straddle a chord change): the first half of a short run goes to the
/// preceding chord, the second half to the following one.
pub fn frame_labels(chroma: &Chromagram) -> Vec<ChordLabel> {
    let mut labels: Vec<ChordLabel> = chroma.frames.iter().map(|f| classify_frame(f).0).collect();
    let runs = |labels: &[ChordLabel]| {
        let mut out = Vec::new();
        let mut start = 0;
        for f in 1..=labels.len() {
            if f == labels.len() || labels[f] != labels[start] {
                out.push((start, f));
                start = f;
            }
        }
        out
    };
    let initial = runs(&labels);
    if initial.len() < 2 {
        return labels;
    }
    for (i, &(s, e)) in initial.iter().enumerate() {
        if e - s >= MIN_RUN_FRAMES {
            continue;
        }
        let prev = i.checked_sub(1).map(|j| initial[j]).filter(|r| r.1 - r.0 >= MIN_RUN_FRAMES);
        let next = initial.get(i + 1).copied().filter(|r| r.1 - r.0 >= MIN_RUN_FRAMES);
        let mid = s + (e - s).div_ceil(2);
        for f in s..e {
            let pick = match (prev, next) {
                (Some(p), Some(n)) => Some(if f < mid { p.0 } else { n.0 }),
                (Some(p), None) => Some(p.0),
                (None, Some(n)) => Some(n.0),
                (None, None) => None,
            };
            if let Some(src) = pick {
                labels[f] = labels[src];
            }
        }
    }
    labels
}

/// Frame-wise template matching, then run-length merging into segments.
///
/// Boundaries sit halfway between the centres of the last frame of one
/// chord and the first frame of the next; the final segment ends at the
/// audio duration. Times are rounded to centiseconds.
pub fn detect_chords(chroma: &Chromagram) -> Vec<ChordSegment> {
    let labels = frame_labels(chroma);
    let mut segments: Vec<ChordSegment> = Vec::new();
    let mut start_frame = 0;
    for f in 1..=labels.len() {
        if f == labels.len() || labels[f] != labels[start_frame] {
            let start = round_to(chroma.boundary_time(start_frame), 2);
            let end =
                if f == labels.len() { round_to(chroma.duration(), 2) } else { round_to(chroma.boundary_time(f), 2) };
            segments.push(ChordSegment { start, end, label: labels[start_frame] });
            start_frame = f;
        }
    }
    segments
}
