//! Desk-scale raw media: a diatonic chord pad over a click track, and a
//! small video of one coloured shape moving across a plain background.
//! Every drawn parameter ends up in the ground-truth captions.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tetrad_core::{RawImage, RawMusic, RawVideo};
use tetrad_music::chroma::NOTE_NAMES;
use tetrad_music::synth::{chord_progression, click_track, mix};
use tetrad_music::{ChordLabel, Quality};

use crate::error::{invalid, Result};

pub const SAMPLE_RATE: u32 = 8000;
pub const SECONDS: f64 = 6.0;
pub const FRAME_SIDE: usize = 16;
pub const FPS: f32 = 2.0;
pub const MIN_BPM: u32 = 60;
pub const MAX_BPM: u32 = 180;
const SHAPE_RADIUS: f64 = 3.0;

// (degree in semitones above the tonic, quality) for the diatonic triads
const MAJOR_DEGREES: [(usize, Quality); 6] = [
    (0, Quality::Major),
    (2, Quality::Minor),
    (4, Quality::Minor),
    (5, Quality::Major),
    (7, Quality::Major),
    (9, Quality::Minor),
];
const MINOR_DEGREES: [(usize, Quality); 6] = [
    (0, Quality::Minor),
    (3, Quality::Major),
    (5, Quality::Minor),
    (7, Quality::Minor),
    (8, Quality::Major),
    (10, Quality::Major),
];
// progressions as indices into the degree tables; all start on the tonic
const MAJOR_PROGRESSIONS: [[usize; 4]; 4] = [[0, 5, 3, 4], [0, 4, 5, 3], [0, 3, 4, 0], [0, 1, 4, 0]];
const MINOR_PROGRESSIONS: [[usize; 4]; 4] = [[0, 4, 1, 5], [0, 2, 3, 0], [0, 5, 4, 2], [0, 2, 5, 0]];

const MAJOR_MOODS: [&str; 3] = ["bright", "cheerful", "warm"];
const MINOR_MOODS: [&str; 3] = ["melancholic", "moody", "wistful"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Square,
    Circle,
    Diamond,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Square, Shape::Circle, Shape::Diamond];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Square => "square",
            Shape::Circle => "circle",
            Shape::Diamond => "diamond",
        }
    }

    fn covers(self, dy: f64, dx: f64) -> bool {
        match self {
            Shape::Square => dy.abs() <= SHAPE_RADIUS && dx.abs() <= SHAPE_RADIUS,
            Shape::Circle => dy * dy + dx * dx <= SHAPE_RADIUS * SHAPE_RADIUS,
            Shape::Diamond => dy.abs() + dx.abs() <= SHAPE_RADIUS,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LeftToRight,
    RightToLeft,
    TopToBottom,
    BottomToTop,
}

impl Direction {
    pub const ALL: [Direction; 4] =
        [Direction::LeftToRight, Direction::RightToLeft, Direction::TopToBottom, Direction::BottomToTop];

    pub fn phrase(self) -> &'static str {
        match self {
            Direction::LeftToRight => "from left to right",
            Direction::RightToLeft => "from right to left",
            Direction::TopToBottom => "from top to bottom",
            Direction::BottomToTop => "from bottom to top",
        }
    }
}

/// Named colour; names double as caption words.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Colour {
    pub name: &'static str,
    pub rgb: [f32; 3],
}

pub const SHAPE_COLOURS: [Colour; 6] = [
    Colour { name: "red", rgb: [0.9, 0.1, 0.1] },
    Colour { name: "green", rgb: [0.1, 0.8, 0.2] },
    Colour { name: "blue", rgb: [0.1, 0.25, 0.95] },
    Colour { name: "yellow", rgb: [0.95, 0.9, 0.1] },
    Colour { name: "purple", rgb: [0.6, 0.1, 0.8] },
    Colour { name: "orange", rgb: [1.0, 0.55, 0.0] },
];

pub const BACKGROUNDS: [Colour; 4] = [
    Colour { name: "black", rgb: [0.05, 0.05, 0.05] },
    Colour { name: "grey", rgb: [0.5, 0.5, 0.5] },
    Colour { name: "navy", rgb: [0.05, 0.05, 0.3] },
    Colour { name: "cream", rgb: [0.95, 0.92, 0.8] },
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pace {
    Slow,
    Moderate,
    Fast,
}

impl Pace {
    pub fn of(bpm: u32) -> Self {
        match bpm {
            0..=95 => Pace::Slow,
            96..=135 => Pace::Moderate,
            _ => Pace::Fast,
        }
    }

    /// Back-and-forth passes of the shape over the clip.
    fn passes(self) -> usize {
        match self {
            Pace::Slow => 1,
            Pace::Moderate => 2,
            Pace::Fast => 3,
        }
    }
}

/// Everything drawn for one item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub bpm: u32,
    /// First click, seconds.
    pub offset: f64,
    pub tonic: usize,
    pub minor: bool,
    pub progression: Vec<String>,
    pub mood: String,
    pub shape: Shape,
    pub colour: String,
    pub background: String,
    pub direction: Direction,
}

fn colour(table: &[Colour], name: &str) -> Colour {
    *table.iter().find(|c| c.name == name).expect("colour from the table")
}

fn chord_words(label: &str) -> String {
    match label.parse::<ChordLabel>() {
        Ok(ChordLabel::Triad { root, quality }) => {
            let q = if quality == Quality::Major { "major" } else { "minor" };
            format!("{} {q}", NOTE_NAMES[root])
        }
        _ => label.to_string(),
    }
}

fn join_and(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

impl SynthParams {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let bpm = rng.random_range(MIN_BPM..=MAX_BPM);
        let offset = (rng.random_range(5..=30) as f64) / 100.0;
        let tonic = rng.random_range(0..12);
        let minor = rng.random_bool(0.5);
        let (degrees, progs, moods) = if minor {
            (&MINOR_DEGREES, &MINOR_PROGRESSIONS, &MINOR_MOODS)
        } else {
            (&MAJOR_DEGREES, &MAJOR_PROGRESSIONS, &MAJOR_MOODS)
        };
        let prog = progs.choose(rng).expect("non-empty");
        let progression = prog
            .iter()
            .map(|&d| {
                let (step, q) = degrees[d];
                ChordLabel::triad(tonic + step, q).to_string()
            })
            .collect();
        let mood = moods.choose(rng).expect("non-empty").to_string();
        let shape = *Shape::ALL.choose(rng).expect("non-empty");
        let colour = SHAPE_COLOURS.choose(rng).expect("non-empty").name.to_string();
        let background = BACKGROUNDS.choose(rng).expect("non-empty").name.to_string();
        let direction = *Direction::ALL.choose(rng).expect("non-empty");
        Self { bpm, offset, tonic, minor, progression, mood, shape, colour, background, direction }
    }

    pub fn pace(&self) -> Pace {
        Pace::of(self.bpm)
    }

    pub fn key_name(&self) -> String {
        format!("{} {}", NOTE_NAMES[self.tonic], if self.minor { "minor" } else { "major" })
    }

    pub fn chords(&self) -> Result<Vec<ChordLabel>> {
        self.progression.iter().map(|s| s.parse::<ChordLabel>().map_err(|e| invalid("progression", e))).collect()
    }

    pub fn render_music(&self) -> Result<RawMusic> {
        let chords = self.chords()?;
        let pad = chord_progression(&chords, SECONDS / chords.len() as f64, 0.15, SAMPLE_RATE);
        let clicks = click_track(self.bpm as f64, SECONDS, self.offset, 4, 0.5, 0.8, SAMPLE_RATE);
        Ok(RawMusic::new(mix(&pad, &clicks), SAMPLE_RATE)?)
    }

    /// Shape centre (row, col) in frame `f` of `n`.
    pub fn centre(&self, f: usize, n: usize) -> (f64, f64) {
        let lo = SHAPE_RADIUS + 0.5;
        let hi = FRAME_SIDE as f64 - 1.5 - SHAPE_RADIUS;
        // triangle wave with `passes` sweeps over the clip
        let u = if n <= 1 { 0.0 } else { f as f64 / (n - 1) as f64 };
        let s = u * self.pace().passes() as f64;
        let tri = if (s as usize).is_multiple_of(2) { s.fract() } else { 1.0 - s.fract() };
        let along = lo + (hi - lo) * tri;
        let mid = (FRAME_SIDE as f64 - 1.0) / 2.0;
        match self.direction {
            Direction::LeftToRight => (mid, along),
            Direction::RightToLeft => (mid, lo + hi - along),
            Direction::TopToBottom => (along, mid),
            Direction::BottomToTop => (lo + hi - along, mid),
        }
    }

    pub fn render_frame(&self, f: usize, n: usize) -> RawImage {
        let bg = colour(&BACKGROUNDS, &self.background);
        let fg = colour(&SHAPE_COLOURS, &self.colour);
        let mut img = RawImage::filled(FRAME_SIDE, FRAME_SIDE, bg.rgb);
        let (cy, cx) = self.centre(f, n);
        for y in 0..FRAME_SIDE {
            for x in 0..FRAME_SIDE {
                if self.shape.covers(y as f64 - cy, x as f64 - cx) {
                    img.set(y, x, fg.rgb);
                }
            }
        }
        img
    }

    pub fn render_video(&self) -> Result<RawVideo> {
        let n = (SECONDS * FPS as f64).round() as usize;
        let frames = (0..n).map(|f| self.render_frame(f, n)).collect();
        Ok(RawVideo::new(frames, FPS)?)
    }

    fn pace_words(&self) -> (&'static str, &'static str) {
        match self.pace() {
            Pace::Slow => ("slow", "drifts slowly"),
            Pace::Moderate => ("steady", "moves steadily"),
            Pace::Fast => ("fast", "darts quickly"),
        }
    }
}

/// Source of the three per-modality captions of a record.
pub trait Captioner {
    fn music(&self) -> String;
    fn video(&self) -> String;
    /// Caption of frame `frame` out of `frames`.
    fn image(&self, frame: usize, frames: usize) -> String;
}

/// Ground-truth captions straight from the drawn parameters. No digits
/// appear in any of them.
impl Captioner for SynthParams {
    fn music(&self) -> String {
        let chords: Vec<String> = self.progression.iter().map(|c| chord_words(c)).collect();
        format!(
            "A {} and {} piece in {} that cycles through {} over a steady click.",
            self.pace_words().0,
            self.mood,
            self.key_name(),
            join_and(&chords)
        )
    }

    fn video(&self) -> String {
        format!(
            "A {} {} {} {} and back across a {} background.",
            self.colour,
            self.shape.name(),
            self.pace_words().1,
            self.direction.phrase(),
            self.background
        )
    }

    fn image(&self, frame: usize, frames: usize) -> String {
        let (cy, cx) = self.centre(frame, frames);
        let third = FRAME_SIDE as f64 / 3.0;
        let row = ["top", "middle", "bottom"][((cy / third) as usize).min(2)];
        let col = ["left", "centre", "right"][((cx / third) as usize).min(2)];
        let place = match (row, col) {
            ("middle", "centre") => "the centre".to_string(),
            ("middle", c) => format!("the {c} side"),
            (r, "centre") => format!("the {r}"),
            (r, c) => format!("the {r} {c} corner"),
        };
        format!("A {} {} sits near {} of a {} frame.", self.colour, self.shape.name(), place, self.background)
    }
}

/// One synthesized item.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthItem {
    pub id: String,
    /// Seed for the record built from this item.
    pub seed: u64,
    pub params: SynthParams,
    pub music: RawMusic,
    pub video: RawVideo,
}

pub fn item_id(index: usize) -> String {
    format!("m4w-{index:05}")
}

/// Item `index` of the corpus for `seed`; independent of every other index.
pub fn synth_one(seed: u64, index: usize) -> Result<SynthItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let params = SynthParams::draw(&mut rng);
    let record_seed = rng.random();
    Ok(SynthItem {
        id: item_id(index),
        seed: record_seed,
        music: params.render_music()?,
        video: params.render_video()?,
        params,
    })
}

pub fn synth_raw(seed: u64, count: usize) -> Result<Vec<SynthItem>> {
    if count == 0 {
        return Err(invalid("synth_raw", "count must be at least one"));
    }
    (0..count).map(|i| synth_one(seed, i)).collect()
}
