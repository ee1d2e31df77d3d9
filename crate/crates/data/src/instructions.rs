//! Instruction pairs derived from records.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use tetrad_core::tokenizer::{IMAGE, MUSIC, VIDEO};
use tetrad_core::Modality;

use crate::error::{invalid, DataError, Result};
use crate::record::{Music4wayRecord, UnifierKind};
use crate::split::Split;
use crate::unify::{compose, TargetVariant, Unifier};

/// Fixed instruction of the MI2T and MV2T datasets.
pub const MULTIWAY_INSTRUCTION: &str = "Analyze the music by considering both its auditory and visual components. Describe the music in detail, incorporating its tempo, chords, downbeats, and key, while also reflecting on how these musical features align with the video or a key image from the video.";

pub const MUSIC_CAPTION_INSTRUCTION: &str = "Describe the music.";
pub const IMAGE_CAPTION_INSTRUCTION: &str = "Describe the image.";
pub const VIDEO_CAPTION_INSTRUCTION: &str = "Describe the video.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskTag {
    #[serde(rename = "MI2T")]
    Mi2t,
    #[serde(rename = "MV2T")]
    Mv2t,
    #[serde(rename = "Any2T")]
    Any2t,
    #[serde(rename = "M2T-caption")]
    M2tCaption,
    #[serde(rename = "I2T")]
    I2t,
    #[serde(rename = "V2T")]
    V2t,
    #[serde(rename = "T2T")]
    T2t,
}

impl TaskTag {
    pub const ALL: [TaskTag; 7] =
        [TaskTag::Mi2t, TaskTag::Mv2t, TaskTag::Any2t, TaskTag::M2tCaption, TaskTag::I2t, TaskTag::V2t, TaskTag::T2t];

    pub fn name(self) -> &'static str {
        match self {
            TaskTag::Mi2t => "MI2T",
            TaskTag::Mv2t => "MV2T",
            TaskTag::Any2t => "Any2T",
            TaskTag::M2tCaption => "M2T-caption",
            TaskTag::I2t => "I2T",
            TaskTag::V2t => "V2T",
            TaskTag::T2t => "T2T",
        }
    }

    fn slug(self) -> &'static str {
        match self {
            TaskTag::Mi2t => "mi2t",
            TaskTag::Mv2t => "mv2t",
            TaskTag::Any2t => "any2t",
            TaskTag::M2tCaption => "m2t",
            TaskTag::I2t => "i2t",
            TaskTag::V2t => "v2t",
            TaskTag::T2t => "t2t",
        }
    }

    /// Checks the modality slots this task admits, in order.
    pub fn check_slots(self, slots: &[Modality]) -> Result<()> {
        use Modality::*;
        let ok = match self {
            TaskTag::Mi2t => slots == [Music, Image],
            TaskTag::Mv2t => slots == [Music, Video],
            TaskTag::M2tCaption => slots == [Music],
            TaskTag::I2t => slots == [Image],
            TaskTag::V2t => slots == [Video],
            TaskTag::T2t => slots.is_empty(),
            TaskTag::Any2t => {
                let count = |m| slots.iter().filter(|&&s| s == m).count();
                count(Music) == 1 && count(Image) <= 1 && count(Video) <= 1 && slots.len() >= 2
            }
        };
        if ok {
            Ok(())
        } else {
            Err(invalid("slots", format!("{} does not admit {slots:?}", self.name())))
        }
    }
}

impl fmt::Display for TaskTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        TaskTag::ALL
            .iter()
            .copied()
            .find(|t| t.name().eq_ignore_ascii_case(s) || t.slug() == s)
            .ok_or_else(|| format!("unknown task `{s}`"))
    }
}

/// A placeholder in the input text and the media file it stands for.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediaSlot {
    pub modality: Modality,
    /// Relative to the corpus root.
    pub path: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionPair {
    pub id: String,
    pub task: TaskTag,
    /// Input text; every `<Music>`/`<Image>`/`<Video>` placeholder has a slot.
    pub input: String,
    /// One per placeholder, in order of appearance.
    pub media: Vec<MediaSlot>,
    pub instruction: String,
    pub target: String,
    #[serde(default)]
    pub record_id: Option<String>,
    #[serde(default)]
    pub split: Option<Split>,
    #[serde(default)]
    pub unifier: Option<UnifierKind>,
    #[serde(default)]
    pub variant: TargetVariant,
}

fn placeholder(s: &str) -> Option<Modality> {
    match s {
        MUSIC => Some(Modality::Music),
        IMAGE => Some(Modality::Image),
        VIDEO => Some(Modality::Video),
        _ => None,
    }
}

/// Placeholders of `text` in order. Anything that looks like a tag
/// (`<` + letters + `>`) but is not spelled exactly is an error.
pub fn placeholders(text: &str) -> Result<Vec<Modality>> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(i) = rest.find('<') {
        let tail = &rest[i..];
        let body: String = tail[1..].chars().take_while(|c| c.is_ascii_alphabetic()).collect();
        let closes = tail[1 + body.len()..].starts_with('>');
        if !body.is_empty() && closes {
            let tag = &tail[..body.len() + 2];
            match placeholder(tag) {
                Some(m) => out.push(m),
                None => return Err(invalid("placeholder", format!("`{tag}` is not one of {MUSIC}, {IMAGE}, {VIDEO}"))),
            }
            rest = &tail[body.len() + 2..];
        } else {
            rest = &tail[1..];
        }
    }
    Ok(out)
}

/// Text of `input` with the placeholders removed and whitespace collapsed.
pub fn inline_text(input: &str) -> String {
    let mut s = input.to_string();
    for p in [MUSIC, IMAGE, VIDEO] {
        s = s.replace(p, " ");
    }
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl InstructionPair {
    pub fn slots(&self) -> Vec<Modality> {
        self.media.iter().map(|m| m.modality).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let found = placeholders(&self.input)?;
        if found != self.slots() {
            return Err(invalid("pair", format!("{}: placeholders {found:?} but media {:?}", self.id, self.slots())));
        }
        self.task.check_slots(&found)?;
        if self.instruction.trim().is_empty() || self.target.trim().is_empty() {
            return Err(invalid("pair", format!("{}: empty instruction or target", self.id)));
        }
        if placeholders(&self.instruction)?.len() + placeholders(&self.target)?.len() > 0 {
            return Err(invalid("pair", format!("{}: placeholders outside the input", self.id)));
        }
        Ok(())
    }
}

fn slot(record: &Music4wayRecord, m: Modality) -> MediaSlot {
    let path = match m {
        Modality::Music => &record.media.music,
        Modality::Video => &record.media.video,
        Modality::Image => &record.media.image,
    };
    MediaSlot { modality: m, path: path.clone() }
}

fn pair(
    record: &Music4wayRecord,
    task: TaskTag,
    input: &str,
    instruction: &str,
    target: String,
) -> Result<InstructionPair> {
    let media = placeholders(input)?.into_iter().map(|m| slot(record, m)).collect();
    let p = InstructionPair {
        id: format!("{}:{}", record.id, task.slug()),
        task,
        input: input.to_string(),
        media,
        instruction: instruction.to_string(),
        target,
        record_id: Some(record.id.clone()),
        split: Some(record.split),
        unifier: None,
        variant: TargetVariant::Full,
    };
    p.validate()?;
    Ok(p)
}

fn multiway(record: &Music4wayRecord, task: TaskTag, input: &str) -> Result<InstructionPair> {
    let target = record.unified()?.to_string();
    let mut p = pair(record, task, input, MULTIWAY_INSTRUCTION, target)?;
    p.unifier = record.unifier;
    Ok(p)
}

pub fn make_mi2t(record: &Music4wayRecord) -> Result<InstructionPair> {
    multiway(record, TaskTag::Mi2t, "<Music> <Image>")
}

pub fn make_mv2t(record: &Music4wayRecord) -> Result<InstructionPair> {
    multiway(record, TaskTag::Mv2t, "<Music> <Video>")
}

/// Single-modality captioning pairs: music, image, video.
pub fn make_caption_pairs(record: &Music4wayRecord) -> Result<Vec<InstructionPair>> {
    Ok(vec![
        pair(record, TaskTag::M2tCaption, MUSIC, MUSIC_CAPTION_INSTRUCTION, record.captions.music.clone())?,
        pair(record, TaskTag::I2t, IMAGE, IMAGE_CAPTION_INSTRUCTION, record.captions.image.clone())?,
        pair(record, TaskTag::V2t, VIDEO, VIDEO_CAPTION_INSTRUCTION, record.captions.video.clone())?,
    ])
}

/// Any2T pair from the unifier's triplet, validated against the
/// placeholder rules.
pub fn make_any2t(record: &Music4wayRecord, unifier: &dyn Unifier, seed: u64) -> Result<InstructionPair> {
    record.unified()?;
    let t = unifier.any2t(record, seed)?;
    let mut p = pair(record, TaskTag::Any2t, &t.input, &t.instruction, t.output)?;
    p.unifier = Some(unifier.kind());
    Ok(p)
}

/// Re-composes an MI2T/MV2T target without the dropped block. Needs the
/// source record, since the target is rebuilt from its parts.
pub fn make_target_variant(
    pair: &InstructionPair,
    record: &Music4wayRecord,
    variant: TargetVariant,
) -> Result<InstructionPair> {
    if !matches!(pair.task, TaskTag::Mi2t | TaskTag::Mv2t) {
        return Err(DataError::Unsupported(format!("target variants of {} pairs", pair.task)));
    }
    if pair.record_id.as_deref() != Some(record.id.as_str()) {
        return Err(invalid("variant", format!("pair {} is not from record {}", pair.id, record.id)));
    }
    if pair.unifier != Some(UnifierKind::Template) {
        return Err(DataError::Unsupported(format!("{}: only template-built targets can be re-composed", pair.id)));
    }
    let mut out = pair.clone();
    if variant != TargetVariant::Full {
        out.target = compose(record, variant.blocks())?;
    }
    out.variant = variant;
    Ok(out)
}
