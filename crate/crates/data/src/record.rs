use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tetrad_core::{RawImage, RawMusic, RawVideo};
use tetrad_music::{extract_features, parse_features, textualize, FeatureSet};

use crate::error::{invalid, DataError, Result};
use crate::split::Split;
use crate::synth::Captioner;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Captions {
    pub music: String,
    pub image: String,
    pub video: String,
}

/// How a unified caption was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnifierKind {
    Template,
    Remote,
}

/// Media references are paths relative to the corpus root.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediaRefs {
    pub music: String,
    pub video: String,
    pub image: String,
}

impl MediaRefs {
    pub fn for_id(id: &str) -> Self {
        Self {
            music: format!("media/{id}.music.f32"),
            video: format!("media/{id}.video.grid"),
            image: format!("media/{id}.image.grid"),
        }
    }
}

/// One four-way aligned item: music, its video, a frame of that video, and text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Music4wayRecord {
    pub id: String,
    pub media: MediaRefs,
    /// Index of the video frame stored as the image.
    pub frame_index: usize,
    pub captions: Captions,
    pub feature_text: String,
    #[serde(default)]
    pub unified_caption: Option<String>,
    #[serde(default)]
    pub unifier: Option<UnifierKind>,
    pub split: Split,
}

impl Music4wayRecord {
    pub fn features(&self) -> Result<FeatureSet> {
        Ok(parse_features(&self.feature_text)?)
    }

    pub fn unified(&self) -> Result<&str> {
        self.unified_caption
            .as_deref()
            .ok_or_else(|| DataError::Missing { id: self.id.clone(), field: "unified caption" })
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(invalid("record", "empty id"));
        }
        for (field, text) in [
            ("music caption", &self.captions.music),
            ("image caption", &self.captions.image),
            ("video caption", &self.captions.video),
        ] {
            if text.trim().is_empty() {
                return Err(DataError::Missing { id: self.id.clone(), field });
            }
        }
        self.features()?;
        if let Some(u) = &self.unified_caption {
            if u.trim().is_empty() {
                return Err(DataError::Missing { id: self.id.clone(), field: "unified caption" });
            }
            if self.unifier.is_none() {
                return Err(invalid("record", format!("{}: unified caption without unifier kind", self.id)));
            }
        }
        Ok(())
    }
}

/// A record plus the frame it picked, before anything is written to disk.
#[derive(Clone, Debug, PartialEq)]
pub struct BuiltRecord {
    pub record: Music4wayRecord,
    pub image: RawImage,
}

/// Frame index drawn uniformly with `seed`.
pub fn draw_frame(frames: usize, seed: u64) -> Result<usize> {
    if frames == 0 {
        return Err(invalid("video", "no frames"));
    }
    Ok(ChaCha8Rng::seed_from_u64(seed).random_range(0..frames))
}

pub fn build_record(
    id: &str,
    music: &RawMusic,
    video: &RawVideo,
    captioner: &dyn Captioner,
    split: Split,
    seed: u64,
) -> Result<BuiltRecord> {
    let frame_index = draw_frame(video.frames.len(), seed)?;
    video.validate()?;
    music.validate()?;
    let image = video.frames[frame_index].clone();
    let feature_text = textualize(&extract_features(music)?);
    let record = Music4wayRecord {
        id: id.to_string(),
        media: MediaRefs::for_id(id),
        frame_index,
        captions: Captions {
            music: captioner.music(),
            image: captioner.image(frame_index, video.frames.len()),
            video: captioner.video(),
        },
        feature_text,
        unified_caption: None,
        unifier: None,
        split,
    };
    record.validate()?;
    Ok(BuiltRecord { record, image })
}

/// Raw media of a record, loaded from `root`.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordMedia {
    pub music: RawMusic,
    pub video: RawVideo,
    pub image: RawImage,
}

impl RecordMedia {
    pub fn load(root: &Path, refs: &MediaRefs) -> Result<Self> {
        Ok(Self {
            music: RawMusic::load(&root.join(&refs.music))?,
            video: RawVideo::load(&root.join(&refs.video))?,
            image: RawImage::load(&root.join(&refs.image))?,
        })
    }

    pub fn save(&self, root: &Path, refs: &MediaRefs) -> Result<()> {
        for r in [&refs.music, &refs.video, &refs.image] {
            if let Some(parent) = root.join(r).parent() {
                std::fs::create_dir_all(parent)?;
            }
        }
        self.music.save(&root.join(&refs.music))?;
        self.video.save(&root.join(&refs.video))?;
        self.image.save(&root.join(&refs.image))?;
        Ok(())
    }
}
