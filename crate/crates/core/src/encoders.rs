//! Frozen stand-in encoders producing multi-sampled clip embeddings.
//!
//! Each modality maps hand-crafted features through a fixed, seeded random
//! projection, a tanh, and unit normalisation. Nothing here is a parameter:
//! the projections live outside every [`ParamStore`](crate::ParamStore), so
//! no training stage can touch them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use tetrad_music::spectrum::{log_mel, stft};
use tetrad_music::{chromagram, FRAME, HOP};

use crate::error::{invalid, Result};
use crate::media::{RawImage, RawMusic, RawVideo};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MEL_BANDS: usize = 32;
const GRID: usize = 4;
const HIST_BINS: usize = 4;
const PROJECTION_GAIN: f64 = 3.0;
const BIAS_FEATURE: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Music,
    Video,
    Image,
}

impl Modality {
    /// Fused-block order.
    pub const ALL: [Modality; 3] = [Modality::Music, Modality::Video, Modality::Image];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Music => "music",
            Modality::Video => "video",
            Modality::Image => "image",
        }
    }

    fn salt(self) -> u64 {
        match self {
            Modality::Music => 0x6d75_7369,
            Modality::Video => 0x7669_6465,
            Modality::Image => 0x696d_6167,
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_enc: usize,
    pub n_music: usize,
    pub n_video: usize,
    /// 1 (full image), 4 (2×2 tiles) or 5 (tiles + full image).
    pub n_image: usize,
    /// Shortest clip, seconds.
    pub min_window: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { d_enc: 128, n_music: 4, n_video: 4, n_image: 1, min_window: 2.0, seed: 0 }
    }
}

/// Multi-sampled embeddings of one modality instance, `count × dim`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipEmbeddingSet {
    pub modality: Modality,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl ClipEmbeddingSet {
    pub fn new(modality: Modality, rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or_else(|| invalid("clip set", "needs at least one row"))?;
        if rows.iter().any(|r| r.len() != dim) {
            return Err(invalid("clip set", "rows differ in width"));
        }
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("clip set", "non-finite embedding"));
        }
        Ok(Self { modality, dim, data })
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.dim.max(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn matrix<T: Scalar>(&self) -> Tensor<T> {
        Tensor::new(vec![self.count(), self.dim], self.data.iter().map(|&v| T::lit(v)).collect())
            .expect("consistent set")
    }

    /// The single-row set of [`pool`].
    pub fn pooled(&self) -> ClipEmbeddingSet {
        ClipEmbeddingSet { modality: self.modality, dim: self.dim, data: pool(self) }
    }
}

/// Mean of the rows, rescaled to unit norm. A single row is returned as is.
pub fn pool(set: &ClipEmbeddingSet) -> Vec<f64> {
    let n = set.count();
    if n == 1 {
        return set.data.clone();
    }
    let mut mean = vec![0.0; set.dim];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(set.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    normalize(&mut mean);
    mean
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v {
            *x /= norm;
        }
    }
}

/// `(start, len)` of `n` windows over `total` units.
///
/// The window is `max(total / n, min_len)`; starts are `i·total/n`, clamped so
/// the window ends inside the input. Shorter inputs get `n` copies of the
/// whole input, to be padded to the window length by the caller.
pub fn clip_windows(total: usize, n: usize, min_len: usize) -> Result<Vec<(usize, usize)>> {
    if n == 0 {
        return Err(invalid("sample_clips", "clip count must be at least 1"));
    }
    if total == 0 {
        return Err(invalid("sample_clips", "empty input"));
    }
    let window = (total / n).max(min_len).max(1);
    if total <= window {
        return Ok(vec![(0, window); n]);
    }
    Ok((0..n)
        .map(|i| {
            let start = (i as f64 * total as f64 / n as f64).floor() as usize;
            (start.min(total - window), window)
        })
        .collect())
}

pub fn sample_music_clips(music: &RawMusic, n: usize, min_window: f64) -> Result<Vec<RawMusic>> {
    let min_len = (min_window * music.sample_rate as f64).round() as usize;
    Ok(clip_windows(music.samples.len(), n, min_len)?.into_iter().map(|(s, l)| music.window(s, l)).collect())
}

/// Video clips; short inputs are padded by repeating the last frame.
pub fn sample_video_clips(video: &RawVideo, n: usize, min_window: f64) -> Result<Vec<RawVideo>> {
    let min_len = (min_window * video.fps as f64).round() as usize;
    Ok(clip_windows(video.frames.len(), n, min_len)?
        .into_iter()
        .map(|(s, l)| {
            let last = video.frames.len() - 1;
            RawVideo { frames: (s..s + l).map(|i| video.frames[i.min(last)].clone()).collect(), fps: video.fps }
        })
        .collect())
}

/// Full image, its 2×2 tiles, or both.
pub fn image_views(image: &RawImage, n: usize) -> Result<Vec<RawImage>> {
    let (h, w) = (image.height, image.width);
    let tiles = || {
        let (h2, w2) = (h / 2, w / 2);
        vec![
            image.crop(0, 0, h2, w2),
            image.crop(0, w2, h2, w - w2),
            image.crop(h2, 0, h - h2, w2),
            image.crop(h2, w2, h - h2, w - w2),
        ]
    };
    match n {
        1 => Ok(vec![image.clone()]),
        4 => Ok(tiles()),
        5 => {
            let mut v = tiles();
            v.push(image.clone());
            Ok(v)
        }
        _ => Err(invalid("image_views", format!("image views must be 1, 4 or 5, got {n}"))),
    }
}

/// Mel mean/std over frames plus mean chroma, loudness-centred.
pub fn music_descriptor(clip: &RawMusic) -> Result<Vec<f64>> {
    clip.validate()?;
    let spec = stft(clip, FRAME, HOP)?;
    let mel = log_mel(&spec, MEL_BANDS);
    let frames = mel.len() as f64;
    let mut mean = vec![0.0; MEL_BANDS];
    for f in &mel {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v / frames;
        }
    }
    let mut std = vec![0.0; MEL_BANDS];
    for f in &mel {
        for ((s, v), m) in std.iter_mut().zip(f).zip(&mean) {
            *s += (v - m) * (v - m) / frames;
        }
    }
    let level = mean.iter().sum::<f64>() / MEL_BANDS as f64;
    let chroma = chromagram(clip, FRAME, HOP)?.aggregate();
    let cmean = chroma.iter().sum::<f64>() / 12.0;

    let mut out: Vec<f64> = mean.iter().map(|m| (m - level) / 10.0).collect();
    out.extend(std.iter().map(|s| s.sqrt() / 10.0));
    out.extend(chroma.iter().map(|c| c - cmean));
    Ok(out)
}

/// 4×4 block means per channel and a per-channel histogram, centred.
pub fn image_descriptor(image: &RawImage) -> Result<Vec<f64>> {
    if image.height < GRID || image.width < GRID {
        return Err(invalid("image_descriptor", format!("{}x{} is too small", image.height, image.width)));
    }
    if image.pixels.len() != image.height * image.width * 3 || image.pixels.iter().any(|p| !p.is_finite()) {
        return Err(invalid("image_descriptor", "malformed or non-finite pixels"));
    }
    let mut out = Vec::with_capacity(GRID * GRID * 3 + HIST_BINS * 3);
    for by in 0..GRID {
        let (y0, y1) = (by * image.height / GRID, (by + 1) * image.height / GRID);
        for bx in 0..GRID {
            let (x0, x1) = (bx * image.width / GRID, (bx + 1) * image.width / GRID);
            let area = ((y1 - y0) * (x1 - x0)) as f64;
            for c in 0..3 {
                let mut s = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        s += image.get(y, x, c) as f64;
                    }
                }
                out.push(s / area - 0.5);
            }
        }
    }
    let total = (image.height * image.width) as f64;
    for c in 0..3 {
        let mut hist = [0.0; HIST_BINS];
        for px in image.pixels.chunks_exact(3) {
            let b = ((px[c].clamp(0.0, 1.0) * HIST_BINS as f32) as usize).min(HIST_BINS - 1);
            hist[b] += 1.0;
        }
        out.extend(hist.iter().map(|h| h / total - 1.0 / HIST_BINS as f64));
    }
    Ok(out)
}

/// Per-frame image descriptors averaged over the clip.
pub fn video_descriptor(clip: &RawVideo) -> Result<Vec<f64>> {
    let mut acc: Option<Vec<f64>> = None;
    for f in &clip.frames {
        let d = image_descriptor(f)?;
        match &mut acc {
            None => acc = Some(d),
            Some(a) => a.iter_mut().zip(&d).for_each(|(x, y)| *x += y),
        }
    }
    let mut a = acc.ok_or_else(|| invalid("video_descriptor", "no frames"))?;
    let n = clip.frames.len() as f64;
    a.iter_mut().for_each(|x| *x /= n);
    Ok(a)
}

fn descriptor_len(m: Modality) -> usize {
    match m {
        Modality::Music => 2 * MEL_BANDS + 12,
        Modality::Video | Modality::Image => GRID * GRID * 3 + HIST_BINS * 3,
    }
}

/// One clip of any modality.
#[derive(Clone, Copy, Debug)]
pub enum Clip<'a> {
    Music(&'a RawMusic),
    Video(&'a RawVideo),
    Image(&'a RawImage),
}

impl Clip<'_> {
    pub fn modality(&self) -> Modality {
        match self {
            Clip::Music(_) => Modality::Music,
            Clip::Video(_) => Modality::Video,
            Clip::Image(_) => Modality::Image,
        }
    }
}

/// The three frozen projections.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    /// Row-major `d_enc × (descriptor + 1)` per modality, in [`Modality::ALL`] order.
    projections: [Vec<f64>; 3],
}

impl Encoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        if config.d_enc == 0 {
            return Err(invalid("encoder", "d_enc must be positive"));
        }
        if config.n_music == 0 || config.n_video == 0 {
            return Err(invalid("encoder", "clip counts must be at least 1"));
        }
        if ![1, 4, 5].contains(&config.n_image) {
            return Err(invalid("encoder", format!("n_image must be 1, 4 or 5, got {}", config.n_image)));
        }
        let projections = Modality::ALL.map(|m| {
            let cols = descriptor_len(m) + 1;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ m.salt());
            let normal = Normal::new(0.0, PROJECTION_GAIN / (cols as f64).sqrt()).expect("valid std");
            (0..config.d_enc * cols).map(|_| normal.sample(&mut rng)).collect()
        });
        Ok(Self { config, projections })
    }

    fn project(&self, m: Modality, mut descriptor: Vec<f64>) -> Vec<f64> {
        normalize(&mut descriptor);
        descriptor.push(BIAS_FEATURE);
        let cols = descriptor.len();
        let w = &self.projections[Modality::ALL.iter().position(|x| *x == m).unwrap()];
        let mut out: Vec<f64> = w
            .chunks_exact(cols)
            .map(|row| row.iter().zip(&descriptor).map(|(a, b)| a * b).sum::<f64>().tanh())
            .collect();
        normalize(&mut out);
        out
    }

    /// Unit-norm embedding of one clip.
    pub fn encode(&self, clip: Clip<'_>) -> Result<Vec<f64>> {
        let d = match clip {
            Clip::Music(m) => music_descriptor(m)?,
            Clip::Video(v) => {
                v.validate()?;
                video_descriptor(v)?
            }
            Clip::Image(i) => image_descriptor(i)?,
        };
        Ok(self.project(clip.modality(), d))
    }

    pub fn encode_music(&self, music: &RawMusic) -> Result<ClipEmbeddingSet> {
        let rows = sample_music_clips(music, self.config.n_music, self.config.min_window)?
            .iter()
            .map(|c| self.encode(Clip::Music(c)))
            .collect::<Result<Vec<_>>>()?;
        ClipEmbeddingSet::new(Modality::Music, rows)
    }

    pub fn encode_video(&self, video: &RawVideo) -> Result<ClipEmbeddingSet> {
        video.validate()?;
        let rows = sample_video_clips(video, self.config.n_video, self.config.min_window)?
            .iter()
            .map(|c| self.encode(Clip::Video(c)))
            .collect::<Result<Vec<_>>>()?;
        ClipEmbeddingSet::new(Modality::Video, rows)
    }

    pub fn encode_image(&self, image: &RawImage) -> Result<ClipEmbeddingSet> {
        image.validate()?;
        let rows = image_views(image, self.config.n_image)?
            .iter()
            .map(|c| self.encode(Clip::Image(c)))
            .collect::<Result<Vec<_>>>()?;
        ClipEmbeddingSet::new(Modality::Image, rows)
    }
}
