//! Still images and frame sequences, plus the float-grid file format.
//!
//! Grid file layout (all little-endian):
//!
//! ```text
//! magic   b"TFGR"
//! u32     version (1)
//! u32     frames
//! u32     height
//! u32     width
//! u32     channels (always 3)
//! f32     fps (0 for a still image)
//! f32...  frames × height × width × channels values, row-major, RGB interleaved
//! ```

use std::fs;
use std::path::Path;

use crate::error::{invalid, Error, Result};

pub use tetrad_music::RawMusic;

const MAGIC: &[u8; 4] = b"TFGR";
const VERSION: u32 = 1;
pub const MIN_SIDE: usize = 8;

/// H×W×3 pixels in [0, 1], row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct RawImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

impl RawImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        let img = Self { height, width, pixels };
        img.validate()?;
        Ok(img)
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let pixels = (0..height * width).flat_map(|_| rgb).collect();
        Self { height, width, pixels }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < MIN_SIDE || self.width < MIN_SIDE {
            return Err(invalid(
                "image",
                format!("{}x{} is below the {MIN_SIDE}x{MIN_SIDE} minimum", self.height, self.width),
            ));
        }
        if self.pixels.len() != self.height * self.width * 3 {
            return Err(invalid(
                "image",
                format!("{} values for a {}x{}x3 image", self.pixels.len(), self.height, self.width),
            ));
        }
        if let Some(i) = self.pixels.iter().position(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(invalid("image", format!("pixel value {} at index {i} outside [0, 1]", self.pixels[i])));
        }
        Ok(())
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * 3 + c]
    }

    pub fn set(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Rows `[y0, y0+h)`, columns `[x0, x0+w)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> RawImage {
        let mut pixels = Vec::with_capacity(h * w * 3);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * 3;
            pixels.extend_from_slice(&self.pixels[start..start + w * 3]);
        }
        RawImage { height: h, width: w, pixels }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_grid(path, std::slice::from_ref(self), 0.0)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (mut frames, _) = read_grid(path)?;
        if frames.len() != 1 {
            return Err(invalid("image", format!("{}: expected 1 frame, found {}", path.display(), frames.len())));
        }
        Ok(frames.remove(0))
    }
}

/// Ordered frames of one shape.
#[derive(Clone, Debug, PartialEq)]
pub struct RawVideo {
    pub frames: Vec<RawImage>,
    pub fps: f32,
}

impl RawVideo {
    pub fn new(frames: Vec<RawImage>, fps: f32) -> Result<Self> {
        let v = Self { frames, fps };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self.frames.first().ok_or_else(|| invalid("video", "no frames"))?;
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(invalid("video", format!("fps must be positive, got {}", self.fps)));
        }
        for (i, f) in self.frames.iter().enumerate() {
            f.validate()?;
            if (f.height, f.width) != (first.height, first.width) {
                return Err(invalid(
                    "video",
                    format!("frame {i} is {}x{}, frame 0 is {}x{}", f.height, f.width, first.height, first.width),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.frames.len() as f64 / self.fps as f64
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_grid(path, &self.frames, self.fps)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (frames, fps) = read_grid(path)?;
        Self::new(frames, fps)
    }
}

fn write_grid(path: &Path, frames: &[RawImage], fps: f32) -> Result<()> {
    let (h, w) = frames.first().map(|f| (f.height, f.width)).unwrap_or((0, 0));
    let mut bytes = Vec::with_capacity(28 + frames.len() * h * w * 12);
    bytes.extend_from_slice(MAGIC);
    for v in [VERSION, frames.len() as u32, h as u32, w as u32, 3] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes.extend_from_slice(&fps.to_le_bytes());
    for f in frames {
        for p in &f.pixels {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn read_grid(path: &Path) -> Result<(Vec<RawImage>, f32)> {
    let bytes = fs::read(path)?;
    let bad = |msg: &str| Error::Invalid { op: "grid file", msg: format!("{}: {msg}", path.display()) };
    if bytes.len() < 28 || &bytes[..4] != MAGIC {
        return Err(bad("not a float-grid file"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    if word(0) != VERSION {
        return Err(bad("unsupported version"));
    }
    let (n, h, w, c) = (word(1) as usize, word(2) as usize, word(3) as usize, word(4) as usize);
    if c != 3 {
        return Err(bad("only 3-channel grids are supported"));
    }
    let fps = f32::from_le_bytes(bytes[24..28].try_into().unwrap());
    let per = h * w * 3;
    if bytes.len() != 28 + n * per * 4 {
        return Err(bad("payload length does not match the header"));
    }
    let values: Vec<f32> = bytes[28..].chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    let frames =
        values.chunks(per.max(1)).take(n).map(|px| RawImage::new(h, w, px.to_vec())).collect::<Result<Vec<_>>>()?;
    Ok((frames, fps))
}
