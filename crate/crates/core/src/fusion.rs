//! Per-modality linear adaptors and the bidirectional fusion transformer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{ClipEmbeddingSet, Modality};
use crate::error::{invalid, Error, Result};
use crate::nn::{Block, Linear};
use crate::param::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Segment of the fused block; also the row index into `fusion.seg_emb`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Segment {
    Music = 0,
    Video = 1,
    Image = 2,
    Text = 3,
}

impl From<Modality> for Segment {
    fn from(m: Modality) -> Self {
        match m {
            Modality::Music => Segment::Music,
            Modality::Video => Segment::Video,
            Modality::Image => Segment::Image,
        }
    }
}

/// `𝒜: d_enc → d_model`, applied row-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct Adaptor {
    pub modality: Modality,
    pub linear: Linear,
}

impl Adaptor {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        modality: Modality,
        d_enc: usize,
        d_model: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            modality,
            linear: Linear::new(store, &format!("adaptor.{}", modality.name()), d_enc, d_model, 1.0, rng)?,
        })
    }

    /// `N × d_model` rows for an `N × d_enc` set.
    pub fn adapt<T: Scalar>(&self, tape: &mut Tape<'_, T>, set: &ClipEmbeddingSet) -> Result<Var> {
        if set.modality != self.modality {
            return Err(invalid("adapt", format!("{} adaptor given a {} clip set", self.modality, set.modality)));
        }
        if set.dim != self.linear.d_in {
            return Err(Error::Shape {
                op: "adapt",
                lhs: vec![set.count(), set.dim],
                rhs: vec![self.linear.d_out, self.linear.d_in],
            });
        }
        let x = tape.constant(set.matrix());
        self.linear.forward(tape, x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    /// Longest fused block.
    pub max_len: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { n_layers: 1, n_heads: 4, max_len: 64 }
    }
}

/// `𝒯`: length-preserving, fully bidirectional. With zero layers it is the
/// identity and owns no parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionTransformer {
    pub config: FusionConfig,
    pub pos_emb: Option<ParamId>,
    pub seg_emb: Option<ParamId>,
    pub layers: Vec<Block>,
}

impl FusionTransformer {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        config: FusionConfig,
        d_model: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if config.n_layers == 0 {
            return Ok(Self { config, pos_emb: None, seg_emb: None, layers: Vec::new() });
        }
        if config.n_heads == 0 || !d_model.is_multiple_of(config.n_heads) {
            return Err(Error::Config(format!("fusion heads {} must divide d_model {d_model}", config.n_heads)));
        }
        let std = 0.5 / (d_model as f64).sqrt();
        let pos_emb =
            store.add("fusion.pos_emb", Tensor::<f64>::randn(vec![config.max_len, d_model], std, rng).cast(), true)?;
        let seg_emb = store.add("fusion.seg_emb", Tensor::<f64>::randn(vec![4, d_model], std, rng).cast(), true)?;
        let layers = (0..config.n_layers)
            .map(|i| Block::new(store, &format!("fusion.layers.{i}"), d_model, config.n_heads, config.n_layers, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, pos_emb: Some(pos_emb), seg_emb: Some(seg_emb), layers })
    }

    /// Fuses `rows` (`n × d_model`), tagged per row by `segments`.
    pub fn fuse<T: Scalar>(&self, tape: &mut Tape<'_, T>, rows: Var, segments: &[Segment]) -> Result<Var> {
        let (n, _) = tape.value(rows).dims2("fuse")?;
        if n != segments.len() {
            return Err(invalid("fuse", format!("{n} rows but {} segment tags", segments.len())));
        }
        if n > self.config.max_len {
            return Err(Error::TooLong { len: n, max: self.config.max_len });
        }
        let (Some(pos_emb), Some(seg_emb)) = (self.pos_emb, self.seg_emb) else {
            return Ok(rows);
        };
        if n == 0 {
            return Ok(rows);
        }
        let table = tape.param(pos_emb);
        let pos = tape.slice_rows(table, 0, n)?;
        let seg_table = tape.param(seg_emb);
        let ids: Vec<usize> = segments.iter().map(|s| *s as usize).collect();
        let seg = tape.embedding(seg_table, &ids)?;
        let mut h = tape.add(rows, pos)?;
        h = tape.add(h, seg)?;
        for block in &self.layers {
            h = block.forward(tape, h, false)?;
        }
        Ok(h)
    }
}
