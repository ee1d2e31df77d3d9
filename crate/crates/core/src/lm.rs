//! Pre-norm decoder-only language model with learned absolute positions.
//!
//! The token table (`lm.tok_emb`) and the untied output projection
//! (`lm.unembed`) are separate parameters; the model consumes embedding rows
//! rather than ids so that modality rows can be spliced in front of text.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Block, LayerNorm};
use crate::param::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    #[serde(default)]
    pub dropout: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self { vocab_size: 2048, d_model: 64, n_layers: 4, n_heads: 4, max_seq_len: 512, dropout: 0.0 }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size < crate::tokenizer::SPECIALS.len() {
            return Err(Error::Config(format!("vocab_size {} cannot hold the special tokens", self.vocab_size)));
        }
        if self.max_seq_len == 0 {
            return Err(Error::Config("max_seq_len must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LanguageModel {
    pub config: LmConfig,
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    pub layers: Vec<Block>,
    pub ln_f: LayerNorm,
    pub unembed: ParamId,
}

/// Decoding rule for [`LanguageModel::generate`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Decoding {
    Greedy,
    Temperature { t: f64, seed: u64 },
}

impl LanguageModel {
    /// Registers every parameter under `lm.`.
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, config: LmConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let emb_std = 1.0 / (d as f64).sqrt();
        let tok_emb =
            store.add("lm.tok_emb", Tensor::<f64>::randn(vec![config.vocab_size, d], emb_std, rng).cast(), true)?;
        let pos_emb = store.add(
            "lm.pos_emb",
            Tensor::<f64>::randn(vec![config.max_seq_len, d], 0.5 * emb_std, rng).cast(),
            true,
        )?;
        let layers = (0..config.n_layers)
            .map(|i| Block::new(store, &format!("lm.layers.{i}"), d, config.n_heads, config.n_layers, rng))
            .collect::<Result<Vec<_>>>()?;
        let ln_f = LayerNorm::new(store, "lm.ln_f", d)?;
        let unembed =
            store.add("lm.unembed", Tensor::<f64>::randn(vec![config.vocab_size, d], emb_std, rng).cast(), true)?;
        Ok(Self { config, tok_emb, pos_emb, layers, ln_f, unembed })
    }

    /// Token-embedding rows `[ids.len() × d_model]`.
    pub fn embed<T: Scalar>(&self, tape: &mut Tape<'_, T>, ids: &[usize]) -> Result<Var> {
        let table = tape.param(self.tok_emb);
        tape.embedding(table, ids)
    }

    /// Logits `[T × V]` for embedding rows `[T × d_model]`, causally masked.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        x: Var,
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let (len, d) = tape.value(x).dims2("forward_causal")?;
        if len > self.config.max_seq_len {
            return Err(Error::TooLong { len, max: self.config.max_seq_len });
        }
        if d != self.config.d_model {
            return Err(Error::Shape { op: "forward_causal", lhs: vec![len, d], rhs: vec![len, self.config.d_model] });
        }
        let table = tape.param(self.pos_emb);
        let pos = tape.slice_rows(table, 0, len)?;
        let mut h = tape.add(x, pos)?;
        let p = self.config.dropout;
        for block in &self.layers {
            if let (Some(rng), true) = (dropout.as_deref_mut(), p > 0.0) {
                h = tape.dropout(h, p, rng);
            }
            h = block.forward(tape, h, true)?;
        }
        let h = self.ln_f.forward(tape, h)?;
        let u = tape.param(self.unembed);
        tape.matmul_nt(h, u)
    }

    /// Continues `prefix` (embedding rows) followed by `start` tokens, one
    /// token at a time, until `eos`, `max_new` tokens or the context limit. The returned ids
    /// exclude `start` and the terminating `eos`.
    pub fn generate<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        prefix: &Tensor<T>,
        start: &[usize],
        eos: usize,
        max_new: usize,
        decoding: Decoding,
    ) -> Result<Vec<usize>> {
        let mut rng = match decoding {
            Decoding::Temperature { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
            Decoding::Greedy => None,
        };
        let mut tokens = start.to_vec();
        let mut out = Vec::new();
        let prefix_rows = if prefix.is_empty() { 0 } else { prefix.dims2("generate")?.0 };
        while out.len() < max_new {
            // an overlong prompt is an error (raised by `forward`); running
            // into the context limit mid-generation just ends the output
            if !out.is_empty() && prefix_rows + tokens.len() > self.config.max_seq_len {
                break;
            }
            let mut tape = Tape::inference(store);
            let text = self.embed(&mut tape, &tokens)?;
            let x = if prefix_rows == 0 {
                text
            } else {
                let p = tape.constant(prefix.clone());
                tape.concat_rows(&[p, text])?
            };
            let logits = self.forward(&mut tape, x, None)?;
            let lv = tape.value(logits);
            let last = lv.row(lv.shape()[0] - 1);
            let next = match (&decoding, rng.as_mut()) {
                (Decoding::Temperature { t, .. }, Some(rng)) if *t > 0.0 => sample(last, *t, rng),
                _ => argmax(last),
            };
            if next == eos {
                break;
            }
            out.push(next);
            tokens.push(next);
        }
        Ok(out)
    }
}

/// First index of the maximum.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn sample<T: Scalar, R: Rng>(row: &[T], t: f64, rng: &mut R) -> usize {
    let m = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
    let w: Vec<f64> = row.iter().map(|v| ((v.as_f64() - m) / t).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, wi) in w.iter().enumerate() {
        u -= wi;
        if u <= 0.0 {
            return i;
        }
    }
    w.len() - 1
}
