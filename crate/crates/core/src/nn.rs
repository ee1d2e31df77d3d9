//! Layers shared by the language model and the fusion transformer.
//!
//! Weights are stored `[d_out × d_in]` and applied as `x·Wᵀ + b`.

use rand::Rng;

use crate::error::Result;
use crate::param::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Low-rank factors attached to a [`Linear`]: `ΔW = scale · B·A`.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraFactors {
    /// `[r × d_in]`
    pub a: ParamId,
    /// `[d_out × r]`
    pub b: ParamId,
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub name: String,
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
    pub lora: Option<LoraFactors>,
}

fn randn<T: Scalar, R: Rng + ?Sized>(shape: Vec<usize>, std: f64, rng: &mut R) -> Tensor<T> {
    Tensor::<f64>::randn(shape, std, rng).cast()
}

impl Linear {
    /// `weight ~ N(0, gain²/d_in)`, zero bias.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let weight =
            store.add(format!("{name}.weight"), randn(vec![d_out, d_in], gain / (d_in as f64).sqrt(), rng), true)?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![d_out]), true)?;
        Ok(Self { name: name.to_string(), weight, bias, d_in, d_out, lora: None })
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    /// `W`, or `W + scale·B·A` with adapters attached. Merging evaluates the
    /// very same expression, so merged and adapted outputs agree bit for bit.
    pub fn effective_weight<T: Scalar>(&self, tape: &mut Tape<'_, T>) -> Result<Var> {
        let w = tape.param(self.weight);
        match &self.lora {
            None => Ok(w),
            Some(l) => {
                let a = tape.param(l.a);
                let b = tape.param(l.b);
                let ba = tape.matmul(b, a)?;
                let delta = tape.scale(ba, T::lit(l.scale));
                tape.add(w, delta)
            }
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let w = self.effective_weight(tape)?;
        let y = tape.matmul_nt(x, w)?;
        let b = tape.param(self.bias);
        tape.add_bias(y, b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, d: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add(format!("{name}.gain"), Tensor::full(vec![d], T::one()), true)?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(vec![d]), true)?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        tape.layer_norm(x, g, b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub n_heads: usize,
}

impl Attention {
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var, causal: bool) -> Result<Var> {
        let q = self.wq.forward(tape, x)?;
        let k = self.wk.forward(tape, x)?;
        let v = self.wv.forward(tape, x)?;
        let d = self.wq.d_out;
        let dh = d / self.n_heads;
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let mut heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let (qh, kh, vh) = if self.n_heads == 1 {
                (q, k, v)
            } else {
                (tape.slice_cols(q, h * dh, dh)?, tape.slice_cols(k, h * dh, dh)?, tape.slice_cols(v, h * dh, dh)?)
            };
            let s = tape.matmul_nt(qh, kh)?;
            let mut s = tape.scale(s, scale);
            if causal {
                s = tape.causal_mask(s)?;
            }
            let p = tape.softmax(s, 1)?;
            heads.push(tape.matmul(p, vh)?);
        }
        let joined = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
        self.wo.forward(tape, joined)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Block {
    /// Pre-norm block with a 4× GELU MLP.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        n_heads: usize,
        n_layers: usize,
        rng: &mut R,
    ) -> Result<Self> {
        // residual branches shrink with depth so deep random stacks stay tame
        let out_gain = 1.0 / (2.0 * n_layers as f64).sqrt();
        Ok(Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d)?,
            attn: Attention {
                wq: Linear::new(store, &format!("{name}.attn.wq"), d, d, 1.0, rng)?,
                wk: Linear::new(store, &format!("{name}.attn.wk"), d, d, 1.0, rng)?,
                wv: Linear::new(store, &format!("{name}.attn.wv"), d, d, 1.0, rng)?,
                wo: Linear::new(store, &format!("{name}.attn.wo"), d, d, out_gain, rng)?,
                n_heads,
            },
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d)?,
            fc1: Linear::new(store, &format!("{name}.mlp.fc1"), d, 4 * d, 1.0, rng)?,
            fc2: Linear::new(store, &format!("{name}.mlp.fc2"), 4 * d, d, out_gain, rng)?,
        })
    }

    pub fn linears(&self) -> [&Linear; 6] {
        [&self.attn.wq, &self.attn.wk, &self.attn.wv, &self.attn.wo, &self.fc1, &self.fc2]
    }

    pub fn linears_mut(&mut self) -> [&mut Linear; 6] {
        [&mut self.attn.wq, &mut self.attn.wk, &mut self.attn.wv, &mut self.attn.wo, &mut self.fc1, &mut self.fc2]
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var, causal: bool) -> Result<Var> {
        let h = self.ln1.forward(tape, x)?;
        let a = self.attn.forward(tape, h, causal)?;
        let x = tape.add(x, a)?;
        let h = self.ln2.forward(tape, x)?;
        let h = self.fc1.forward(tape, h)?;
        let h = tape.gelu(h);
        let h = self.fc2.forward(tape, h)?;
        tape.add(x, h)
    }
}
