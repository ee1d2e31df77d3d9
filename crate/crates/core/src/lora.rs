//! Low-rank adapters on the language model's linear weights.

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::lm::LanguageModel;
use crate::nn::{Linear, LoraFactors};
use crate::param::ParamStore;
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Every attention projection of every layer.
pub const DEFAULT_TARGETS: &[&str] = &["lm.layers.*.attn.w*.weight"];

/// `*` matches any (possibly empty) run of characters.
pub fn glob_match(pattern: &str, name: &str) -> bool {
    let (p, n) = (pattern.as_bytes(), name.as_bytes());
    let (mut pi, mut ni) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while ni < n.len() {
        if pi < p.len() && p[pi] == b'*' {
            star = Some((pi, ni));
            pi += 1;
        } else if pi < p.len() && p[pi] == n[ni] {
            pi += 1;
            ni += 1;
        } else if let Some((sp, sn)) = star {
            pi = sp + 1;
            ni = sn + 1;
            star = Some((sp, sn + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == b'*')
}

fn linears_mut(lm: &mut LanguageModel) -> impl Iterator<Item = &mut Linear> {
    lm.layers.iter_mut().flat_map(|b| b.linears_mut())
}

pub fn adapter_names(target: &Linear) -> (String, String) {
    (format!("lora.{}.a", target.name), format!("lora.{}.b", target.name))
}

/// Attaches rank-`r` adapters to every linear weight matching a pattern.
/// `A ~ N(0, 1/d_in)`, `B = 0`, so the model's output is unchanged. Matched
/// base weights are frozen; the factors are trainable. Returns the number of
/// adapter parameters added.
pub fn attach_lora<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    lm: &mut LanguageModel,
    patterns: &[&str],
    r: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<usize> {
    if r == 0 {
        return Err(Error::Config("LoRA rank must be positive".into()));
    }
    if patterns.is_empty() {
        return Err(Error::Config("no LoRA target patterns".into()));
    }
    let names: Vec<String> = linears_mut(lm).map(|l| l.weight_name()).collect();
    for p in patterns {
        if !names.iter().any(|n| glob_match(p, n)) {
            return Err(Error::Config(format!("LoRA pattern `{p}` matches no weight")));
        }
    }
    let mut added = 0;
    for lin in linears_mut(lm) {
        let wn = lin.weight_name();
        if !patterns.iter().any(|p| glob_match(p, &wn)) {
            continue;
        }
        if lin.lora.is_some() {
            return Err(invalid("attach_lora", format!("`{wn}` already has an adapter")));
        }
        let (an, bn) = adapter_names(lin);
        let a = Tensor::<f64>::randn(vec![r, lin.d_in], 1.0 / (lin.d_in as f64).sqrt(), rng).cast();
        let a = store.add(an, a, true)?;
        let b = store.add(bn, Tensor::zeros(vec![lin.d_out, r]), true)?;
        store.get_mut(lin.weight).trainable = false;
        lin.lora = Some(LoraFactors { a, b, scale: alpha / r as f64 });
        added += r * (lin.d_in + lin.d_out);
    }
    Ok(added)
}

/// Folds every adapter into its base weight and removes the factors.
/// Without attached adapters (including a second merge) this is an error.
pub fn merge_lora<T: Scalar>(store: &mut ParamStore<T>, lm: &mut LanguageModel) -> Result<usize> {
    let mut merged = 0;
    for lin in linears_mut(lm) {
        let Some(factors) = lin.lora.clone() else { continue };
        let w = {
            let mut tape = Tape::inference(&*store);
            let v = lin.effective_weight(&mut tape)?;
            tape.value(v).clone()
        };
        store.get_mut(lin.weight).tensor = w;
        store.remove(factors.a);
        store.remove(factors.b);
        lin.lora = None;
        merged += 1;
    }
    if merged == 0 {
        return Err(invalid("merge_lora", "no adapters attached (already merged?)"));
    }
    Ok(merged)
}
