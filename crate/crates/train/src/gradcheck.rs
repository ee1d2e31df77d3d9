//! End-to-end finite-difference check of the whole pipeline at micro scale,
//! once per stage's trainable set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tetrad_core::gradcheck::grad_check_params;
use tetrad_core::{
    AssemblyMode, ClipEmbeddingSet, FusionConfig, LmConfig, ModalInputs, Modality, Model, ModelConfig, ParamStore,
    Tensor,
};

use crate::config::{stage1_trainable, stage2_trainable};
use crate::error::Result;

const VOCAB: usize = 40;
const D_ENC: usize = 8;

/// d_model 16, two LM layers, one fusion layer.
pub fn micro_config() -> ModelConfig {
    ModelConfig {
        lm: LmConfig { vocab_size: VOCAB, d_model: 16, n_layers: 2, n_heads: 2, max_seq_len: 64, dropout: 0.0 },
        d_enc: D_ENC,
        fusion: FusionConfig { n_layers: 1, n_heads: 2, max_len: 32 },
        lora_rank: 4,
        lora_alpha: 8.0,
        ..ModelConfig::default()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamResult {
    pub name: String,
    pub coordinates: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct StageCheck {
    pub stage: u8,
    pub params: Vec<ParamResult>,
    pub max_rel_error: f64,
}

fn unit_rows(m: Modality, n: usize, rng: &mut ChaCha8Rng) -> ClipEmbeddingSet {
    let rows = (0..n)
        .map(|_| {
            let r: Vec<f64> = (0..D_ENC).map(|_| rng.random::<f64>() - 0.5).collect();
            let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            r.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    ClipEmbeddingSet::new(m, rows).expect("non-empty rows")
}

fn check(store: &mut ParamStore<f64>, model: &Model, stage: u8, seed: u64) -> Result<StageCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = ModalInputs {
        music: Some(unit_rows(Modality::Music, 3, &mut rng)),
        video: Some(unit_rows(Modality::Video, 3, &mut rng)),
        image: Some(unit_rows(Modality::Image, 1, &mut rng)),
        text: (0..2).map(|_| rng.random_range(7..VOCAB)).collect(),
    };
    let q: Vec<usize> = (0..3).map(|_| rng.random_range(7..VOCAB)).collect();
    let t: Vec<usize> = (0..4).map(|_| rng.random_range(7..VOCAB)).collect();
    let checks =
        grad_check_params(store, 1e-6, |tape| Ok(model.loss(tape, &inputs, &q, &t, AssemblyMode::Fused, None)?.0))?;
    let params: Vec<ParamResult> = checks
        .into_iter()
        .map(|c| ParamResult { name: c.name, coordinates: c.report.coordinates, max_rel_error: c.report.max_rel_error })
        .collect();
    let max_rel_error = params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max);
    Ok(StageCheck { stage, params, max_rel_error })
}

/// Checks stage 1 (adaptors, fusion) and stage 2 (plus LoRA factors and
/// the token table) in 64-bit.
pub fn pipeline_gradcheck(seed: u64) -> Result<Vec<StageCheck>> {
    let mut store = ParamStore::<f64>::new();
    let mut model = Model::new(&mut store, micro_config(), seed)?;
    store.set_trainable(stage1_trainable);
    let one = check(&mut store, &model, 1, seed + 1)?;

    model.attach_lora(&mut store, seed + 2)?;
    // B starts at zero, which would make A's gradient vanish
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 3);
    for (_, p) in store.iter_mut() {
        if p.name.starts_with("lora.") && p.name.ends_with(".b") {
            p.tensor = Tensor::randn(p.tensor.shape().to_vec(), 0.1, &mut rng);
        }
    }
    store.set_trainable(stage2_trainable);
    let two = check(&mut store, &model, 2, seed + 1)?;
    Ok(vec![one, two])
}
