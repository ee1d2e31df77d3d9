//! Stage, ablation and run configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tetrad_core::lora::DEFAULT_TARGETS;
use tetrad_core::{AssemblyMode, EncoderConfig, FusionConfig, LmConfig, ModalInputs, ModelConfig};
use tetrad_data::TargetVariant;

use crate::error::{config, Result};

/// Parameters updated in stage 1: the modality adaptors and the fusion
/// transformer.
pub fn stage1_trainable(name: &str) -> bool {
    name.starts_with("adaptor.") || name.starts_with("fusion.")
}

/// Stage 2 adds the LoRA factors and the token table.
pub fn stage2_trainable(name: &str) -> bool {
    stage1_trainable(name) || name.starts_with("lora.") || name == "lm.tok_emb"
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    /// 1 or 2.
    pub stage: u8,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Stops the stage early once this many optimizer steps are done.
    pub max_steps: Option<u64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self::stage1()
    }
}

impl StageConfig {
    pub fn stage1() -> Self {
        Self { stage: 1, epochs: 5, lr: 1e-4, batch_size: 8, max_steps: None, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn stage2() -> Self {
        Self { stage: 2, epochs: 2, ..Self::stage1() }
    }

    pub fn trains(&self, name: &str) -> bool {
        if self.stage == 1 {
            stage1_trainable(name)
        } else {
            stage2_trainable(name)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.stage, 1 | 2) {
            return Err(config(format!("stage must be 1 or 2, got {}", self.stage)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(config("epochs and batch_size must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config(format!("learning rate {} is not positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(config("Adam betas must lie in [0, 1) and eps must be positive"));
        }
        Ok(())
    }
}

/// The switches of the ablation study.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Train stage 2 on the MI2T and MV2T sets as well.
    pub mwit: bool,
    /// Feed every sampled clip embedding instead of one pooled row.
    pub mie: bool,
    /// Fusion transformer depth (0 = none).
    pub pt_layers: usize,
    pub target_variant: TargetVariant,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self::beta()
    }
}

impl AblationConfig {
    /// No multi-way instruction data, pooled inputs, no fusion.
    pub fn vanilla() -> Self {
        Self { mwit: false, mie: false, pt_layers: 0, target_variant: TargetVariant::Full }
    }

    pub fn alpha() -> Self {
        Self { mwit: true, mie: true, ..Self::vanilla() }
    }

    pub fn beta() -> Self {
        Self { pt_layers: 1, ..Self::alpha() }
    }

    pub fn named(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "vanilla" => Some(Self::vanilla()),
            "alpha" | "α" => Some(Self::alpha()),
            "beta" | "β" => Some(Self::beta()),
            _ => None,
        }
    }

    pub fn mode(&self) -> AssemblyMode {
        if !self.mie && self.pt_layers == 0 {
            AssemblyMode::Vanilla
        } else {
            AssemblyMode::Fused
        }
    }

    /// Applies the MIE switch to a full set of inputs.
    pub fn shape_inputs(&self, inputs: ModalInputs) -> ModalInputs {
        if self.mie {
            inputs
        } else {
            inputs.pooled()
        }
    }

    /// Row label in the style of the ablation tables: `(1)` is the baseline
    /// without multi-way data, `(2)` adds it.
    pub fn label(&self) -> String {
        let mut s = if self.mwit { "(2)" } else { "(1)" }.to_string();
        if self.mie {
            s.push_str("+MIE");
        }
        if self.pt_layers > 0 {
            s.push_str(&format!("+PT({}-layer)", self.pt_layers));
        }
        if self.target_variant != TargetVariant::Full {
            s.push_str(&format!(" [{}]", self.target_variant.name()));
        }
        s
    }
}

/// LM and adapter sizes; the vocabulary comes from the tokenizer and the
/// fusion depth from the ablation switches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    pub dropout: f64,
    pub vocab_cap: usize,
    pub fusion_heads: usize,
    pub fusion_max_len: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 4,
            n_heads: 4,
            max_seq_len: 512,
            dropout: 0.0,
            vocab_cap: 2048,
            fusion_heads: 4,
            fusion_max_len: 128,
            lora_rank: 32,
            lora_alpha: 32.0,
        }
    }
}

impl ModelSpec {
    pub fn model_config(&self, vocab_size: usize, d_enc: usize, pt_layers: usize) -> ModelConfig {
        ModelConfig {
            lm: LmConfig {
                vocab_size,
                d_model: self.d_model,
                n_layers: self.n_layers,
                n_heads: self.n_heads,
                max_seq_len: self.max_seq_len,
                dropout: self.dropout,
            },
            d_enc,
            fusion: FusionConfig { n_layers: pt_layers, n_heads: self.fusion_heads, max_len: self.fusion_max_len },
            lora_rank: self.lora_rank,
            lora_alpha: self.lora_alpha,
            lora_targets: DEFAULT_TARGETS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub max_new: usize,
    /// Evaluate at most this many test examples per benchmark.
    pub limit: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { max_new: 256, limit: None }
    }
}

/// Everything a training run needs besides the data. Loaded from TOML;
/// missing keys take the defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelSpec,
    pub encoder: EncoderConfig,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub ablation: AblationConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelSpec::default(),
            encoder: EncoderConfig::default(),
            stage1: StageConfig::stage1(),
            stage2: StageConfig::stage2(),
            ablation: AblationConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| config(format!("bad run config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.stage1.validate()?;
        self.stage2.validate()?;
        if self.stage1.stage != 1 || self.stage2.stage != 2 {
            return Err(config("stage1.stage must be 1 and stage2.stage must be 2"));
        }
        if !self.model.d_model.is_multiple_of(self.model.n_heads)
            || !self.model.d_model.is_multiple_of(self.model.fusion_heads)
        {
            return Err(config("d_model must be divisible by both head counts"));
        }
        Ok(())
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        self.model.model_config(vocab_size, self.encoder.d_enc, self.ablation.pt_layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_sets_nest() {
        for n in [
            "adaptor.music.w",
            "fusion.layers.0.attn.wq.weight",
            "lora.lm.layers.0.attn.wq.a",
            "lm.tok_emb",
            "lm.unembed",
            "lm.layers.0.mlp.fc1.weight",
        ] {
            if stage1_trainable(n) {
                assert!(stage2_trainable(n));
            }
        }
        assert!(!stage2_trainable("lm.unembed"));
        assert!(!stage1_trainable("lm.tok_emb"));
    }

    #[test]
    fn toml_round_trip_and_defaults() {
        let c = RunConfig::from_toml("seed = 3\n[stage1]\nlr = 0.01\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.stage1.lr, 0.01);
        assert_eq!(c.stage1.batch_size, 8);
        assert_eq!(c.stage2.epochs, 2);
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert!(RunConfig::from_toml("[stage1]\nlearning_rate = 1").is_err());
        assert!(RunConfig::from_toml("[stage1]\nstage = 2").is_err());
    }

    #[test]
    fn named_configs() {
        assert_eq!(AblationConfig::vanilla().mode(), AssemblyMode::Vanilla);
        assert_eq!(AblationConfig::alpha().mode(), AssemblyMode::Fused);
        assert_eq!(AblationConfig::beta().label(), "(2)+MIE+PT(1-layer)");
        assert_eq!(AblationConfig::named("β"), Some(AblationConfig::beta()));
    }
}
