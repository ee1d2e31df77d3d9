//! The full pipeline: adaptors, fusion transformer and causal LM, plus the
//! assembly of one input sequence.
//!
//! Sequence layout:
//!
//! ```text
//! [ music ‖ video ‖ image ‖ e_t ]  [ query ]  [ <s> w1 … wn ]
//!   └──── fused block (𝒯) ────┘   bypasses 𝒯   targets: w1 … wn </s>
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{ClipEmbeddingSet, Modality};
use crate::error::{invalid, Error, Result};
use crate::fusion::{Adaptor, FusionConfig, FusionTransformer, Segment};
use crate::lm::{argmax, Decoding, LanguageModel, LmConfig};
use crate::lora::{attach_lora, merge_lora, DEFAULT_TARGETS};
use crate::param::ParamStore;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::tokenizer::{BOS_ID, EOS_ID};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub lm: LmConfig,
    pub d_enc: usize,
    pub fusion: FusionConfig,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub lora_targets: Vec<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            lm: LmConfig::default(),
            d_enc: 128,
            fusion: FusionConfig::default(),
            lora_rank: 32,
            lora_alpha: 32.0,
            lora_targets: DEFAULT_TARGETS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// How the modality rows reach the LM.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssemblyMode {
    /// One pooled row per modality, no fusion transformer.
    Vanilla,
    /// Every clip row, through the fusion transformer.
    Fused,
}

/// Conditioning inputs of one example. Absent modalities contribute no rows.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModalInputs {
    pub music: Option<ClipEmbeddingSet>,
    pub video: Option<ClipEmbeddingSet>,
    pub image: Option<ClipEmbeddingSet>,
    /// Input-text token ids (`e_t`), fused together with the media rows.
    #[serde(default)]
    pub text: Vec<usize>,
}

impl ModalInputs {
    pub fn get(&self, m: Modality) -> Option<&ClipEmbeddingSet> {
        match m {
            Modality::Music => self.music.as_ref(),
            Modality::Video => self.video.as_ref(),
            Modality::Image => self.image.as_ref(),
        }
    }

    /// Text only: every media block removed.
    pub fn text_only(&self) -> ModalInputs {
        ModalInputs { text: self.text.clone(), ..Default::default() }
    }

    /// Each set replaced by its pooled single row.
    pub fn pooled(&self) -> ModalInputs {
        ModalInputs {
            music: self.music.as_ref().map(ClipEmbeddingSet::pooled),
            video: self.video.as_ref().map(ClipEmbeddingSet::pooled),
            image: self.image.as_ref().map(ClipEmbeddingSet::pooled),
            text: self.text.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Fused(Segment),
    Query,
    Target,
}

/// One assembled sequence on a tape.
#[derive(Clone, Debug)]
pub struct AssembledSequence {
    /// `len × d_model`
    pub embeddings: Var,
    pub roles: Vec<Role>,
    /// Next-token label per row (meaningful where `mask` is set).
    pub labels: Vec<usize>,
    /// True exactly on target rows.
    pub mask: Vec<bool>,
}

impl AssembledSequence {
    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    pub fn fused_len(&self) -> usize {
        self.roles.iter().filter(|r| matches!(r, Role::Fused(_))).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub lm: LanguageModel,
    pub adaptors: Vec<Adaptor>,
    pub fusion: FusionTransformer,
}

impl Model {
    /// Registers `lm.*`, `adaptor.*` and `fusion.*`; all trainable until a
    /// stage decides otherwise.
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lm = LanguageModel::new(store, config.lm.clone(), &mut rng)?;
        let adaptors = Modality::ALL
            .iter()
            .map(|&m| Adaptor::new(store, m, config.d_enc, config.lm.d_model, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let fusion = FusionTransformer::new(store, config.fusion.clone(), config.lm.d_model, &mut rng)?;
        Ok(Self { config, lm, adaptors, fusion })
    }

    pub fn adaptor(&self, m: Modality) -> &Adaptor {
        &self.adaptors[Modality::ALL.iter().position(|x| *x == m).expect("known modality")]
    }

    /// Attaches adapters per the config; returns the adapter parameter count.
    pub fn attach_lora<T: Scalar>(&mut self, store: &mut ParamStore<T>, seed: u64) -> Result<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let patterns: Vec<&str> = self.config.lora_targets.iter().map(String::as_str).collect();
        attach_lora(store, &mut self.lm, &patterns, self.config.lora_rank, self.config.lora_alpha, &mut rng)
    }

    pub fn has_lora(&self) -> bool {
        self.lm.layers.iter().any(|b| b.linears().iter().any(|l| l.lora.is_some()))
    }

    pub fn merge_lora<T: Scalar>(&mut self, store: &mut ParamStore<T>) -> Result<usize> {
        merge_lora(store, &mut self.lm)
    }

    /// `adapt` for one modality.
    pub fn adapt<T: Scalar>(&self, tape: &mut Tape<'_, T>, set: &ClipEmbeddingSet) -> Result<Var> {
        self.adaptor(set.modality).adapt(tape, set)
    }

    /// The fused block and its segment tags.
    pub fn fused_block<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        inputs: &ModalInputs,
        mode: AssemblyMode,
    ) -> Result<(Var, Vec<Segment>)> {
        let mut parts = Vec::new();
        let mut segments = Vec::new();
        for m in Modality::ALL {
            let Some(set) = inputs.get(m) else { continue };
            let rows = match mode {
                AssemblyMode::Vanilla => {
                    let pooled = set.pooled();
                    self.adapt(tape, &pooled)?
                }
                AssemblyMode::Fused => self.adapt(tape, set)?,
            };
            segments.extend(std::iter::repeat_n(Segment::from(m), tape.shape(rows)[0]));
            parts.push(rows);
        }
        if !inputs.text.is_empty() {
            parts.push(self.lm.embed(tape, &inputs.text)?);
            segments.extend(std::iter::repeat_n(Segment::Text, inputs.text.len()));
        }
        let d = self.config.lm.d_model;
        let block = match parts.len() {
            0 => tape.constant(Tensor::zeros(vec![0, d])),
            1 => parts[0],
            _ => tape.concat_rows(&parts)?,
        };
        let block = match mode {
            AssemblyMode::Vanilla => block,
            AssemblyMode::Fused => self.fusion.fuse(tape, block, &segments)?,
        };
        Ok((block, segments))
    }

    /// Fused block, query and (if given) `<s> target`, with labels and mask.
    pub fn assemble<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        inputs: &ModalInputs,
        query: &[usize],
        target: Option<&[usize]>,
        mode: AssemblyMode,
    ) -> Result<AssembledSequence> {
        let (block, segments) = self.fused_block(tape, inputs, mode)?;
        if segments.is_empty() && query.is_empty() {
            return Err(invalid("assemble", "no modality, no input text and no query: nothing to condition on"));
        }
        let mut roles: Vec<Role> = segments.iter().map(|s| Role::Fused(*s)).collect();
        let mut parts = vec![block];
        if !query.is_empty() {
            parts.push(self.lm.embed(tape, query)?);
            roles.extend(std::iter::repeat_n(Role::Query, query.len()));
        }
        let mut labels = vec![0; roles.len()];
        let mut mask = vec![false; roles.len()];
        if let Some(t) = target {
            let mut ids = Vec::with_capacity(t.len() + 1);
            ids.push(BOS_ID);
            ids.extend_from_slice(t);
            parts.push(self.lm.embed(tape, &ids)?);
            roles.extend(std::iter::repeat_n(Role::Target, ids.len()));
            labels.extend_from_slice(t);
            labels.push(EOS_ID);
            mask.extend(std::iter::repeat_n(true, ids.len()));
        }
        let embeddings = if segments.is_empty() {
            // skip the empty block so the graph does not grow a dead branch
            if parts.len() == 2 {
                parts[1]
            } else {
                tape.concat_rows(&parts[1..])?
            }
        } else {
            tape.concat_rows(&parts)?
        };
        Ok(AssembledSequence { embeddings, roles, labels, mask })
    }

    /// Logits for an assembled sequence.
    pub fn logits<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        seq: &AssembledSequence,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        self.lm.forward(tape, seq.embeddings, dropout)
    }

    /// Masked next-token cross-entropy over the target rows.
    pub fn loss<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        inputs: &ModalInputs,
        query: &[usize],
        target: &[usize],
        mode: AssemblyMode,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, Var, AssembledSequence)> {
        let seq = self.assemble(tape, inputs, query, Some(target), mode)?;
        let logits = self.logits(tape, &seq, dropout)?;
        let loss = tape.cross_entropy(logits, &seq.labels, &seq.mask)?;
        Ok((loss, logits, seq))
    }

    /// Prompt rows (fused block and query), evaluated without gradients.
    pub fn prompt<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        inputs: &ModalInputs,
        query: &[usize],
        mode: AssemblyMode,
    ) -> Result<Tensor<T>> {
        let mut tape = Tape::inference(store);
        let seq = self.assemble(&mut tape, inputs, query, None, mode)?;
        Ok(tape.value(seq.embeddings).clone())
    }

    /// Decodes a response after `<s>`; ids exclude `<s>` and `</s>`.
    pub fn generate<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        inputs: &ModalInputs,
        query: &[usize],
        mode: AssemblyMode,
        max_new: usize,
        decoding: Decoding,
    ) -> Result<Vec<usize>> {
        if max_new == 0 {
            return Ok(Vec::new());
        }
        let prompt = self.prompt(store, inputs, query, mode)?;
        self.lm.generate(store, &prompt, &[BOS_ID], EOS_ID, max_new, decoding)
    }
}

/// Fraction of supervised rows whose argmax equals the label.
pub fn target_accuracy<T: Scalar>(logits: &Tensor<T>, labels: &[usize], mask: &[bool]) -> Result<f64> {
    let (rows, _) = logits.dims2("target_accuracy")?;
    if rows != labels.len() || rows != mask.len() {
        return Err(Error::Shape { op: "target_accuracy", lhs: vec![rows], rhs: vec![labels.len(), mask.len()] });
    }
    let mut hit = 0usize;
    let mut total = 0usize;
    for r in 0..rows {
        if mask[r] {
            total += 1;
            if argmax(logits.row(r)) == labels[r] {
                hit += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::EmptyLoss);
    }
    Ok(hit as f64 / total as f64)
}
