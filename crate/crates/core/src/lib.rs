//! Reverse-mode autograd tensors and the model built on them: a small causal
//! language model with LoRA adapters, frozen stand-in modality encoders,
//! per-modality adaptors and a bidirectional pre-LM fusion transformer.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below name the two concrete instantiations.

pub mod checkpoint;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod lm;
pub mod lora;
pub mod media;
pub mod model;
pub mod nn;
pub mod param;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod tokenizer;

pub use encoders::{pool, ClipEmbeddingSet, Encoder, EncoderConfig, Modality};
pub use error::{Error, Result};
pub use fusion::{FusionConfig, Segment};
pub use lm::{Decoding, LanguageModel, LmConfig};
pub use media::{RawImage, RawMusic, RawVideo};
pub use model::{AssembledSequence, AssemblyMode, ModalInputs, Model, ModelConfig, Role};
pub use param::{ParamId, ParamStore, Parameter};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
pub use tokenizer::Tokenizer;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ParamStore64 = ParamStore<f64>;
pub type Tape32<'p> = Tape<'p, f32>;
pub type Tape64<'p> = Tape<'p, f64>;
