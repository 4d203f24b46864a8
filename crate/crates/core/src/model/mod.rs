//! Deterministic toy decoder-only transformer with early-exit heads.
//!
//! Pre-norm blocks (RMSNorm, multi-head causal attention, SiLU MLP), fixed
//! sinusoidal positions, bias-free projections. All math is f32.

mod config;
mod decode;
mod file;
mod forward;
mod kv;
mod math;
mod partition;
pub mod prng;
mod weights;

use std::ops::Range;

use thiserror::Error;

pub use config::{ModelConfig, PositionScheme, BOS, BYTE_VOCAB, DESK_VOCAB, EOS, PAD, UNK};
pub use decode::{confidence, should_exit, Confidence, ExitDecision, Logits};
pub use file::{from_bytes, generate_model, FORMAT_VERSION, MAGIC};
pub use kv::{HiddenStateBlock, KvCache};
pub use partition::{CloudPartition, EdgePartition};
pub use weights::{tensor_specs, HeadWeights, LayerWeights, Model, TensorSpec};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("positions not contiguous with cache: cache holds {cached}, block starts at {first_position}")]
    NonContiguous { cached: usize, first_position: usize },
    #[error("sequence length {needed} exceeds max_seq_len {max}")]
    SequenceOverflow { needed: usize, max: usize },
    #[error("block enters layer {got}, expected {expected}")]
    LayerMismatch { expected: usize, got: usize },
    #[error("cache covers layers {cache:?}, requested {requested:?}")]
    CacheRange { cache: Range<usize>, requested: Range<usize> },
    #[error("invalid exit index {0}")]
    InvalidExit(usize),
    #[error("token {token} outside vocabulary of {vocab_size}")]
    InvalidToken { token: u32, vocab_size: usize },
    #[error("prompt must not be empty")]
    EmptyPrompt,
    #[error("shape: {0}")]
    Shape(String),
}
