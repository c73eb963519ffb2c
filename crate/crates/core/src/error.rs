//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sequence length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("token id {id} outside vocabulary of size {vocab}")]
    UnknownToken { id: usize, vocab: usize },

    #[error("position {pos} outside sequence of length {len}")]
    PositionOutOfRange { pos: usize, len: usize },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },

    #[error("attention gradients requested before a backward pass ran")]
    GradientsMissing,

    #[error("matrix shape mismatch: {left} vs {right}")]
    MatShape { left: String, right: String },

    #[error("gain vector length {gains} does not cover row positions {expected}")]
    GainLength { gains: usize, expected: usize },

    #[error("a coherence hook is already installed on this model")]
    HookInstalled,

    #[error("checkpoint has bad magic bytes")]
    BadMagic,

    #[error("checkpoint format version {found} unsupported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint file truncated: needed {needed} bytes, got {got}")]
    Truncated { needed: usize, got: usize },

    #[error("checkpoint shape mismatch: {0}")]
    CheckpointShape(String),

    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("insufficient data for class `{class}`: {got} tokens, need {needed}")]
    InsufficientData {
        class: &'static str,
        got: usize,
        needed: usize,
    },

    #[error("no tokens eligible for intervention")]
    NoEligibleTokens,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
