//! nanosal: a desk-scale lab for gradient-aware attention diagnostics on a
//! tiny decoder-only transformer.
//!
//! The pieces, bottom to top:
//!
//! - [`model`] — the transformer itself, with full attention taping, a
//!   hand-written backward pass that reads gradients at every post-softmax
//!   attention matrix, checkpointing, cached decoding, and a small trainer.
//! - [`saliency`] — per-head and per-layer saliency maps built from
//!   attention x attention-gradient, and the scalar candidate score over
//!   output-history positions.
//! - [`locore`] — distance-gated attention gains that reinforce the
//!   current query's links to its most recent outputs.
//! - [`sgrs`] — saliency-guided rejection sampling: candidate scoring,
//!   adaptive thresholds over a saliency history window, the rejection
//!   loop, and the full decode driver with latency accounting.
//! - [`harness`] — a synthetic grounded-generation task with mechanical
//!   hallucination labels, plus the statistical analyses and sweeps built
//!   on top of it.
//! - [`gradcheck`] — the finite-difference oracle for the backward pass.

pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod locore;
pub mod math;
pub mod model;
pub mod saliency;
pub mod sgrs;

pub use error::{Error, Result};
