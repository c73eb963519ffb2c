//! Model hyper-parameters and the token layout of a sequence.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Compute precision of the model core.
///
/// Checkpoints always store 64-bit weights; a 32-bit model rounds them on
/// load and runs its whole forward/backward in `f32`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn bits(self) -> u32 {
        match self {
            Precision::F32 => 32,
            Precision::F64 => 64,
        }
    }

    pub fn from_bits(bits: u32) -> Option<Self> {
        match bits {
            32 => Some(Precision::F32),
            64 => Some(Precision::F64),
            _ => None,
        }
    }
}

impl Serialize for Precision {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u32(self.bits())
    }
}

impl<'de> Deserialize<'de> for Precision {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let bits = u32::deserialize(d)?;
        Precision::from_bits(bits)
            .ok_or_else(|| serde::de::Error::custom(format!("precision must be 32 or 64, got {bits}")))
    }
}

/// Architecture and initialization parameters of the decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub rng_seed: u64,
    pub precision: Precision,
}

impl ModelConfig {
    /// Small default sized so finite-difference checks stay cheap while
    /// leaving room for a meaningful target-layer choice.
    pub fn toy() -> Self {
        ModelConfig {
            n_layers: 4,
            n_heads: 4,
            d_model: 64,
            vocab_size: 96,
            max_seq_len: 64,
            rng_seed: 0x5eed,
            precision: Precision::F64,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Feed-forward inner width (fixed 4x expansion).
    pub fn ff_dim(&self) -> usize {
        4 * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0
            || self.n_heads == 0
            || self.d_model == 0
            || self.vocab_size == 0
            || self.max_seq_len == 0
        {
            return Err(Error::CheckpointShape(
                "all model dimensions must be positive".into(),
            ));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::CheckpointShape(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

/// Partition of a sequence into system, image, prompt, and output regions.
///
/// Output positions start at `output_start`, which defaults to
/// `sys_len + img_len` (so prompt positions count as "output history").
/// `with_output_start` moves the boundary, e.g. to `prompt_end()` to treat
/// only generated tokens as history. Both conventions are exercised in
/// tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLayout {
    pub sys_len: usize,
    pub img_len: usize,
    pub prompt_len: usize,
    pub output_start: usize,
}

impl TokenLayout {
    pub fn new(sys_len: usize, img_len: usize, prompt_len: usize) -> Self {
        TokenLayout {
            sys_len,
            img_len,
            prompt_len,
            output_start: sys_len + img_len,
        }
    }

    pub fn with_output_start(mut self, output_start: usize) -> Self {
        self.output_start = output_start;
        self
    }

    /// First position after the prompt — where generation begins.
    pub fn prompt_end(&self) -> usize {
        self.sys_len + self.img_len + self.prompt_len
    }

    /// The output-history positions `J` visible from position `p`:
    /// `{ j | output_start <= j < p }`. Empty iff `p <= output_start`.
    pub fn output_positions(&self, p: usize) -> std::ops::Range<usize> {
        self.output_start..p.max(self.output_start)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_output_positions_empty_before_start() {
        let layout = TokenLayout::new(2, 8, 2);
        assert_eq!(layout.output_start, 10);
        assert!(layout.output_positions(10).is_empty());
        assert!(layout.output_positions(3).is_empty());
        assert_eq!(layout.output_positions(13), 10..13);
    }

    #[test]
    fn layout_override_moves_boundary() {
        let layout = TokenLayout::new(2, 8, 2).with_output_start(12);
        assert_eq!(layout.output_positions(15), 12..15);
        assert_eq!(layout.prompt_end(), 12);
    }

    #[test]
    fn config_validation() {
        let mut cfg = ModelConfig::toy();
        assert!(cfg.validate().is_ok());
        cfg.d_model = 65;
        assert!(cfg.validate().is_err());
    }
}
