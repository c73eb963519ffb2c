//! Binary checkpoint format.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic       5 bytes  "NMDL1"
//! version     u32      currently 1
//! n_layers    u32
//! n_heads     u32
//! d_model     u32
//! vocab_size  u32
//! max_seq_len u32
//! precision   u32      32 or 64
//! rng_seed    u64
//! n_params    u64
//! params      n_params x f64, canonical tensor order (see weights.rs)
//! ```
//!
//! Weights are always stored as f64; a 32-bit model round-trips exactly
//! because every f32 is representable in f64.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::config::{ModelConfig, Precision};
use super::weights::Weights;
use super::{Model, State};

const MAGIC: &[u8; 5] = b"NMDL1";
const VERSION: u32 = 1;

fn expected_params(cfg: &ModelConfig) -> usize {
    let d = cfg.d_model;
    let m = cfg.ff_dim();
    let v = cfg.vocab_size;
    let per_layer = 4 * d * d + 2 * m * d + 9 * d + m;
    v * d + cfg.max_seq_len * d + cfg.n_layers * per_layer + 2 * d + v * d + v
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Truncated {
                needed: self.pos + n,
                got: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl Model {
    pub fn save(&self, path: &Path) -> Result<()> {
        let flat = match &self.state {
            State::F32(w) => w.flatten_f64(),
            State::F64(w) => w.flatten_f64(),
        };
        let mut out = Vec::with_capacity(48 + flat.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.cfg.n_layers as u32).to_le_bytes());
        out.extend_from_slice(&(self.cfg.n_heads as u32).to_le_bytes());
        out.extend_from_slice(&(self.cfg.d_model as u32).to_le_bytes());
        out.extend_from_slice(&(self.cfg.vocab_size as u32).to_le_bytes());
        out.extend_from_slice(&(self.cfg.max_seq_len as u32).to_le_bytes());
        out.extend_from_slice(&self.cfg.precision.bits().to_le_bytes());
        out.extend_from_slice(&self.cfg.rng_seed.to_le_bytes());
        out.extend_from_slice(&(flat.len() as u64).to_le_bytes());
        for v in &flat {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, &out)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model> {
        let buf = fs::read(path)?;
        let mut r = Reader { buf: &buf, pos: 0 };
        let magic = r.take(5)?;
        if magic != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let cfg = ModelConfig {
            n_layers: r.u32()? as usize,
            n_heads: r.u32()? as usize,
            d_model: r.u32()? as usize,
            vocab_size: r.u32()? as usize,
            max_seq_len: r.u32()? as usize,
            precision: {
                let bits = r.u32()?;
                Precision::from_bits(bits).ok_or(Error::CheckpointShape(format!(
                    "precision field must be 32 or 64, got {bits}"
                )))?
            },
            rng_seed: r.u64()?,
        };
        cfg.validate()?;
        let n_params = r.u64()? as usize;
        if n_params != expected_params(&cfg) {
            return Err(Error::CheckpointShape(format!(
                "parameter count {} does not match header config (expected {})",
                n_params,
                expected_params(&cfg)
            )));
        }
        let bytes = r.take(n_params * 8)?;
        if r.pos != buf.len() {
            return Err(Error::CheckpointShape(format!(
                "{} trailing bytes after parameter block",
                buf.len() - r.pos
            )));
        }
        let mut flat = Vec::with_capacity(n_params);
        for c in bytes.chunks_exact(8) {
            flat.push(f64::from_le_bytes(c.try_into().unwrap()));
        }
        let state = match cfg.precision {
            Precision::F32 => {
                let mut w: Weights<f32> = Weights::init(&cfg);
                if !w.load_flat_f64(&flat) {
                    return Err(Error::CheckpointShape(format!(
                        "parameter count {} does not match header config",
                        n_params
                    )));
                }
                State::F32(w)
            }
            Precision::F64 => {
                let mut w: Weights<f64> = Weights::init(&cfg);
                if !w.load_flat_f64(&flat) {
                    return Err(Error::CheckpointShape(format!(
                        "parameter count {} does not match header config",
                        n_params
                    )));
                }
                State::F64(w)
            }
        };
        Ok(Model { cfg, state })
    }

    /// Human-readable sidecar of the architecture config.
    pub fn export_config_json(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.cfg)?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, json.as_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 16,
            vocab_size: 9,
            max_seq_len: 12,
            rng_seed: 3,
            precision: Precision::F64,
        }
    }

    #[test]
    fn round_trip_preserves_logits_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.nmdl");
        let model = Model::init(cfg()).unwrap();
        model.save(&path).unwrap();
        let loaded = Model::load(&path).unwrap();
        let toks = [1, 4, 2, 7];
        let a = model.forward(&toks).unwrap();
        let b = loaded.forward(&toks).unwrap();
        for p in 0..toks.len() {
            assert_eq!(a.logits(p), b.logits(p));
        }
    }

    #[test]
    fn round_trip_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m32.nmdl");
        let model = Model::init(ModelConfig {
            precision: Precision::F32,
            ..cfg()
        })
        .unwrap();
        model.save(&path).unwrap();
        let loaded = Model::load(&path).unwrap();
        let a = model.forward(&[1, 2, 3]).unwrap();
        let b = loaded.forward(&[1, 2, 3]).unwrap();
        assert_eq!(a.logits(2), b.logits(2));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.nmdl");
        std::fs::write(&path, b"XXXXX rest of file").unwrap();
        assert!(matches!(Model::load(&path), Err(Error::BadMagic)));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v9.nmdl");
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&9u32.to_le_bytes());
        std::fs::write(&path, &buf).unwrap();
        assert!(matches!(
            Model::load(&path),
            Err(Error::VersionMismatch { found: 9, .. })
        ));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.nmdl");
        let model = Model::init(cfg()).unwrap();
        model.save(&path).unwrap();
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() / 2]).unwrap();
        assert!(matches!(Model::load(&path), Err(Error::Truncated { .. })));
    }

    #[test]
    fn shape_conflict_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.nmdl");
        let model = Model::init(cfg()).unwrap();
        model.save(&path).unwrap();
        let mut buf = std::fs::read(&path).unwrap();
        // Bump d_model in the header without touching the payload.
        let d_off = 5 + 4 + 4 + 4;
        buf[d_off..d_off + 4].copy_from_slice(&32u32.to_le_bytes());
        std::fs::write(&path, &buf).unwrap();
        let err = Model::load(&path).unwrap_err();
        assert!(
            matches!(err, Error::CheckpointShape(_)) || matches!(err, Error::Truncated { .. }),
            "got {err:?}"
        );
    }

    #[test]
    fn config_json_export() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        let model = Model::init(cfg()).unwrap();
        model.export_config_json(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let parsed: ModelConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(&parsed, model.config());
    }
}
