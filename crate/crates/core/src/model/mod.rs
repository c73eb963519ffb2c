//! A small decoder-only transformer (pre-norm blocks, learned positional
//! embeddings, 4x GELU feed-forward) whose forward pass tapes every
//! post-softmax attention matrix and whose hand-written backward pass
//! returns the loss gradient at each taped matrix.

mod backward;
mod checkpoint;
pub mod config;
mod forward;
mod session;
mod tape;
pub mod train;
mod weights;

pub use config::{ModelConfig, Precision, TokenLayout};
pub use forward::{AttnPerturb, ColScale, ForwardMods, ForwardPass, RowGain};
pub use session::DecodeSession;
pub use tape::AttentionTape;

use crate::error::{Error, Result};
use crate::math::log_sum_exp;

use backward::BackwardOpts;
use forward::CacheStorage;
use weights::Weights;

#[derive(Debug)]
pub(crate) enum State {
    F32(Weights<f32>),
    F64(Weights<f64>),
}

/// Immutable-after-load model; any number of sessions may read it
/// concurrently.
#[derive(Debug)]
pub struct Model {
    cfg: ModelConfig,
    pub(crate) state: State,
}

impl Model {
    /// Seeded random initialization at the configured precision.
    pub fn init(cfg: ModelConfig) -> Result<Model> {
        cfg.validate()?;
        let state = match cfg.precision {
            Precision::F32 => State::F32(Weights::init(&cfg)),
            Precision::F64 => State::F64(Weights::init(&cfg)),
        };
        Ok(Model { cfg, state })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn param_count(&self) -> usize {
        match &self.state {
            State::F32(w) => w.param_count(),
            State::F64(w) => w.param_count(),
        }
    }

    pub fn forward(&self, tokens: &[usize]) -> Result<ForwardPass> {
        self.forward_with(tokens, &ForwardMods::none())
    }

    pub fn forward_with(&self, tokens: &[usize], mods: &ForwardMods) -> Result<ForwardPass> {
        match &self.state {
            State::F32(w) => {
                let (cache, logits, tape) = forward::run_forward(&self.cfg, w, tokens, mods)?;
                Ok(ForwardPass::assemble(
                    CacheStorage::F32(cache),
                    mods.clone(),
                    logits,
                    tape,
                ))
            }
            State::F64(w) => {
                let (cache, logits, tape) = forward::run_forward(&self.cfg, w, tokens, mods)?;
                Ok(ForwardPass::assemble(
                    CacheStorage::F64(cache),
                    mods.clone(),
                    logits,
                    tape,
                ))
            }
        }
    }

    /// Fill `pass`'s attention gradients for the loss
    /// `-log softmax(logits[pos])[target]`.
    pub fn backward_attention(
        &self,
        pass: &mut ForwardPass,
        pos: usize,
        target: usize,
    ) -> Result<()> {
        self.backward_seeded(pass, &[(pos, target, 1.0)], 0)
    }

    /// Same, for a sum of per-position cross-entropy terms. One backward
    /// pass covers the whole sequence.
    pub fn backward_attention_sum(
        &self,
        pass: &mut ForwardPass,
        targets: &[(usize, usize)],
    ) -> Result<()> {
        let seeds: Vec<(usize, usize, f64)> =
            targets.iter().map(|&(p, t)| (p, t, 1.0)).collect();
        self.backward_seeded(pass, &seeds, 0)
    }

    /// Scoring fast path: attention gradients only for layers
    /// `>= min_layer`. Identical values on those layers to the full
    /// backward (tested).
    pub(crate) fn backward_seeded(
        &self,
        pass: &mut ForwardPass,
        seeds: &[(usize, usize, f64)],
        min_layer: usize,
    ) -> Result<()> {
        let (cache, mods, tape) = pass.parts_mut();
        match (&self.state, cache) {
            (State::F32(w), CacheStorage::F32(c)) => backward::run_backward(
                &self.cfg,
                w,
                c,
                mods,
                seeds,
                tape,
                BackwardOpts {
                    min_layer,
                    param_grads: None,
                },
            ),
            (State::F64(w), CacheStorage::F64(c)) => backward::run_backward(
                &self.cfg,
                w,
                c,
                mods,
                seeds,
                tape,
                BackwardOpts {
                    min_layer,
                    param_grads: None,
                },
            ),
            _ => unreachable!("forward pass precision does not match model"),
        }
    }

    /// Cached incremental decoding session. `col_scale`, when set, is a
    /// static attention modification compatible with caching.
    pub fn decode_session(&self, col_scale: Option<ColScale>) -> DecodeSession<'_> {
        DecodeSession::new(self, col_scale)
    }
}

/// Cross-entropy of a next-token distribution against a one-hot target:
/// `-log softmax(logits)[target]`.
pub fn loss_ce(logits: &[f64], target: usize) -> Result<f64> {
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { context: "logits" });
    }
    if target >= logits.len() {
        return Err(Error::UnknownToken {
            id: target,
            vocab: logits.len(),
        });
    }
    Ok(log_sum_exp(logits) - logits[target])
}

impl ForwardPass {
    /// Convenience: loss of predicting `target` after position `pos`.
    pub fn loss(&self, pos: usize, target: usize) -> Result<f64> {
        if pos >= self.n() {
            return Err(Error::PositionOutOfRange {
                pos,
                len: self.n(),
            });
        }
        loss_ce(self.logits(pos), target)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 16,
            vocab_size: 11,
            max_seq_len: 16,
            rng_seed: 42,
            precision: Precision::F64,
        }
    }

    fn zero_output_head(model: &mut Model) {
        match &mut model.state {
            State::F64(w) => {
                w.w_head.data.iter_mut().for_each(|x| *x = 0.0);
                w.b_head.iter_mut().for_each(|x| *x = 0.0);
            }
            State::F32(w) => {
                w.w_head.data.iter_mut().for_each(|x| *x = 0.0);
                w.b_head.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    #[test]
    fn zero_head_gives_uniform_logits() {
        let mut model = Model::init(tiny_cfg()).unwrap();
        zero_output_head(&mut model);
        let pass = model.forward(&[3]).unwrap();
        let logits = pass.logits(0);
        for &l in logits {
            assert_eq!(l, logits[0]);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let model = Model::init(tiny_cfg()).unwrap();
        let toks = [1, 4, 2, 7, 0];
        let a = model.forward(&toks).unwrap();
        let b = model.forward(&toks).unwrap();
        for p in 0..toks.len() {
            assert_eq!(a.logits(p), b.logits(p));
        }
        for l in 0..2 {
            for h in 0..2 {
                assert_eq!(
                    a.tape().attention(l, h).data,
                    b.tape().attention(l, h).data
                );
            }
        }
    }

    #[test]
    fn tape_has_expected_shape() {
        let model = Model::init(tiny_cfg()).unwrap();
        let toks = [1, 4, 2, 7, 0, 9];
        let pass = model.forward(&toks).unwrap();
        let tape = pass.tape();
        assert_eq!(tape.n_layers(), 2);
        assert_eq!(tape.n_heads(), 2);
        for l in 0..2 {
            for h in 0..2 {
                let a = tape.attention(l, h);
                assert_eq!((a.rows, a.cols), (6, 6));
            }
        }
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let model = Model::init(tiny_cfg()).unwrap();
        assert!(matches!(
            model.forward(&vec![0; 17]),
            Err(Error::SequenceTooLong { .. })
        ));
        assert!(matches!(
            model.forward(&[0, 11]),
            Err(Error::UnknownToken { .. })
        ));
    }

    #[test]
    fn loss_ce_uniform() {
        let l = loss_ce(&[0.0, 0.0, 0.0], 1).unwrap();
        assert!((l - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_ce_saturated() {
        let l = loss_ce(&[10.0, -10.0], 0).unwrap();
        assert!(l > 0.0 && l < 2.1e-9, "loss = {l}");
    }

    #[test]
    fn loss_ce_direct_value() {
        // -log(e^3 / (e^1 + e^2 + e^3)), fixed with an independent
        // high-precision evaluation.
        let l = loss_ce(&[1.0, 2.0, 3.0], 2).unwrap();
        assert!((l - 0.407_605_964_444_380_4).abs() < 1e-12, "loss = {l}");
    }

    #[test]
    fn loss_ce_rejects_non_finite() {
        assert!(matches!(
            loss_ce(&[f64::NAN, 0.0], 0),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn grads_absent_until_backward() {
        let model = Model::init(tiny_cfg()).unwrap();
        let pass = model.forward(&[1, 2, 3]).unwrap();
        assert!(matches!(pass.tape().grad(0, 0), Err(Error::GradientsMissing)));
    }

    #[test]
    fn saturated_target_has_near_zero_grads() {
        let mut model = Model::init(tiny_cfg()).unwrap();
        // Rig the head so token 3 is predicted with probability ~1 everywhere.
        match &mut model.state {
            State::F64(w) => w.b_head[3] = 200.0,
            State::F32(w) => w.b_head[3] = 200.0,
        }
        let mut pass = model.forward(&[1, 2, 4, 5]).unwrap();
        model.backward_attention(&mut pass, 3, 3).unwrap();
        for l in 0..2 {
            for h in 0..2 {
                for &g in &pass.tape().grad(l, h).unwrap().data {
                    assert!(g.abs() < 1e-12, "grad {g}");
                }
            }
        }
    }

    #[test]
    fn different_targets_give_different_grads() {
        let model = Model::init(tiny_cfg()).unwrap();
        let toks = [1, 2, 4, 5, 6];
        let mut a = model.forward(&toks).unwrap();
        let mut b = model.forward(&toks).unwrap();
        model.backward_attention(&mut a, 4, 2).unwrap();
        model.backward_attention(&mut b, 4, 7).unwrap();
        let ga = &a.tape().grad(1, 0).unwrap().data;
        let gb = &b.tape().grad(1, 0).unwrap().data;
        assert_ne!(ga, gb);
    }

    #[test]
    fn upper_triangle_grads_are_zero() {
        let model = Model::init(tiny_cfg()).unwrap();
        let mut pass = model.forward(&[1, 2, 4, 5, 6]).unwrap();
        model.backward_attention(&mut pass, 4, 2).unwrap();
        for l in 0..2 {
            for h in 0..2 {
                let g = pass.tape().grad(l, h).unwrap();
                for i in 0..5 {
                    for j in i + 1..5 {
                        assert_eq!(g.get(i, j), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn partial_backward_matches_full_on_kept_layers() {
        let model = Model::init(tiny_cfg()).unwrap();
        let toks = [1, 2, 4, 5, 6, 7, 8];
        let mut full = model.forward(&toks).unwrap();
        let mut part = model.forward(&toks).unwrap();
        model.backward_attention(&mut full, 6, 2).unwrap();
        model
            .backward_seeded(&mut part, &[(6, 2, 1.0)], 1)
            .unwrap();
        for h in 0..2 {
            assert_eq!(
                full.tape().grad(1, h).unwrap().data,
                part.tape().grad(1, h).unwrap().data
            );
        }
        assert!(part.tape().grad(0, 0).is_err());
    }
}
