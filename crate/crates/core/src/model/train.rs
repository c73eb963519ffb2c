//! Adam training loop for the toy model.
//!
//! Teacher-forced cross-entropy over each example's output region.
//! Deterministic given the model's rng_seed: shuffling uses a per-epoch
//! derived seed and all accumulation orders are fixed. Adam moments are
//! kept in f64 regardless of model precision.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::Scalar;

use super::backward::{run_backward, BackwardOpts};
use super::forward::{run_forward, ForwardMods};
use super::weights::Weights;
use super::{loss_ce, Model, State};

/// One training sequence. Loss terms predict `tokens[p]` for
/// `p in loss_from..len`.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub tokens: Vec<usize>,
    pub loss_from: usize,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub grad_clip: Option<f64>,
    pub log_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 8,
            learning_rate: 1e-3,
            batch_size: 16,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: Some(1.0),
            log_every: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainStats {
    /// Mean per-token loss over the corpus before any update.
    pub initial_loss: f64,
    /// Mean per-token loss over the corpus after the last epoch.
    pub final_loss: f64,
    /// Running mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Train in place. `epochs == 0` leaves the model untouched.
pub fn train_toy(
    model: &mut Model,
    examples: &[TrainExample],
    cfg: &TrainConfig,
) -> Result<TrainStats> {
    assert!(!examples.is_empty(), "training corpus must be non-empty");
    let model_cfg = model.config().clone();
    match &mut model.state {
        State::F32(w) => train_impl(&model_cfg, w, examples, cfg),
        State::F64(w) => train_impl(&model_cfg, w, examples, cfg),
    }
}

fn corpus_loss<T: Scalar>(
    cfg: &super::config::ModelConfig,
    weights: &Weights<T>,
    examples: &[TrainExample],
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for ex in examples {
        let (_, logits, _) = run_forward(cfg, weights, &ex.tokens, &ForwardMods::none())?;
        for p in ex.loss_from..ex.tokens.len() {
            total += loss_ce(logits.row(p - 1), ex.tokens[p])?;
            count += 1;
        }
    }
    Ok(total / count.max(1) as f64)
}

fn train_impl<T: Scalar>(
    model_cfg: &super::config::ModelConfig,
    weights: &mut Weights<T>,
    examples: &[TrainExample],
    cfg: &TrainConfig,
) -> Result<TrainStats> {
    let initial_loss = corpus_loss(model_cfg, weights, examples)?;
    if cfg.epochs == 0 {
        return Ok(TrainStats {
            initial_loss,
            final_loss: initial_loss,
            epoch_losses: Vec::new(),
        });
    }

    let n_params = weights.param_count();
    let mut m = vec![0.0f64; n_params];
    let mut v = vec![0.0f64; n_params];
    let mut step = 0usize;
    let mut grads = weights.zeros_like();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(model_cfg.rng_seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut epoch_tokens = 0usize;

        for batch in order.chunks(cfg.batch_size) {
            for t in grads.tensors_mut() {
                t.iter_mut().for_each(|x| *x = T::zero());
            }
            let batch_tokens: usize = batch
                .iter()
                .map(|&i| examples[i].tokens.len() - examples[i].loss_from)
                .sum();
            let w_tok = 1.0 / batch_tokens.max(1) as f64;

            let mut batch_loss = 0.0;
            for &i in batch {
                let ex = &examples[i];
                let (cache, logits, mut tape) =
                    run_forward(model_cfg, weights, &ex.tokens, &ForwardMods::none())?;
                let seeds: Vec<(usize, usize, f64)> = (ex.loss_from..ex.tokens.len())
                    .map(|p| (p - 1, ex.tokens[p], w_tok))
                    .collect();
                for p in ex.loss_from..ex.tokens.len() {
                    batch_loss += loss_ce(logits.row(p - 1), ex.tokens[p])? * w_tok;
                }
                run_backward(
                    model_cfg,
                    weights,
                    &cache,
                    &ForwardMods::none(),
                    &seeds,
                    &mut tape,
                    BackwardOpts {
                        min_layer: 0,
                        param_grads: Some(&mut grads),
                    },
                )?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            epoch_loss += batch_loss * batch_tokens as f64;
            epoch_tokens += batch_tokens;

            // Global-norm clip.
            let scale = match cfg.grad_clip {
                Some(clip) => {
                    let mut norm_sq = 0.0f64;
                    for t in grads.tensors() {
                        for &g in t {
                            let g = g.into_f64();
                            norm_sq += g * g;
                        }
                    }
                    let norm = norm_sq.sqrt();
                    if norm > clip {
                        clip / norm
                    } else {
                        1.0
                    }
                }
                None => 1.0,
            };

            step += 1;
            let bc1 = 1.0 - cfg.beta1.powi(step as i32);
            let bc2 = 1.0 - cfg.beta2.powi(step as i32);
            let mut cursor = 0usize;
            let grad_tensors = grads.tensors();
            for (t_idx, w_t) in weights.tensors_mut().into_iter().enumerate() {
                let g_t = grad_tensors[t_idx];
                for (w_i, g_i) in w_t.iter_mut().zip(g_t.iter()) {
                    let g = g_i.into_f64() * scale;
                    m[cursor] = cfg.beta1 * m[cursor] + (1.0 - cfg.beta1) * g;
                    v[cursor] = cfg.beta2 * v[cursor] + (1.0 - cfg.beta2) * g * g;
                    let m_hat = m[cursor] / bc1;
                    let v_hat = v[cursor] / bc2;
                    let upd = cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
                    *w_i = T::from_f64(w_i.into_f64() - upd);
                    cursor += 1;
                }
            }
        }

        let mean = epoch_loss / epoch_tokens.max(1) as f64;
        epoch_losses.push(mean);
        if let Some(every) = cfg.log_every {
            if every > 0 && (epoch + 1) % every == 0 {
                eprintln!("epoch {:3} | loss {:.4}", epoch + 1, mean);
            }
        }
    }

    let final_loss = corpus_loss(model_cfg, weights, examples)?;
    Ok(TrainStats {
        initial_loss,
        final_loss,
        epoch_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Precision};

    fn cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 16,
            vocab_size: 12,
            max_seq_len: 12,
            rng_seed: 11,
            precision: Precision::F64,
        }
    }

    fn toy_examples() -> Vec<TrainExample> {
        // Simple repetition task: [a, b, a, b] predicting from position 2.
        let mut out = Vec::new();
        for a in 1..6usize {
            for b in 1..6usize {
                out.push(TrainExample {
                    tokens: vec![a, b, a, b],
                    loss_from: 2,
                });
            }
        }
        out
    }

    #[test]
    fn zero_epochs_leaves_model_unchanged() {
        let mut model = Model::init(cfg()).unwrap();
        let before = model.forward(&[1, 2, 3]).unwrap().logits(2).to_vec();
        let stats =
            train_toy(&mut model, &toy_examples(), &TrainConfig { epochs: 0, ..Default::default() })
                .unwrap();
        let after = model.forward(&[1, 2, 3]).unwrap().logits(2).to_vec();
        assert_eq!(before, after);
        assert_eq!(stats.initial_loss, stats.final_loss);
    }

    #[test]
    fn training_is_deterministic() {
        let t = TrainConfig {
            epochs: 2,
            ..Default::default()
        };
        let mut a = Model::init(cfg()).unwrap();
        let mut b = Model::init(cfg()).unwrap();
        train_toy(&mut a, &toy_examples(), &t).unwrap();
        train_toy(&mut b, &toy_examples(), &t).unwrap();
        let pa = a.forward(&[1, 2, 3]).unwrap().logits(2).to_vec();
        let pb = b.forward(&[1, 2, 3]).unwrap().logits(2).to_vec();
        assert_eq!(pa, pb);
    }

    #[test]
    fn loss_decreases() {
        let mut model = Model::init(cfg()).unwrap();
        let stats = train_toy(
            &mut model,
            &toy_examples(),
            &TrainConfig {
                epochs: 20,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(
            stats.final_loss < stats.initial_loss,
            "{} !< {}",
            stats.final_loss,
            stats.initial_loss
        );
    }
}
