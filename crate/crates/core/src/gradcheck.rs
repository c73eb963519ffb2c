//! Central finite-difference check of the attention gradients.
//!
//! The oracle side never touches the backward pass: it perturbs one taped
//! attention entry through the forward's additive probe, re-runs the
//! forward, and differences the loss. Entries whose analytic gradient is
//! below `grad_floor` are instead checked to have a near-zero numeric
//! derivative (catches false zeros).

use crate::error::Result;
use crate::model::{AttnPerturb, ForwardMods, Model};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max relative error over entries with |analytic| > grad_floor.
    pub max_rel_err: f64,
    /// Entry where the max occurred: (layer, head, row, col).
    pub worst: (usize, usize, usize, usize),
    pub entries_checked: usize,
    /// Max |finite difference| over entries with |analytic| <= grad_floor.
    pub max_fd_at_zero_grad: f64,
}

pub fn finite_difference_check(
    model: &Model,
    tokens: &[usize],
    pos: usize,
    target: usize,
    eps: f64,
    grad_floor: f64,
) -> Result<GradCheckReport> {
    let mut pass = model.forward(tokens)?;
    model.backward_attention(&mut pass, pos, target)?;

    let n = pass.n();
    let cfg = model.config();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0, 0, 0),
        entries_checked: 0,
        max_fd_at_zero_grad: 0.0,
    };

    for l in 0..cfg.n_layers {
        for h in 0..cfg.n_heads {
            let analytic = pass.tape().grad(l, h)?.clone();
            for i in 0..n {
                for j in 0..=i {
                    let fd = central_difference(model, tokens, pos, target, l, h, i, j, eps)?;
                    let a = analytic.get(i, j);
                    if a.abs() > grad_floor {
                        let rel = (fd - a).abs() / a.abs();
                        report.entries_checked += 1;
                        if rel > report.max_rel_err {
                            report.max_rel_err = rel;
                            report.worst = (l, h, i, j);
                        }
                    } else if fd.abs() > report.max_fd_at_zero_grad {
                        report.max_fd_at_zero_grad = fd.abs();
                    }
                }
            }
        }
    }
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn central_difference(
    model: &Model,
    tokens: &[usize],
    pos: usize,
    target: usize,
    layer: usize,
    head: usize,
    row: usize,
    col: usize,
    eps: f64,
) -> Result<f64> {
    let mut loss = [0.0f64; 2];
    for (k, delta) in [eps, -eps].into_iter().enumerate() {
        let mods = ForwardMods {
            perturb: Some(AttnPerturb {
                layer,
                head,
                row,
                col,
                delta,
            }),
            ..Default::default()
        };
        let pass = model.forward_with(tokens, &mods)?;
        loss[k] = pass.loss(pos, target)?;
    }
    Ok((loss[0] - loss[1]) / (2.0 * eps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Precision};

    #[test]
    fn tiny_model_gradients_match_finite_differences() {
        let cfg = ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 16,
            vocab_size: 13,
            max_seq_len: 8,
            rng_seed: 5,
            precision: Precision::F64,
        };
        let model = Model::init(cfg).unwrap();
        let tokens = [1, 5, 3, 7, 2, 9];
        let report =
            finite_difference_check(&model, &tokens, 5, 4, 1e-4, 1e-8).unwrap();
        assert!(report.entries_checked > 0);
        assert!(
            report.max_rel_err <= 1e-4,
            "max rel err {} at {:?}",
            report.max_rel_err,
            report.worst
        );
        assert!(report.max_fd_at_zero_grad < 1e-6);
    }

    #[test]
    fn f32_model_gradients_match_loosely() {
        let cfg = ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 16,
            vocab_size: 13,
            max_seq_len: 8,
            rng_seed: 5,
            precision: Precision::F32,
        };
        let model = Model::init(cfg).unwrap();
        let tokens = [1, 5, 3, 7, 2, 9];
        // f32 forward noise swamps a 1e-4 step; use a larger one and the
        // documented looser tolerance.
        let report =
            finite_difference_check(&model, &tokens, 5, 4, 1e-2, 1e-4).unwrap();
        assert!(
            report.max_rel_err <= 1e-2,
            "max rel err {} at {:?}",
            report.max_rel_err,
            report.worst
        );
    }
}
