//! Incremental decoding with per-layer key/value caching.
//!
//! Bit-equivalent to re-running the full forward at every step: it reuses
//! the same `dot` / softmax / layer-norm arithmetic in the same order.
//! Final-row gains do not persist into the cache — the cache always holds
//! the plain (ungained) stream, and a gained read-out track is computed on
//! top of it for the step's logits, matching a full forward whose hook
//! touches only the final query row. A static column scale, by contrast,
//! applies to every row as it is appended and therefore caches naturally.

use crate::error::{Error, Result};
use crate::math::{dot, linear_into, softmax_inplace, Scalar};

use super::config::ModelConfig;
use super::forward::{ColScale, RowGain, LN_EPS};
use super::weights::{LayerWeights, Weights};
use super::{Model, State};

struct LayerKv<T> {
    k: Vec<T>,
    v: Vec<T>,
}

struct SessionCore<T> {
    kv: Vec<LayerKv<T>>,
    len: usize,
}

enum CoreState {
    F32(SessionCore<f32>),
    F64(SessionCore<f64>),
}

pub struct DecodeSession<'m> {
    model: &'m Model,
    core: CoreState,
    col_scale: Option<ColScale>,
}

impl<'m> DecodeSession<'m> {
    pub(crate) fn new(model: &'m Model, col_scale: Option<ColScale>) -> Self {
        let nl = model.config().n_layers;
        let core = match &model.state {
            State::F32(_) => CoreState::F32(SessionCore {
                kv: (0..nl)
                    .map(|_| LayerKv {
                        k: Vec::new(),
                        v: Vec::new(),
                    })
                    .collect(),
                len: 0,
            }),
            State::F64(_) => CoreState::F64(SessionCore {
                kv: (0..nl)
                    .map(|_| LayerKv {
                        k: Vec::new(),
                        v: Vec::new(),
                    })
                    .collect(),
                len: 0,
            }),
        };
        DecodeSession {
            model,
            core,
            col_scale,
        }
    }

    pub fn len(&self) -> usize {
        match &self.core {
            CoreState::F32(c) => c.len,
            CoreState::F64(c) => c.len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Append `token` and return the next-token logits at its position.
    /// `gains`, when present, modify only this step's read-out.
    pub fn push(&mut self, token: usize, gains: Option<&RowGain>) -> Result<Vec<f64>> {
        let cfg = self.model.config().clone();
        if token >= cfg.vocab_size {
            return Err(Error::UnknownToken {
                id: token,
                vocab: cfg.vocab_size,
            });
        }
        if self.len() + 1 > cfg.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: self.len() + 1,
                max: cfg.max_seq_len,
            });
        }
        if let Some(rg) = gains {
            let p = self.len();
            let expected = p.saturating_sub(rg.start);
            if rg.gains.len() != expected {
                return Err(Error::GainLength {
                    gains: rg.gains.len(),
                    expected,
                });
            }
        }
        match (&self.model.state, &mut self.core) {
            (State::F32(w), CoreState::F32(core)) => {
                push_impl(&cfg, w, core, token, gains, self.col_scale)
            }
            (State::F64(w), CoreState::F64(core)) => {
                push_impl(&cfg, w, core, token, gains, self.col_scale)
            }
            _ => unreachable!("session precision matches its model"),
        }
    }
}

/// Single-row layer norm; mirrors the matrix version op for op.
fn ln_row<T: Scalar>(x: &[T], gain: &[T], bias: &[T], out: &mut [T]) {
    let d = x.len();
    let dn = T::from_f64(d as f64);
    let eps = T::from_f64(LN_EPS);
    let mut mean = T::zero();
    for &v in x {
        mean = mean + v;
    }
    mean = mean / dn;
    let mut var = T::zero();
    for &v in x {
        let c = v - mean;
        var = var + c * c;
    }
    var = var / dn;
    let is = T::one() / (var + eps).sqrt();
    for j in 0..d {
        out[j] = gain[j] * ((x[j] - mean) * is) + bias[j];
    }
}

#[inline]
fn gelu_row<T: Scalar>(x: &mut [T]) {
    for v in x.iter_mut() {
        let (g, _) = super::forward::gelu_value(*v);
        *v = g;
    }
}

/// One position through one layer given cached history K/V.
/// `hist` rows are positions `0..p`; `own_in` is this position's residual
/// stream entering the layer. Returns the stream leaving the layer plus
/// this position's k/v rows (for the caller to cache if this is the plain
/// track).
#[allow(clippy::too_many_arguments)]
fn layer_step<T: Scalar>(
    cfg: &ModelConfig,
    lw: &LayerWeights<T>,
    hist_k: &[T],
    hist_v: &[T],
    p: usize,
    own_in: &[T],
    gains: Option<&RowGain>,
    col_scale: Option<ColScale>,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let d = cfg.d_model;
    let nh = cfg.n_heads;
    let dh = cfg.head_dim();
    let inv_sqrt_dh = T::from_f64(1.0 / (dh as f64).sqrt());

    let mut y1 = vec![T::zero(); d];
    ln_row(own_in, &lw.ln1_g, &lw.ln1_b, &mut y1);
    let mut q = vec![T::zero(); d];
    let mut k_own = vec![T::zero(); d];
    let mut v_own = vec![T::zero(); d];
    linear_into(&lw.wq, &lw.bq, &y1, &mut q);
    linear_into(&lw.wk, &lw.bk, &y1, &mut k_own);
    linear_into(&lw.wv, &lw.bv, &y1, &mut v_own);

    let mut ctx = vec![T::zero(); d];
    let mut probs = vec![T::zero(); p + 1];
    for h in 0..nh {
        let hs = h * dh;
        let qh = &q[hs..hs + dh];
        for j in 0..p {
            probs[j] = dot(qh, &hist_k[j * d + hs..j * d + hs + dh]) * inv_sqrt_dh;
        }
        probs[p] = dot(qh, &k_own[hs..hs + dh]) * inv_sqrt_dh;
        softmax_inplace(&mut probs);
        if let Some(cs) = col_scale {
            if p > cs.col {
                probs[cs.col] = probs[cs.col] * T::from_f64(cs.factor);
            }
        }
        if let Some(rg) = gains {
            for (off, &g) in rg.gains.iter().enumerate() {
                let j = rg.start + off;
                probs[j] = probs[j] * T::from_f64(g);
            }
            if rg.renormalize {
                let mut s = T::zero();
                for &x in probs.iter() {
                    s = s + x;
                }
                for x in probs.iter_mut() {
                    *x = *x / s;
                }
            }
        }
        let ch = &mut ctx[hs..hs + dh];
        for j in 0..=p {
            let w_ij = probs[j];
            let vj = if j < p {
                &hist_v[j * d + hs..j * d + hs + dh]
            } else {
                &v_own[hs..hs + dh]
            };
            for (c, &vv) in ch.iter_mut().zip(vj) {
                *c = *c + w_ij * vv;
            }
        }
    }

    let mut attn_out = vec![T::zero(); d];
    linear_into(&lw.wo, &lw.bo, &ctx, &mut attn_out);
    let mut x2 = vec![T::zero(); d];
    for j in 0..d {
        x2[j] = own_in[j] + attn_out[j];
    }

    let mut y2 = vec![T::zero(); d];
    ln_row(&x2, &lw.ln2_g, &lw.ln2_b, &mut y2);
    let m = cfg.ff_dim();
    let mut h1 = vec![T::zero(); m];
    linear_into(&lw.w1, &lw.b1, &y2, &mut h1);
    gelu_row(&mut h1);
    let mut f = vec![T::zero(); d];
    linear_into(&lw.w2, &lw.b2, &h1, &mut f);
    let mut out = vec![T::zero(); d];
    for j in 0..d {
        out[j] = x2[j] + f[j];
    }
    (out, k_own, v_own)
}

fn push_impl<T: Scalar>(
    cfg: &ModelConfig,
    weights: &Weights<T>,
    core: &mut SessionCore<T>,
    token: usize,
    gains: Option<&RowGain>,
    col_scale: Option<ColScale>,
) -> Result<Vec<f64>> {
    let d = cfg.d_model;
    let p = core.len;

    let mut x_plain = vec![T::zero(); d];
    let te = weights.tok_emb.row(token);
    let pe = weights.pos_emb.row(p);
    for j in 0..d {
        x_plain[j] = te[j] + pe[j];
    }

    let gains_active = gains.map_or(false, |g| !g.gains.is_empty() || g.renormalize);
    let mut x_gained = if gains_active {
        Some(x_plain.clone())
    } else {
        None
    };

    for (l, lw) in weights.layers.iter().enumerate() {
        let (out, k_own, v_own) = layer_step(
            cfg,
            lw,
            &core.kv[l].k,
            &core.kv[l].v,
            p,
            &x_plain,
            None,
            col_scale,
        );
        if let Some(xg) = x_gained.as_mut() {
            let (gout, _, _) = layer_step(cfg, lw, &core.kv[l].k, &core.kv[l].v, p, xg, gains, col_scale);
            *xg = gout;
        }
        core.kv[l].k.extend_from_slice(&k_own);
        core.kv[l].v.extend_from_slice(&v_own);
        x_plain = out;
    }
    core.len += 1;

    let x_final = x_gained.unwrap_or(x_plain);
    let mut z = vec![T::zero(); d];
    ln_row(&x_final, &weights.lnf_g, &weights.lnf_b, &mut z);
    let mut logits = vec![T::zero(); cfg.vocab_size];
    linear_into(&weights.w_head, &weights.b_head, &z, &mut logits);
    Ok(logits.iter().map(|x| x.into_f64()).collect())
}
