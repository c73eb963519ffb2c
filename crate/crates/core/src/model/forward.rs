//! Full-sequence forward pass with attention taping and optional
//! inference-time attention modifications.
//!
//! Modification order on each post-softmax row: column scaling (for rows
//! below the scaled position), final-row gains (optionally renormalized),
//! then the additive probe used by the finite-difference oracle. The tape
//! records the matrix actually used for value aggregation.

use crate::error::{Error, Result};
use crate::math::{dot, linear_into, softmax_inplace, Mat, Scalar};

use super::config::ModelConfig;
use super::tape::AttentionTape;
use super::weights::Weights;

pub(crate) const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Multiplicative gains on the final query row over positions
/// `start..start+gains.len()` (the output-history positions).
#[derive(Debug, Clone)]
pub struct RowGain {
    pub start: usize,
    pub gains: Vec<f64>,
    pub renormalize: bool,
}

/// Scale attention from every later query to one key position — the
/// decay-intervention mechanism.
#[derive(Debug, Clone, Copy)]
pub struct ColScale {
    pub col: usize,
    pub factor: f64,
}

/// Additive nudge of a single taped attention entry; used only by the
/// finite-difference gradient oracle.
#[derive(Debug, Clone, Copy)]
pub struct AttnPerturb {
    pub layer: usize,
    pub head: usize,
    pub row: usize,
    pub col: usize,
    pub delta: f64,
}

/// Inference-time attention modifications for one forward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardMods {
    pub row_gain: Option<RowGain>,
    pub col_scale: Option<ColScale>,
    pub perturb: Option<AttnPerturb>,
}

impl ForwardMods {
    pub fn none() -> Self {
        ForwardMods::default()
    }

    pub fn is_empty(&self) -> bool {
        self.row_gain.is_none() && self.col_scale.is_none() && self.perturb.is_none()
    }
}

/// Per-layer intermediates kept for the backward pass.
#[derive(Debug)]
pub(crate) struct LayerCache<T> {
    pub ln1_xhat: Mat<T>,
    pub ln1_invstd: Vec<T>,
    pub y1: Mat<T>,
    pub q: Mat<T>,
    pub k: Mat<T>,
    pub v: Mat<T>,
    /// Post-softmax, pre-modification probabilities per head.
    pub a_raw: Vec<Mat<T>>,
    /// Post-modification probabilities per head (what the tape records).
    pub a_post: Vec<Mat<T>>,
    /// Per head: the row sum divided out when final-row renormalization ran.
    pub renorm_sum: Vec<Option<T>>,
    pub ctx: Mat<T>,
    pub ln2_xhat: Mat<T>,
    pub ln2_invstd: Vec<T>,
    pub y2: Mat<T>,
    pub h1: Mat<T>,
    pub tanh_u: Mat<T>,
    pub g_act: Mat<T>,
}

#[derive(Debug)]
pub(crate) struct Cache<T> {
    pub tokens: Vec<usize>,
    pub layers: Vec<LayerCache<T>>,
    pub lnf_xhat: Mat<T>,
    pub lnf_invstd: Vec<T>,
    pub z: Mat<T>,
    pub logits: Mat<T>,
}

#[derive(Debug)]
pub(crate) enum CacheStorage {
    F32(Cache<f32>),
    F64(Cache<f64>),
}

/// Result of a forward pass: next-token logits at every position, the
/// attention tape, and the intermediates a backward pass needs.
#[derive(Debug)]
pub struct ForwardPass {
    pub(crate) cache: CacheStorage,
    pub(crate) mods: ForwardMods,
    logits: Mat<f64>,
    tape: AttentionTape,
}

impl ForwardPass {
    pub(crate) fn assemble(
        cache: CacheStorage,
        mods: ForwardMods,
        logits: Mat<f64>,
        tape: AttentionTape,
    ) -> Self {
        ForwardPass {
            cache,
            mods,
            logits,
            tape,
        }
    }

    pub(crate) fn parts_mut(
        &mut self,
    ) -> (&mut CacheStorage, &ForwardMods, &mut AttentionTape) {
        (&mut self.cache, &self.mods, &mut self.tape)
    }

    pub fn n(&self) -> usize {
        self.tape.n()
    }

    /// Next-token logits at position `pos` (prediction for `pos + 1`).
    pub fn logits(&self, pos: usize) -> &[f64] {
        self.logits.row(pos)
    }

    pub fn last_logits(&self) -> &[f64] {
        self.logits.row(self.logits.rows - 1)
    }

    pub fn tape(&self) -> &AttentionTape {
        &self.tape
    }
}

#[inline]
pub(crate) fn gelu_value<T: Scalar>(x: T) -> (T, T) {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let half = T::from_f64(0.5);
    (half * x * (T::one() + t), t)
}

fn layer_norm<T: Scalar>(
    x: &Mat<T>,
    gain: &[T],
    bias: &[T],
) -> (Mat<T>, Mat<T>, Vec<T>) {
    let n = x.rows;
    let d = x.cols;
    let mut y = Mat::zeros(n, d);
    let mut xhat = Mat::zeros(n, d);
    let mut invstd = vec![T::zero(); n];
    let dn = T::from_f64(d as f64);
    let eps = T::from_f64(LN_EPS);
    for i in 0..n {
        let row = x.row(i);
        let mut mean = T::zero();
        for &v in row {
            mean = mean + v;
        }
        mean = mean / dn;
        let mut var = T::zero();
        for &v in row {
            let c = v - mean;
            var = var + c * c;
        }
        var = var / dn;
        let is = T::one() / (var + eps).sqrt();
        invstd[i] = is;
        let xh = xhat.row_mut(i);
        let yr = y.row_mut(i);
        for j in 0..d {
            let h = (row[j] - mean) * is;
            xh[j] = h;
            yr[j] = gain[j] * h + bias[j];
        }
    }
    (y, xhat, invstd)
}

fn project<T: Scalar>(x: &Mat<T>, w: &Mat<T>, b: &[T]) -> Mat<T> {
    let mut out = Mat::zeros(x.rows, w.rows);
    for i in 0..x.rows {
        linear_into(w, b, x.row(i), out.row_mut(i));
    }
    out
}

pub(crate) fn run_forward<T: Scalar>(
    cfg: &ModelConfig,
    weights: &Weights<T>,
    tokens: &[usize],
    mods: &ForwardMods,
) -> Result<(Cache<T>, Mat<f64>, AttentionTape)> {
    let n = tokens.len();
    if n == 0 || n > cfg.max_seq_len {
        return Err(Error::SequenceTooLong {
            len: n,
            max: cfg.max_seq_len,
        });
    }
    for &t in tokens {
        if t >= cfg.vocab_size {
            return Err(Error::UnknownToken {
                id: t,
                vocab: cfg.vocab_size,
            });
        }
    }
    if let Some(p) = &mods.perturb {
        if p.layer >= cfg.n_layers || p.head >= cfg.n_heads || p.row >= n || p.col > p.row {
            return Err(Error::PositionOutOfRange { pos: p.row, len: n });
        }
    }
    if let Some(rg) = &mods.row_gain {
        let q = n - 1;
        let expected = q.saturating_sub(rg.start);
        if rg.gains.len() != expected {
            return Err(Error::GainLength {
                gains: rg.gains.len(),
                expected,
            });
        }
    }

    let d = cfg.d_model;
    let nh = cfg.n_heads;
    let dh = cfg.head_dim();
    let inv_sqrt_dh = T::from_f64(1.0 / (dh as f64).sqrt());

    let mut x = Mat::zeros(n, d);
    for (i, &t) in tokens.iter().enumerate() {
        let xr = x.row_mut(i);
        let te = weights.tok_emb.row(t);
        let pe = weights.pos_emb.row(i);
        for j in 0..d {
            xr[j] = te[j] + pe[j];
        }
    }

    let mut layers = Vec::with_capacity(cfg.n_layers);
    let mut tape_mats: Vec<Mat<f64>> = Vec::with_capacity(cfg.n_layers * nh);

    for l in 0..cfg.n_layers {
        let lw = &weights.layers[l];
        let x_in = x;
        let (y1, ln1_xhat, ln1_invstd) = layer_norm(&x_in, &lw.ln1_g, &lw.ln1_b);
        let q = project(&y1, &lw.wq, &lw.bq);
        let k = project(&y1, &lw.wk, &lw.bk);
        let v = project(&y1, &lw.wv, &lw.bv);

        let mut a_raw: Vec<Mat<T>> = Vec::with_capacity(nh);
        let mut a_post: Vec<Mat<T>> = Vec::with_capacity(nh);
        let mut renorm_sum: Vec<Option<T>> = vec![None; nh];
        let mut ctx = Mat::zeros(n, d);

        for h in 0..nh {
            let hs = h * dh;
            let mut raw = Mat::zeros(n, n);
            let mut post = Mat::zeros(n, n);
            for i in 0..n {
                let qi = &q.row(i)[hs..hs + dh];
                let row = raw.row_mut(i);
                for j in 0..=i {
                    row[j] = dot(qi, &k.row(j)[hs..hs + dh]) * inv_sqrt_dh;
                }
                softmax_inplace(&mut row[..=i]);

                // Modifications go to a copy; `raw` keeps the plain
                // softmax output for the backward pass.
                let row = post.row_mut(i);
                row[..=i].copy_from_slice(&raw.row(i)[..=i]);
                if let Some(cs) = &mods.col_scale {
                    if i > cs.col {
                        row[cs.col] = row[cs.col] * T::from_f64(cs.factor);
                    }
                }
                if i == n - 1 {
                    if let Some(rg) = &mods.row_gain {
                        for (off, &g) in rg.gains.iter().enumerate() {
                            let j = rg.start + off;
                            row[j] = row[j] * T::from_f64(g);
                        }
                        if rg.renormalize {
                            let mut s = T::zero();
                            for &p in row[..=i].iter() {
                                s = s + p;
                            }
                            for p in row[..=i].iter_mut() {
                                *p = *p / s;
                            }
                            renorm_sum[h] = Some(s);
                        }
                    }
                }
                if let Some(p) = &mods.perturb {
                    if p.layer == l && p.head == h && p.row == i {
                        row[p.col] = row[p.col] + T::from_f64(p.delta);
                    }
                }

                // Value aggregation over the causal support.
                let post_row = post.row(i);
                let cr = &mut ctx.row_mut(i)[hs..hs + dh];
                for j in 0..=i {
                    let w_ij = post_row[j];
                    let vj = &v.row(j)[hs..hs + dh];
                    for (c, &vv) in cr.iter_mut().zip(vj) {
                        *c = *c + w_ij * vv;
                    }
                }
            }
            tape_mats.push(post.to_f64());
            a_raw.push(raw);
            a_post.push(post);
        }

        let attn_out = project(&ctx, &lw.wo, &lw.bo);
        let mut x2 = Mat::zeros(n, d);
        for i in 0..n {
            let a = x_in.row(i);
            let b = attn_out.row(i);
            let o = x2.row_mut(i);
            for j in 0..d {
                o[j] = a[j] + b[j];
            }
        }

        let (y2, ln2_xhat, ln2_invstd) = layer_norm(&x2, &lw.ln2_g, &lw.ln2_b);
        let h1 = project(&y2, &lw.w1, &lw.b1);
        let m = cfg.ff_dim();
        let mut tanh_u = Mat::zeros(n, m);
        let mut g_act = Mat::zeros(n, m);
        for i in 0..n {
            let hr = h1.row(i);
            let tr = tanh_u.row_mut(i);
            let gr = g_act.row_mut(i);
            for j in 0..m {
                let (g, t) = gelu_value(hr[j]);
                gr[j] = g;
                tr[j] = t;
            }
        }
        let ffn_out = project(&g_act, &lw.w2, &lw.b2);
        let mut x3 = Mat::zeros(n, d);
        for i in 0..n {
            let a = x2.row(i);
            let b = ffn_out.row(i);
            let o = x3.row_mut(i);
            for j in 0..d {
                o[j] = a[j] + b[j];
            }
        }

        layers.push(LayerCache {
            ln1_xhat,
            ln1_invstd,
            y1,
            q,
            k,
            v,
            a_raw,
            a_post,
            renorm_sum,
            ctx,
            ln2_xhat,
            ln2_invstd,
            y2,
            h1,
            tanh_u,
            g_act,
        });
        x = x3;
    }

    let (z, lnf_xhat, lnf_invstd) = layer_norm(&x, &weights.lnf_g, &weights.lnf_b);
    let logits = project(&z, &weights.w_head, &weights.b_head);
    let logits_f64 = logits.to_f64();

    let tape = AttentionTape::new(n, cfg.n_layers, cfg.n_heads, tape_mats);
    let cache = Cache {
        tokens: tokens.to_vec(),
        layers,
        lnf_xhat,
        lnf_invstd,
        z,
        logits,
    };
    Ok((cache, logits_f64, tape))
}
