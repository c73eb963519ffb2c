//! Reverse-mode differentiation of the forward pass.
//!
//! The loss is a weighted sum of per-position cross-entropies against
//! next-token targets. Gradients are read out at every taped (post-
//! modification) attention matrix and written into the tape; parameter
//! gradients are optionally accumulated for training. `min_layer` stops
//! the walk below the lowest layer whose attention gradients are needed —
//! the candidate-scoring fast path.

use crate::error::{Error, Result};
use crate::math::{dot, softmax_inplace, Mat, Scalar};

use super::config::ModelConfig;
use super::forward::{Cache, ForwardMods};
use super::tape::AttentionTape;
use super::weights::Weights;

const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044_715;

pub(crate) struct BackwardOpts<'a, T> {
    pub min_layer: usize,
    pub param_grads: Option<&'a mut Weights<T>>,
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// dx[i] += sum_o dout[i][o] * w[o]; optionally dw[o] += dout[i][o] * x[i],
/// db[o] += dout[i][o].
fn linear_backward<T: Scalar>(
    dout: &Mat<T>,
    w: &Mat<T>,
    x: &Mat<T>,
    dx: &mut Mat<T>,
    mut params: Option<(&mut Mat<T>, &mut Vec<T>)>,
) {
    let n = dout.rows;
    let n_out = w.rows;
    for i in 0..n {
        let dr = dout.row(i);
        for o in 0..n_out {
            let g = dr[o];
            if g == T::zero() {
                continue;
            }
            axpy(g, w.row(o), dx.row_mut(i));
            if let Some((dw, db)) = params.as_mut() {
                axpy(g, x.row(i), dw.row_mut(o));
                db[o] = db[o] + g;
            }
        }
    }
}

/// Standard layer-norm backward with biased variance.
fn layer_norm_backward<T: Scalar>(
    dy: &Mat<T>,
    xhat: &Mat<T>,
    invstd: &[T],
    gain: &[T],
    dx_out: &mut Mat<T>,
    mut params: Option<(&mut Vec<T>, &mut Vec<T>)>,
) {
    let n = dy.rows;
    let d = dy.cols;
    let dn = T::from_f64(d as f64);
    for i in 0..n {
        let dyr = dy.row(i);
        let xh = xhat.row(i);
        if let Some((dg, db)) = params.as_mut() {
            for j in 0..d {
                dg[j] = dg[j] + dyr[j] * xh[j];
                db[j] = db[j] + dyr[j];
            }
        }
        let mut m1 = T::zero();
        let mut m2 = T::zero();
        for j in 0..d {
            let dxh = dyr[j] * gain[j];
            m1 = m1 + dxh;
            m2 = m2 + dxh * xh[j];
        }
        m1 = m1 / dn;
        m2 = m2 / dn;
        let is = invstd[i];
        let dxr = dx_out.row_mut(i);
        for j in 0..d {
            let dxh = dyr[j] * gain[j];
            dxr[j] = dxr[j] + is * (dxh - m1 - xh[j] * m2);
        }
    }
}

#[inline]
fn gelu_grad<T: Scalar>(x: T, t: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let sech2 = T::one() - t * t;
    half * (T::one() + t) + half * x * sech2 * c * (T::one() + three * a * x * x)
}

pub(crate) fn run_backward<T: Scalar>(
    cfg: &ModelConfig,
    weights: &Weights<T>,
    cache: &Cache<T>,
    mods: &ForwardMods,
    seeds: &[(usize, usize, f64)],
    tape: &mut AttentionTape,
    mut opts: BackwardOpts<T>,
) -> Result<()> {
    let n = cache.tokens.len();
    let d = cfg.d_model;
    let v_size = cfg.vocab_size;
    let nh = cfg.n_heads;
    let dh = cfg.head_dim();
    let inv_sqrt_dh = T::from_f64(1.0 / (dh as f64).sqrt());

    let min_layer = if opts.param_grads.is_some() {
        0
    } else {
        opts.min_layer.min(cfg.n_layers - 1)
    };

    // Loss seed: d_logits = weight * (softmax(logits) - onehot(target)).
    let mut d_logits = Mat::<T>::zeros(n, v_size);
    let mut seeded = vec![false; n];
    for &(pos, target, weight) in seeds {
        if pos >= n {
            return Err(Error::PositionOutOfRange { pos, len: n });
        }
        if target >= v_size {
            return Err(Error::UnknownToken {
                id: target,
                vocab: v_size,
            });
        }
        let mut probs = cache.logits.row(pos).to_vec();
        softmax_inplace(&mut probs);
        let wgt = T::from_f64(weight);
        let dr = d_logits.row_mut(pos);
        for (o, &p) in probs.iter().enumerate() {
            dr[o] = dr[o] + wgt * p;
        }
        dr[target] = dr[target] - wgt;
        seeded[pos] = true;
    }

    tape.reset_grads(min_layer);

    // Output head.
    let mut dz = Mat::<T>::zeros(n, d);
    for i in 0..n {
        if !seeded[i] {
            continue;
        }
        let dr = d_logits.row(i);
        for o in 0..v_size {
            let g = dr[o];
            if g == T::zero() {
                continue;
            }
            axpy(g, weights.w_head.row(o), dz.row_mut(i));
            if let Some(pg) = opts.param_grads.as_mut() {
                axpy(g, cache.z.row(i), pg.w_head.row_mut(o));
                pg.b_head[o] = pg.b_head[o] + g;
            }
        }
    }

    // Final layer norm.
    let mut dx = Mat::<T>::zeros(n, d);
    {
        let params = opts
            .param_grads
            .as_mut()
            .map(|pg| (&mut pg.lnf_g, &mut pg.lnf_b));
        layer_norm_backward(
            &dz,
            &cache.lnf_xhat,
            &cache.lnf_invstd,
            &weights.lnf_g,
            &mut dx,
            params,
        );
    }

    for l in (min_layer..cfg.n_layers).rev() {
        let lw = &weights.layers[l];
        let lc = &cache.layers[l];
        let m = cfg.ff_dim();

        // ---- feed-forward block ----
        // dx is the gradient at x3 = x2 + ffn_out.
        let d_ffn_out = &dx; // same values; residual handled below
        let mut dg_act = Mat::<T>::zeros(n, m);
        {
            let params = opts
                .param_grads
                .as_mut()
                .map(|pg| {
                    let lp = &mut pg.layers[l];
                    (&mut lp.w2, &mut lp.b2)
                });
            linear_backward(d_ffn_out, &lw.w2, &lc.g_act, &mut dg_act, params);
        }
        let mut dh1 = Mat::<T>::zeros(n, m);
        for i in 0..n {
            let dgr = dg_act.row(i);
            let hr = lc.h1.row(i);
            let tr = lc.tanh_u.row(i);
            let dhr = dh1.row_mut(i);
            for j in 0..m {
                dhr[j] = dgr[j] * gelu_grad(hr[j], tr[j]);
            }
        }
        let mut dy2 = Mat::<T>::zeros(n, d);
        {
            let params = opts
                .param_grads
                .as_mut()
                .map(|pg| {
                    let lp = &mut pg.layers[l];
                    (&mut lp.w1, &mut lp.b1)
                });
            linear_backward(&dh1, &lw.w1, &lc.y2, &mut dy2, params);
        }
        // dx2 = dx3 (residual) + LN2 backward of dy2.
        let mut dx2 = dx.clone();
        {
            let params = opts
                .param_grads
                .as_mut()
                .map(|pg| {
                    let lp = &mut pg.layers[l];
                    (&mut lp.ln2_g, &mut lp.ln2_b)
                });
            layer_norm_backward(
                &dy2,
                &lc.ln2_xhat,
                &lc.ln2_invstd,
                &lw.ln2_g,
                &mut dx2,
                params,
            );
        }

        // ---- attention block ----
        let d_attn_out = &dx2;
        let mut d_ctx = Mat::<T>::zeros(n, d);
        {
            let params = opts
                .param_grads
                .as_mut()
                .map(|pg| {
                    let lp = &mut pg.layers[l];
                    (&mut lp.wo, &mut lp.bo)
                });
            linear_backward(d_attn_out, &lw.wo, &lc.ctx, &mut d_ctx, params);
        }

        let mut dq = Mat::<T>::zeros(n, d);
        let mut dk = Mat::<T>::zeros(n, d);
        let mut dv = Mat::<T>::zeros(n, d);

        for h in 0..nh {
            let hs = h * dh;
            let a_raw = &lc.a_raw[h];
            let a_post = &lc.a_post[h];

            // Gradient at the taped matrix: d_post[i][j] = d_ctx_h[i] . v_h[j].
            let mut d_post = Mat::<T>::zeros(n, n);
            for i in 0..n {
                let dci = &d_ctx.row(i)[hs..hs + dh];
                if dci.iter().all(|&x| x == T::zero()) {
                    continue;
                }
                let dpr = d_post.row_mut(i);
                for j in 0..=i {
                    dpr[j] = dot(dci, &lc.v.row(j)[hs..hs + dh]);
                }
                // dV from the aggregation.
                let apr = a_post.row(i);
                for j in 0..=i {
                    axpy(apr[j], dci, &mut dv.row_mut(j)[hs..hs + dh]);
                }
            }

            // Record the read-out gradient.
            {
                let g = tape.grad_mut(l, h);
                for (dst, src) in g.data.iter_mut().zip(&d_post.data) {
                    *dst = src.into_f64();
                }
            }

            // Invert modifications back to the plain softmax output.
            let mut d_raw = d_post;
            if let Some(s) = lc.renorm_sum[h] {
                // Final row went through p = u / sum(u).
                let i = n - 1;
                let p_row = a_post.row(i).to_vec();
                let d_row = d_raw.row(i).to_vec();
                let mut inner = T::zero();
                for j in 0..=i {
                    inner = inner + d_row[j] * p_row[j];
                }
                let dr = d_raw.row_mut(i);
                for j in 0..=i {
                    dr[j] = (d_row[j] - inner) / s;
                }
            }
            if let Some(rg) = &mods.row_gain {
                let i = n - 1;
                let dr = d_raw.row_mut(i);
                for (off, &g) in rg.gains.iter().enumerate() {
                    let j = rg.start + off;
                    dr[j] = dr[j] * T::from_f64(g);
                }
            }
            if let Some(cs) = &mods.col_scale {
                let f = T::from_f64(cs.factor);
                for i in cs.col + 1..n {
                    let e = d_raw.get(i, cs.col) * f;
                    d_raw.set(i, cs.col, e);
                }
            }

            // Softmax backward and score gradients.
            for i in 0..n {
                let ar = a_raw.row(i);
                let dr = d_raw.row(i);
                let mut inner = T::zero();
                for j in 0..=i {
                    inner = inner + dr[j] * ar[j];
                }
                let qi = &lc.q.row(i)[hs..hs + dh];
                let dqi = &mut dq.row_mut(i)[hs..hs + dh];
                for j in 0..=i {
                    let ds = ar[j] * (dr[j] - inner) * inv_sqrt_dh;
                    if ds == T::zero() {
                        continue;
                    }
                    axpy(ds, &lc.k.row(j)[hs..hs + dh], dqi);
                    axpy(ds, qi, &mut dk.row_mut(j)[hs..hs + dh]);
                }
            }
        }

        // Project Q/K/V gradients back to the normed input.
        let mut dy1 = Mat::<T>::zeros(n, d);
        {
            let params = opts
                .param_grads
                .as_mut()
                .map(|pg| {
                    let lp = &mut pg.layers[l];
                    (&mut lp.wq, &mut lp.bq)
                });
            linear_backward(&dq, &lw.wq, &lc.y1, &mut dy1, params);
        }
        {
            let params = opts
                .param_grads
                .as_mut()
                .map(|pg| {
                    let lp = &mut pg.layers[l];
                    (&mut lp.wk, &mut lp.bk)
                });
            linear_backward(&dk, &lw.wk, &lc.y1, &mut dy1, params);
        }
        {
            let params = opts
                .param_grads
                .as_mut()
                .map(|pg| {
                    let lp = &mut pg.layers[l];
                    (&mut lp.wv, &mut lp.bv)
                });
            linear_backward(&dv, &lw.wv, &lc.y1, &mut dy1, params);
        }

        // dx_in = dx2 (residual) + LN1 backward of dy1.
        let mut dx_in = dx2;
        {
            let params = opts
                .param_grads
                .as_mut()
                .map(|pg| {
                    let lp = &mut pg.layers[l];
                    (&mut lp.ln1_g, &mut lp.ln1_b)
                });
            layer_norm_backward(
                &dy1,
                &lc.ln1_xhat,
                &lc.ln1_invstd,
                &lw.ln1_g,
                &mut dx_in,
                params,
            );
        }
        dx = dx_in;
    }

    if let Some(pg) = opts.param_grads.as_mut() {
        for (i, &t) in cache.tokens.iter().enumerate() {
            let dxr = dx.row(i);
            axpy(T::one(), dxr, pg.tok_emb.row_mut(t));
            axpy(T::one(), dxr, pg.pos_emb.row_mut(i));
        }
    }

    Ok(())
}
