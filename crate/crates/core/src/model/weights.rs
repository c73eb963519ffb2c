//! Parameter storage, initialization, and the canonical tensor order.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::math::{Mat, Scalar};

use super::config::ModelConfig;

/// Per-layer parameters.
#[derive(Debug, Clone)]
pub(crate) struct LayerWeights<T> {
    pub ln1_g: Vec<T>,
    pub ln1_b: Vec<T>,
    pub wq: Mat<T>,
    pub bq: Vec<T>,
    pub wk: Mat<T>,
    pub bk: Vec<T>,
    pub wv: Mat<T>,
    pub bv: Vec<T>,
    pub wo: Mat<T>,
    pub bo: Vec<T>,
    pub ln2_g: Vec<T>,
    pub ln2_b: Vec<T>,
    pub w1: Mat<T>,
    pub b1: Vec<T>,
    pub w2: Mat<T>,
    pub b2: Vec<T>,
}

/// All model parameters. Tensor enumeration order (`tensors` /
/// `tensors_mut`) is the checkpoint serialization order and must not
/// change: tok_emb, pos_emb, then per layer
/// (ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1,
/// w2, b2), then lnf_g, lnf_b, w_head, b_head.
#[derive(Debug, Clone)]
pub(crate) struct Weights<T> {
    pub tok_emb: Mat<T>,
    pub pos_emb: Mat<T>,
    pub layers: Vec<LayerWeights<T>>,
    pub lnf_g: Vec<T>,
    pub lnf_b: Vec<T>,
    pub w_head: Mat<T>,
    pub b_head: Vec<T>,
}

fn normal_mat<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Mat<T> {
    let mut m = Mat::zeros(rows, cols);
    for v in m.data.iter_mut() {
        // Box-Muller from two uniforms; draws f64 so both precisions see
        // the same underlying stream.
        let u1: f64 = rng.random::<f64>().max(1e-12);
        let u2: f64 = rng.random::<f64>();
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        *v = T::from_f64(z * std);
    }
    m
}

impl<T: Scalar> Weights<T> {
    pub fn init(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let m = cfg.ff_dim();
        let v = cfg.vocab_size;
        let std = 0.02;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let mut layers = Vec::with_capacity(cfg.n_layers);
        let tok_emb = normal_mat(&mut rng, v, d, std);
        let pos_emb = normal_mat(&mut rng, cfg.max_seq_len, d, std);
        for _ in 0..cfg.n_layers {
            layers.push(LayerWeights {
                ln1_g: vec![T::one(); d],
                ln1_b: vec![T::zero(); d],
                wq: normal_mat(&mut rng, d, d, std),
                bq: vec![T::zero(); d],
                wk: normal_mat(&mut rng, d, d, std),
                bk: vec![T::zero(); d],
                wv: normal_mat(&mut rng, d, d, std),
                bv: vec![T::zero(); d],
                wo: normal_mat(&mut rng, d, d, std),
                bo: vec![T::zero(); d],
                ln2_g: vec![T::one(); d],
                ln2_b: vec![T::zero(); d],
                w1: normal_mat(&mut rng, m, d, std),
                b1: vec![T::zero(); m],
                w2: normal_mat(&mut rng, d, m, std),
                b2: vec![T::zero(); d],
            });
        }
        Weights {
            tok_emb,
            pos_emb,
            layers,
            lnf_g: vec![T::one(); d],
            lnf_b: vec![T::zero(); d],
            w_head: normal_mat(&mut rng, v, d, std),
            b_head: vec![T::zero(); v],
        }
    }

    /// All-zero buffers with the same shapes, for gradient accumulation.
    pub fn zeros_like(&self) -> Self {
        let zm = |m: &Mat<T>| Mat::zeros(m.rows, m.cols);
        let zv = |v: &Vec<T>| vec![T::zero(); v.len()];
        Weights {
            tok_emb: zm(&self.tok_emb),
            pos_emb: zm(&self.pos_emb),
            layers: self
                .layers
                .iter()
                .map(|l| LayerWeights {
                    ln1_g: zv(&l.ln1_g),
                    ln1_b: zv(&l.ln1_b),
                    wq: zm(&l.wq),
                    bq: zv(&l.bq),
                    wk: zm(&l.wk),
                    bk: zv(&l.bk),
                    wv: zm(&l.wv),
                    bv: zv(&l.bv),
                    wo: zm(&l.wo),
                    bo: zv(&l.bo),
                    ln2_g: zv(&l.ln2_g),
                    ln2_b: zv(&l.ln2_b),
                    w1: zm(&l.w1),
                    b1: zv(&l.b1),
                    w2: zm(&l.w2),
                    b2: zv(&l.b2),
                })
                .collect(),
            lnf_g: zv(&self.lnf_g),
            lnf_b: zv(&self.lnf_b),
            w_head: zm(&self.w_head),
            b_head: zv(&self.b_head),
        }
    }

    /// Flat views of every tensor in canonical order.
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = vec![&self.tok_emb.data, &self.pos_emb.data];
        for l in &self.layers {
            out.push(&l.ln1_g);
            out.push(&l.ln1_b);
            out.push(&l.wq.data);
            out.push(&l.bq);
            out.push(&l.wk.data);
            out.push(&l.bk);
            out.push(&l.wv.data);
            out.push(&l.bv);
            out.push(&l.wo.data);
            out.push(&l.bo);
            out.push(&l.ln2_g);
            out.push(&l.ln2_b);
            out.push(&l.w1.data);
            out.push(&l.b1);
            out.push(&l.w2.data);
            out.push(&l.b2);
        }
        out.push(&self.lnf_g);
        out.push(&self.lnf_b);
        out.push(&self.w_head.data);
        out.push(&self.b_head);
        out
    }

    /// Mutable flat views in the same canonical order as `tensors`.
    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out: Vec<&mut Vec<T>> = vec![&mut self.tok_emb.data, &mut self.pos_emb.data];
        for l in self.layers.iter_mut() {
            out.push(&mut l.ln1_g);
            out.push(&mut l.ln1_b);
            out.push(&mut l.wq.data);
            out.push(&mut l.bq);
            out.push(&mut l.wk.data);
            out.push(&mut l.bk);
            out.push(&mut l.wv.data);
            out.push(&mut l.bv);
            out.push(&mut l.wo.data);
            out.push(&mut l.bo);
            out.push(&mut l.ln2_g);
            out.push(&mut l.ln2_b);
            out.push(&mut l.w1.data);
            out.push(&mut l.b1);
            out.push(&mut l.w2.data);
            out.push(&mut l.b2);
        }
        out.push(&mut self.lnf_g);
        out.push(&mut self.lnf_b);
        out.push(&mut self.w_head.data);
        out.push(&mut self.b_head);
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flatten_f64(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for t in self.tensors() {
            out.extend(t.iter().map(|x| x.into_f64()));
        }
        out
    }

    pub fn load_flat_f64(&mut self, flat: &[f64]) -> bool {
        let mut cursor = 0usize;
        for t in self.tensors_mut() {
            let n = t.len();
            if cursor + n > flat.len() {
                return false;
            }
            for (dst, src) in t.iter_mut().zip(&flat[cursor..cursor + n]) {
                *dst = T::from_f64(*src);
            }
            cursor += n;
        }
        cursor == flat.len()
    }
}
