//! Post-softmax attention matrices captured during a forward pass, plus
//! their loss gradients once a backward pass has run.

use crate::error::{Error, Result};
use crate::math::Mat;

#[derive(Debug, Clone)]
pub struct AttentionTape {
    n: usize,
    n_layers: usize,
    n_heads: usize,
    attn: Vec<Mat<f64>>,
    grads: Option<Vec<Mat<f64>>>,
    /// Lowest layer index whose gradients were filled by the last backward.
    grad_from_layer: usize,
}

impl AttentionTape {
    pub(crate) fn new(n: usize, n_layers: usize, n_heads: usize, attn: Vec<Mat<f64>>) -> Self {
        debug_assert_eq!(attn.len(), n_layers * n_heads);
        AttentionTape {
            n,
            n_layers,
            n_heads,
            attn,
            grads: None,
            grad_from_layer: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    /// Post-softmax (post-modification) attention matrix `A` at (layer, head).
    pub fn attention(&self, layer: usize, head: usize) -> &Mat<f64> {
        &self.attn[layer * self.n_heads + head]
    }

    /// Loss gradient w.r.t. the taped attention matrix at (layer, head).
    pub fn grad(&self, layer: usize, head: usize) -> Result<&Mat<f64>> {
        match &self.grads {
            Some(g) if layer >= self.grad_from_layer => Ok(&g[layer * self.n_heads + head]),
            _ => Err(Error::GradientsMissing),
        }
    }

    pub fn has_grads(&self) -> bool {
        self.grads.is_some()
    }

    pub(crate) fn reset_grads(&mut self, from_layer: usize) {
        self.grad_from_layer = from_layer;
        self.grads = Some(
            (0..self.n_layers * self.n_heads)
                .map(|_| Mat::zeros(self.n, self.n))
                .collect(),
        );
    }

    pub(crate) fn grad_mut(&mut self, layer: usize, head: usize) -> &mut Mat<f64> {
        let idx = layer * self.n_heads + head;
        &mut self.grads.as_mut().expect("grads allocated")[idx]
    }
}
