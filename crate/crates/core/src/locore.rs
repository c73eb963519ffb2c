//! Local coherence reinforcement: a distance-gated multiplicative gain on
//! the current query row's attention to its most recent output positions.
//!
//! The gain never persists into cached state — each forward applies it to
//! its own final row only, so history positions always carry plain
//! attention (see `model::session` for how the cached path preserves
//! this).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ForwardMods, ForwardPass, Model, RowGain, TokenLayout};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LocoREConfig {
    /// Gain strength; 0 disables.
    pub beta: f64,
    /// Window size: positions within this distance of the query get the
    /// gain.
    pub window: usize,
    /// Re-divide the gained row by its sum so it stays a distribution.
    pub renormalize: bool,
}

impl Default for LocoREConfig {
    fn default() -> Self {
        LocoREConfig {
            beta: 0.15,
            window: 5,
            renormalize: false,
        }
    }
}

/// Gains over the output-history positions `J_p = output_start..p` for the
/// query at position `p`: `1 + beta` where `p - j <= window`, else 1.
/// Empty when there is no output history yet.
pub fn gain_vector(p: usize, layout: &TokenLayout, beta: f64, window: usize) -> Vec<f64> {
    layout
        .output_positions(p)
        .map(|j| if p - j <= window { 1.0 + beta } else { 1.0 })
        .collect()
}

/// The `ForwardMods` gain for a sequence whose final row sits at `p`.
pub fn row_gain(cfg: &LocoREConfig, layout: &TokenLayout, p: usize) -> RowGain {
    RowGain {
        start: layout.output_start,
        gains: gain_vector(p, layout, cfg.beta, cfg.window),
        renormalize: cfg.renormalize,
    }
}

/// Multiply `row[start + k] *= gains[k]`, leaving everything else alone;
/// optionally renormalize the whole row to sum 1 afterwards.
pub fn apply_gain(row: &mut [f64], start: usize, gains: &[f64], renormalize: bool) -> Result<()> {
    if start + gains.len() > row.len() {
        return Err(Error::GainLength {
            gains: gains.len(),
            expected: row.len().saturating_sub(start),
        });
    }
    for (k, &g) in gains.iter().enumerate() {
        row[start + k] *= g;
    }
    if renormalize {
        let sum: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(())
}

/// A model with the coherence hook installed. Forwards through this
/// wrapper gain the final query row; dropping it (or calling `remove`)
/// leaves the underlying model untouched — the hook holds only its
/// config.
pub struct HookedModel<'m> {
    model: &'m Model,
    cfg: LocoREConfig,
    layout: TokenLayout,
}

impl Model {
    pub fn install_coherence_hook(
        &self,
        cfg: LocoREConfig,
        layout: TokenLayout,
    ) -> HookedModel<'_> {
        HookedModel {
            model: self,
            cfg,
            layout,
        }
    }
}

impl<'m> HookedModel<'m> {
    /// Installing on an already-hooked forward is an error.
    pub fn install_coherence_hook(
        &self,
        _cfg: LocoREConfig,
        _layout: TokenLayout,
    ) -> Result<HookedModel<'m>> {
        Err(Error::HookInstalled)
    }

    pub fn remove(self) -> &'m Model {
        self.model
    }

    pub fn config(&self) -> &LocoREConfig {
        &self.cfg
    }

    pub fn forward(&self, tokens: &[usize]) -> Result<ForwardPass> {
        let p = tokens.len().saturating_sub(1);
        let mods = ForwardMods {
            row_gain: Some(row_gain(&self.cfg, &self.layout, p)),
            ..Default::default()
        };
        self.model.forward_with(tokens, &mods)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Precision};

    #[test]
    fn gain_vector_distance_example() {
        let layout = TokenLayout::new(2, 8, 0);
        let g = gain_vector(20, &layout, 0.20, 5);
        assert_eq!(g.len(), 10);
        assert!((g[17 - 10] - 1.20).abs() < 1e-15); // d = 3
        assert!((g[13 - 10] - 1.00).abs() < 1e-15); // d = 7
    }

    #[test]
    fn gain_vector_zero_beta_is_ones() {
        let layout = TokenLayout::new(2, 8, 0);
        let g = gain_vector(20, &layout, 0.0, 5);
        assert!(g.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn gain_vector_empty_at_output_start() {
        let layout = TokenLayout::new(2, 8, 0);
        assert!(gain_vector(10, &layout, 0.2, 5).is_empty());
    }

    #[test]
    fn apply_gain_arithmetic() {
        let mut row = vec![0.1, 0.3, 0.6];
        apply_gain(&mut row, 2, &[1.15], false).unwrap();
        assert!((row[0] - 0.1).abs() < 1e-15);
        assert!((row[1] - 0.3).abs() < 1e-15);
        assert!((row[2] - 0.69).abs() < 1e-15);

        let mut row2 = vec![0.1, 0.3, 0.6];
        apply_gain(&mut row2, 2, &[1.15], true).unwrap();
        let sum = 0.1 + 0.3 + 0.69;
        assert!((row2[0] - 0.1 / sum).abs() < 1e-12);
        assert!((row2[2] - 0.69 / sum).abs() < 1e-12);
    }

    #[test]
    fn apply_gain_beta_zero_bitwise_noop() {
        let orig = vec![0.125, 0.25, 0.625];
        let mut row = orig.clone();
        apply_gain(&mut row, 1, &[1.0, 1.0], false).unwrap();
        assert_eq!(row, orig);
    }

    #[test]
    fn apply_gain_uniform_window_renorm_cancels() {
        // All mass already inside the gained span.
        let mut row = vec![0.0, 0.4, 0.6];
        apply_gain(&mut row, 1, &[1.2, 1.2], true).unwrap();
        assert!((row[1] - 0.4).abs() < 1e-12);
        assert!((row[2] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn apply_gain_length_mismatch() {
        let mut row = vec![0.5, 0.5];
        assert!(matches!(
            apply_gain(&mut row, 1, &[1.1, 1.1], false),
            Err(Error::GainLength { .. })
        ));
    }

    fn cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 16,
            vocab_size: 11,
            max_seq_len: 16,
            rng_seed: 77,
            precision: Precision::F64,
        }
    }

    #[test]
    fn beta_zero_hook_is_bit_identical() {
        let model = Model::init(cfg()).unwrap();
        let layout = TokenLayout::new(1, 2, 1);
        let hooked = model.install_coherence_hook(
            LocoREConfig {
                beta: 0.0,
                window: 5,
                renormalize: false,
            },
            layout,
        );
        let toks = [1, 2, 3, 4, 5, 6, 7];
        let plain = model.forward(&toks).unwrap();
        let gained = hooked.forward(&toks).unwrap();
        for p in 0..toks.len() {
            assert_eq!(plain.logits(p), gained.logits(p));
        }
        for l in 0..2 {
            for h in 0..2 {
                assert_eq!(
                    plain.tape().attention(l, h).data,
                    gained.tape().attention(l, h).data
                );
            }
        }
    }

    #[test]
    fn install_remove_restores_plain_forward() {
        let model = Model::init(cfg()).unwrap();
        let layout = TokenLayout::new(1, 2, 1);
        let hooked = model.install_coherence_hook(LocoREConfig::default(), layout);
        assert!(matches!(
            hooked.install_coherence_hook(LocoREConfig::default(), layout),
            Err(Error::HookInstalled)
        ));
        let inner = hooked.remove();
        let toks = [1, 2, 3, 4];
        let a = inner.forward(&toks).unwrap();
        let b = model.forward(&toks).unwrap();
        assert_eq!(a.logits(3), b.logits(3));
    }

    #[test]
    fn hook_touches_only_final_row() {
        let model = Model::init(cfg()).unwrap();
        let layout = TokenLayout::new(1, 2, 1);
        let hooked = model.install_coherence_hook(
            LocoREConfig {
                beta: 0.3,
                window: 3,
                renormalize: false,
            },
            layout,
        );
        let toks = [1, 2, 3, 4, 5, 6, 7, 8];
        let q = toks.len() - 1;
        let plain = model.forward(&toks).unwrap();
        let gained = hooked.forward(&toks).unwrap();
        // Earlier positions bit-identical.
        for p in 0..q {
            assert_eq!(plain.logits(p), gained.logits(p));
        }
        // Final logits changed.
        assert_ne!(plain.logits(q), gained.logits(q));
        for l in 0..2 {
            for h in 0..2 {
                let pa = plain.tape().attention(l, h);
                let ga = gained.tape().attention(l, h);
                // Non-final rows bit-identical at every layer: the gain
                // never leaks backward in the sequence.
                for i in 0..q {
                    assert_eq!(pa.row(i), ga.row(i), "row {i} must be untouched");
                }
                // Upper triangle still zero.
                for i in 0..toks.len() {
                    for j in i + 1..toks.len() {
                        assert_eq!(ga.get(i, j), 0.0);
                    }
                }
            }
        }
        // At the first layer the query is gain-independent, so the change
        // is exactly the multiplicative gain: system/image columns
        // untouched, window mass scaled by exactly 1 + beta.
        for h in 0..2 {
            let pa = plain.tape().attention(0, h);
            let ga = gained.tape().attention(0, h);
            for j in 0..layout.output_start {
                assert_eq!(pa.get(q, j), ga.get(q, j));
            }
            let window_cols: Vec<usize> = layout
                .output_positions(q)
                .filter(|j| q - j <= 3)
                .collect();
            let before: f64 = window_cols.iter().map(|&j| pa.get(q, j)).sum();
            let after: f64 = window_cols.iter().map(|&j| ga.get(q, j)).sum();
            assert!((after - 1.3 * before).abs() <= 1e-12 * before.abs().max(1.0));
            // Out-of-window history columns get gain 1.0: untouched.
            for j in layout.output_positions(q).filter(|j| q - j > 3) {
                assert_eq!(pa.get(q, j), ga.get(q, j));
            }
        }
    }

    #[test]
    fn renormalized_window_share_increases_with_beta() {
        let model = Model::init(cfg()).unwrap();
        let layout = TokenLayout::new(1, 2, 1);
        let toks = [1, 2, 3, 4, 5, 6, 7, 8];
        let q = toks.len() - 1;
        let share = |beta: f64| -> f64 {
            let hooked = model.install_coherence_hook(
                LocoREConfig {
                    beta,
                    window: 3,
                    renormalize: true,
                },
                layout,
            );
            let pass = hooked.forward(&toks).unwrap();
            let a = pass.tape().attention(0, 0);
            let total: f64 = (0..=q).map(|j| a.get(q, j)).sum();
            let win: f64 = layout
                .output_positions(q)
                .filter(|j| q - j <= 3)
                .map(|j| a.get(q, j))
                .sum();
            win / total
        };
        let s0 = share(0.0);
        let s1 = share(0.2);
        let s2 = share(0.8);
        assert!(s1 > s0 && s2 > s1, "{s0} {s1} {s2}");
    }
}
