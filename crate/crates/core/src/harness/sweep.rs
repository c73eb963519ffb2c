//! Alpha/beta grid sweeps over decode modes, reporting hallucination
//! rate, gold recall, and latency per cell.

use serde::Serialize;

use crate::error::Result;
use crate::model::Model;
use crate::sgrs::{decode, DecodeMode, DecodeParams};

use super::corpus::SyntheticSample;
use super::{corpus_metrics, for_each_sample, sample_seed};

#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub mode: String,
    pub alpha: f64,
    pub beta: f64,
    /// Percent of generated content tokens that are hallucinated.
    pub halluc_rate: f64,
    /// Mean percent of gold tokens recovered per sample.
    pub recall: f64,
    pub ms_per_token: f64,
    pub tokens: usize,
    /// Whether this cell ran on the cached decode path.
    pub cached: bool,
}

/// Cell grid per mode: baseline is a single cell, rejection-sampling
/// cells sweep alpha, coherence cells sweep beta, and the combined mode
/// sweeps the product.
pub fn cell_grid(
    modes: &[DecodeMode],
    alphas: &[f64],
    betas: &[f64],
) -> Vec<(DecodeMode, f64, f64)> {
    let mut cells = Vec::new();
    for &mode in modes {
        match mode {
            DecodeMode::Baseline => cells.push((mode, 0.0, 0.0)),
            DecodeMode::Sgrs => {
                for &a in alphas {
                    cells.push((mode, a, 0.0));
                }
            }
            DecodeMode::Locore => {
                for &b in betas {
                    cells.push((mode, 0.0, b));
                }
            }
            DecodeMode::SgrsLocore => {
                for &a in alphas {
                    for &b in betas {
                        cells.push((mode, a, b));
                    }
                }
            }
        }
    }
    cells
}

pub fn run_cell(
    model: &Model,
    samples: &[SyntheticSample],
    base: &DecodeParams,
    seed: u64,
    mode: DecodeMode,
    alpha: f64,
    beta: f64,
    jobs: usize,
) -> Result<SweepCell> {
    let mut params = base.clone();
    params.mode = mode;
    params.sgrs.alpha = alpha;
    params.locore.beta = beta;
    let cached = params.use_cache && !mode.uses_sgrs();

    let results: Vec<(Vec<usize>, f64)> = for_each_sample(samples, jobs, |sample| {
        let mut p = params.clone();
        p.seed = sample_seed(seed, sample.id);
        let out = decode(model, &sample.tokens, &p)?;
        Ok((out.tokens, out.latency.total_ms))
    })?;

    let outputs: Vec<Vec<usize>> = results.iter().map(|(t, _)| t.clone()).collect();
    let total_ms: f64 = results.iter().map(|(_, ms)| ms).sum();
    let metrics = corpus_metrics(samples, &outputs);
    let tokens: usize = outputs.iter().map(Vec::len).sum();
    Ok(SweepCell {
        mode: mode.name().to_string(),
        alpha,
        beta,
        halluc_rate: metrics.halluc_rate,
        recall: metrics.recall,
        ms_per_token: total_ms / tokens.max(1) as f64,
        tokens,
        cached,
    })
}

pub fn sweep(
    model: &Model,
    samples: &[SyntheticSample],
    base: &DecodeParams,
    seed: u64,
    alphas: &[f64],
    betas: &[f64],
    modes: &[DecodeMode],
    jobs: usize,
) -> Result<Vec<SweepCell>> {
    cell_grid(modes, alphas, betas)
        .into_iter()
        .map(|(mode, a, b)| run_cell(model, samples, base, seed, mode, a, b, jobs))
        .collect()
}
