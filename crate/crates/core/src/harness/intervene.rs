//! Saliency-decay intervention.
//!
//! Pick high-saliency correct tokens, scale every later query's attention
//! to that position by a factor `r`, re-decode the suffix, and measure
//! the downstream hallucination rate. `r = 1` is a provable no-op; the
//! position-keyed decode rng makes suffix re-decodes comparable across
//! factors.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ColScale, Model};
use crate::sgrs::{decode, DecodeParams};

use super::corpus::SyntheticSample;
use super::label::{label_tokens, label_tokens_fast, TokenClass, TokenLabel};
use super::stats::percentile;
use super::{for_each_sample, sample_seed};

#[derive(Debug, Clone, Serialize)]
pub struct InterventionRow {
    pub factor: f64,
    pub downstream_content: usize,
    pub downstream_hallucinated: usize,
    /// Percent of downstream content tokens that are hallucinated.
    pub rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct InterventionOutcome {
    /// Corpus-level saliency cut used to select anchors.
    pub threshold: f64,
    pub eligible_samples: usize,
    pub rows: Vec<InterventionRow>,
}

struct Anchor {
    sample_idx: usize,
    /// Index into the decoded output.
    output_idx: usize,
    /// Absolute sequence position of the anchored token.
    position: usize,
}

/// Run the decay experiment over `factors` (typically
/// `{1.0, 0.8, 0.6, 0.4, 0.2}`).
pub fn intervention(
    model: &Model,
    samples: &[SyntheticSample],
    base: &DecodeParams,
    seed: u64,
    factors: &[f64],
    selection_percentile: f64,
    jobs: usize,
) -> Result<InterventionOutcome> {
    // Pass 1: baseline decode + saliency labels.
    let decoded: Vec<(Vec<usize>, Vec<TokenLabel>)> =
        for_each_sample(samples, jobs, |sample| {
            let mut params = base.clone();
            params.seed = sample_seed(seed, sample.id);
            let out = decode(model, &sample.tokens, &params)?;
            let labels = label_tokens(
                model,
                sample,
                &out.tokens,
                &params.score_cfg,
                params.agg_mode,
            )?;
            Ok((out.tokens, labels))
        })?;

    let correct_saliencies: Vec<f64> = decoded
        .iter()
        .flat_map(|(_, labels)| labels.iter())
        .filter(|l| l.label == TokenClass::Correct)
        .filter_map(|l| l.saliency_prev)
        .collect();
    if correct_saliencies.is_empty() {
        return Err(Error::NoEligibleTokens);
    }
    let threshold = percentile(&correct_saliencies, selection_percentile);

    // Earliest qualifying correct token per sample, with room to re-decode
    // a suffix after it.
    let mut anchors: Vec<Anchor> = Vec::new();
    for (idx, (output, labels)) in decoded.iter().enumerate() {
        let budget = base.max_new_tokens;
        let found = labels.iter().enumerate().find(|(k, l)| {
            l.label == TokenClass::Correct
                && l.saliency_prev.map_or(false, |s| s > threshold)
                && k + 1 < output.len().min(budget)
        });
        if let Some((k, l)) = found {
            anchors.push(Anchor {
                sample_idx: idx,
                output_idx: k,
                position: l.position,
            });
        }
    }
    if anchors.is_empty() {
        return Err(Error::NoEligibleTokens);
    }

    let mut rows = Vec::with_capacity(factors.len());
    for &factor in factors {
        let counts: Vec<(usize, usize)> = for_each_sample(&anchors, jobs, |anchor| {
            let sample = &samples[anchor.sample_idx];
            let (output, _) = &decoded[anchor.sample_idx];
            let mut prefix = sample.tokens.clone();
            prefix.extend_from_slice(&output[..=anchor.output_idx]);

            let mut params = base.clone();
            params.seed = sample_seed(seed, sample.id);
            params.max_new_tokens = base.max_new_tokens - (anchor.output_idx + 1);
            params.col_scale = Some(ColScale {
                col: anchor.position,
                factor,
            });
            let suffix = decode(model, &prefix, &params)?;
            let labels = label_tokens_fast(sample, &suffix.tokens);
            let content = labels
                .iter()
                .filter(|l| l.label != TokenClass::Neutral)
                .count();
            let halluc = labels
                .iter()
                .filter(|l| l.label == TokenClass::Hallucinated)
                .count();
            Ok((content, halluc))
        })?;
        let content: usize = counts.iter().map(|c| c.0).sum();
        let halluc: usize = counts.iter().map(|c| c.1).sum();
        rows.push(InterventionRow {
            factor,
            downstream_content: content,
            downstream_hallucinated: halluc,
            rate: 100.0 * halluc as f64 / content.max(1) as f64,
        });
    }

    Ok(InterventionOutcome {
        threshold,
        eligible_samples: anchors.len(),
        rows,
    })
}
