//! Mechanical token labels plus the per-token saliency protocol.
//!
//! A generated content token is `Correct` iff it belongs to the sample's
//! gold set, `Hallucinated` otherwise; function tokens are `Neutral` and
//! excluded from statistics. Each content token's `saliency_prev` is the
//! candidate score of the realized token restricted to its immediate
//! predecessor column, computed exactly as the rejection sampler scores
//! candidates: one forward over the realized prefix, one backward from
//! the token's own row.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::Model;
use crate::saliency::{
    candidate_score, prompt_score, AggregationMode, JMode, SaliencyScoreConfig, SaliencyStack,
};

use super::corpus::{is_content, SyntheticSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenClass {
    Correct,
    Hallucinated,
    Neutral,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenLabel {
    /// Absolute position in the full sequence (prompt + output).
    pub position: usize,
    pub token: usize,
    pub label: TokenClass,
    /// Saliency from the immediately preceding position to this token;
    /// absent for neutral tokens and for tokens whose predecessor is
    /// outside the output-history region.
    pub saliency_prev: Option<f64>,
    /// Mean saliency over the prompt columns, for inspection.
    pub prompt_saliency: Option<f64>,
}

pub fn classify(token: usize, sample: &SyntheticSample) -> TokenClass {
    if !is_content(token) {
        TokenClass::Neutral
    } else if sample.gold_set.contains(&token) {
        TokenClass::Correct
    } else {
        TokenClass::Hallucinated
    }
}

/// Label a decoded output and attach per-token saliencies.
///
/// One forward runs over the whole realized sequence; each content token
/// then gets its own backward from its row (causality makes this
/// identical to scoring it against its truncated prefix).
pub fn label_tokens(
    model: &Model,
    sample: &SyntheticSample,
    output: &[usize],
    score_cfg: &SaliencyScoreConfig,
    agg_mode: AggregationMode,
) -> Result<Vec<TokenLabel>> {
    let mut seq = sample.tokens.clone();
    seq.extend_from_slice(output);
    let prev_cfg = score_cfg.clone().with_j_mode(JMode::PrevOnly);
    let min_layer = score_cfg.target_layers.iter().copied().min().unwrap_or(0);

    let mut pass = model.forward(&seq)?;
    let mut labels = Vec::with_capacity(output.len());
    for (k, &token) in output.iter().enumerate() {
        let p = sample.tokens.len() + k;
        let label = classify(token, sample);
        let (saliency_prev, prompt_saliency) = if label == TokenClass::Neutral {
            (None, None)
        } else {
            model.backward_seeded(&mut pass, &[(p, token, 1.0)], min_layer)?;
            let stack = SaliencyStack::from_tape(pass.tape(), agg_mode, min_layer)?;
            (
                candidate_score(&stack, &prev_cfg, p)?,
                prompt_score(&stack, score_cfg, p),
            )
        };
        labels.push(TokenLabel {
            position: p,
            token,
            label,
            saliency_prev,
            prompt_saliency,
        });
    }
    Ok(labels)
}

/// Labels only, no saliency — for downstream-rate measurements.
pub fn label_tokens_fast(sample: &SyntheticSample, output: &[usize]) -> Vec<TokenLabel> {
    output
        .iter()
        .enumerate()
        .map(|(k, &token)| TokenLabel {
            position: sample.tokens.len() + k,
            token,
            label: classify(token, sample),
            saliency_prev: None,
            prompt_saliency: None,
        })
        .collect()
}
