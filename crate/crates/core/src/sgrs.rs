//! Saliency-guided rejection sampling and the decode driver.
//!
//! Per decoding position: draw top-K candidates from the model's
//! temperature softmax, score each drawn candidate's saliency with a
//! targeted forward+backward, and accept the first whose score clears an
//! adaptive threshold — alpha times the mean saliency of recently
//! accepted tokens. When every round rejects, fall back to the
//! highest-saliency candidate from the original set.
//!
//! Randomness is position-keyed: each position draws from a fresh stream
//! seeded by (session seed, position), so a suffix re-decode (used by the
//! decay intervention) reproduces untouched positions bit-exactly.

use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::locore::{row_gain, LocoREConfig};
use crate::model::{DecodeSession, ForwardMods, Model, RowGain};
use crate::saliency::{
    candidate_score, AggregationMode, SaliencyScoreConfig, SaliencyStack,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SGRSConfig {
    /// Candidate pool size K.
    pub top_k: usize,
    /// Max rejection rounds R.
    pub max_rounds: usize,
    /// Threshold sensitivity; 0 accepts everything.
    pub alpha: f64,
    /// History window W (token count).
    pub window: usize,
    pub temperature: f64,
    /// Append fallback-accepted saliencies to the history (keeps the
    /// threshold live through fallback streaks). The strict variant
    /// appends only on threshold acceptance.
    pub history_on_fallback: bool,
    /// Score candidates on the gain-modified forward instead of the
    /// plain one.
    pub score_with_gains: bool,
}

impl Default for SGRSConfig {
    fn default() -> Self {
        SGRSConfig {
            top_k: 5,
            max_rounds: 5,
            alpha: 0.6,
            window: 10,
            temperature: 1.0,
            history_on_fallback: true,
            score_with_gains: false,
        }
    }
}

/// Saliencies of accepted output tokens, ordered by position.
#[derive(Debug, Clone, Default)]
pub struct SaliencyHistory {
    entries: Vec<(usize, f64)>,
}

impl SaliencyHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, position: usize, saliency: f64) {
        if let Some(&(last, _)) = self.entries.last() {
            assert!(position > last, "history positions must increase");
        }
        self.entries.push((position, saliency));
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }
}

/// `alpha` times the mean saliency of history entries within the last
/// `window` positions of `p`. `None` is the no-history sentinel: nothing
/// to compare against, accept unconditionally.
pub fn adaptive_threshold(
    history: &SaliencyHistory,
    alpha: f64,
    window: usize,
    p: usize,
) -> Option<f64> {
    let cutoff = (p - 1).saturating_sub(window);
    let mut sum = 0.0;
    let mut count = 0usize;
    for &(j, s) in &history.entries {
        if j >= cutoff && j <= p - 1 {
            sum += s;
            count += 1;
        }
    }
    if count == 0 {
        None
    } else {
        Some(alpha * sum / count as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceptedVia {
    Threshold,
    Fallback,
    NoHistory,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateTrace {
    pub token: usize,
    /// Model probability at the sampling temperature (full vocabulary).
    pub prob: f64,
    pub saliency: Option<f64>,
    /// 1-based round in which the candidate was drawn, if it was.
    pub draw_round: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecodeStepTrace {
    pub position: usize,
    pub tau: Option<f64>,
    pub candidates: Vec<CandidateTrace>,
    pub accepted: usize,
    pub accepted_via: AcceptedVia,
    pub rejections: usize,
}

/// Saliency of placing `candidate` after `context`: forward on the
/// extended sequence, backward from the candidate's cross-entropy at its
/// own row, score over target layers and history columns. One full
/// forward+backward per call.
pub fn score_candidate(
    model: &Model,
    context: &[usize],
    candidate: usize,
    score_cfg: &SaliencyScoreConfig,
    agg_mode: AggregationMode,
    gains: Option<RowGain>,
) -> Result<Option<f64>> {
    let mut seq = Vec::with_capacity(context.len() + 1);
    seq.extend_from_slice(context);
    seq.push(candidate);
    let p = context.len();
    let mods = ForwardMods {
        row_gain: gains,
        ..Default::default()
    };
    let mut pass = model.forward_with(&seq, &mods)?;
    let min_layer = score_cfg.target_layers.iter().copied().min().unwrap_or(0);
    model.backward_seeded(&mut pass, &[(p, candidate, 1.0)], min_layer)?;
    let stack = SaliencyStack::from_tape(pass.tape(), agg_mode, min_layer)?;
    candidate_score(&stack, score_cfg, p)
}

/// Top-K tokens by temperature softmax probability, ties broken toward
/// lower token ids. `temperature <= 0` degenerates to argmax (the single
/// best candidate gets probability 1).
pub fn top_k_candidates(logits: &[f64], k: usize, temperature: f64) -> Vec<(usize, f64)> {
    let probs: Vec<f64> = if temperature > 0.0 {
        let scaled: Vec<f64> = logits.iter().map(|&l| l / temperature).collect();
        crate::math::softmax(&scaled)
    } else {
        let best = argmax_lowest(logits);
        let mut p = vec![0.0; logits.len()];
        p[best] = 1.0;
        p
    };
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| {
        probs[b]
            .partial_cmp(&probs[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    order
        .into_iter()
        .take(k)
        .map(|t| (t, probs[t]))
        .collect()
}

fn argmax_lowest(xs: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Draw an index among still-alive candidates, proportional to their
/// probabilities. Falls back to the first alive candidate if all alive
/// probabilities are zero.
fn draw_candidate(
    candidates: &[(usize, f64)],
    alive: &[bool],
    rng: &mut ChaCha8Rng,
) -> usize {
    let total: f64 = candidates
        .iter()
        .zip(alive)
        .filter(|(_, &a)| a)
        .map(|((_, p), _)| *p)
        .sum();
    let first_alive = alive.iter().position(|&a| a).expect("an alive candidate");
    if total <= 0.0 {
        return first_alive;
    }
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut chosen = first_alive;
    for (i, ((_, p), &a)) in candidates.iter().zip(alive).enumerate() {
        if !a {
            continue;
        }
        acc += p;
        chosen = i;
        if u < acc {
            break;
        }
    }
    chosen
}

/// One SGRS decoding step. `logits` are the next-token logits for the
/// position `context.len()`; `scorer(context, candidate)` returns the
/// candidate's saliency (injectable so tests can script it).
#[allow(clippy::too_many_arguments)]
pub fn sgrs_step<F>(
    context: &[usize],
    logits: &[f64],
    history: &mut SaliencyHistory,
    cfg: &SGRSConfig,
    score_cfg: &SaliencyScoreConfig,
    rng: &mut ChaCha8Rng,
    mut scorer: F,
) -> Result<(usize, DecodeStepTrace)>
where
    F: FnMut(&[usize], usize) -> Result<Option<f64>>,
{
    let p = context.len();
    let candidates = top_k_candidates(logits, cfg.top_k, cfg.temperature);
    let k = candidates.len();
    let mut traces: Vec<CandidateTrace> = candidates
        .iter()
        .map(|&(token, prob)| CandidateTrace {
            token,
            prob,
            saliency: None,
            draw_round: None,
        })
        .collect();

    let j_empty = score_cfg.layout.output_positions(p).is_empty();
    if j_empty {
        let mut alive = vec![true; k];
        let idx = draw_candidate(&candidates, &alive, rng);
        alive[idx] = false;
        traces[idx].draw_round = Some(1);
        let token = candidates[idx].0;
        return Ok((
            token,
            DecodeStepTrace {
                position: p,
                tau: None,
                candidates: traces,
                accepted: token,
                accepted_via: AcceptedVia::NoHistory,
                rejections: 0,
            },
        ));
    }

    let tau = adaptive_threshold(history, cfg.alpha, cfg.window, p);
    let mut alive = vec![true; k];
    let mut scores: Vec<Option<f64>> = vec![None; k];
    let mut rejections = 0usize;

    for round in 1..=cfg.max_rounds {
        if !alive.iter().any(|&a| a) {
            break;
        }
        let idx = draw_candidate(&candidates, &alive, rng);
        alive[idx] = false;
        traces[idx].draw_round = Some(round);
        let token = candidates[idx].0;
        let s = scorer(context, token)?.unwrap_or(0.0);
        scores[idx] = Some(s);
        traces[idx].saliency = Some(s);

        let (accept, via) = match tau {
            None => (true, AcceptedVia::NoHistory),
            Some(t) if s >= t => (true, AcceptedVia::Threshold),
            Some(_) => (false, AcceptedVia::Threshold),
        };
        if accept {
            history.push(p, s);
            return Ok((
                token,
                DecodeStepTrace {
                    position: p,
                    tau,
                    candidates: traces,
                    accepted: token,
                    accepted_via: via,
                    rejections,
                },
            ));
        }
        rejections += 1;
    }

    // Fallback: highest saliency over the original candidate set, scoring
    // whatever was never drawn; ties go to the lowest token id.
    for idx in 0..k {
        if scores[idx].is_none() {
            let token = candidates[idx].0;
            let s = scorer(context, token)?.unwrap_or(0.0);
            scores[idx] = Some(s);
            traces[idx].saliency = Some(s);
        }
    }
    let mut best = 0usize;
    for idx in 1..k {
        let (s_best, t_best) = (scores[best].unwrap(), candidates[best].0);
        let (s_idx, t_idx) = (scores[idx].unwrap(), candidates[idx].0);
        if s_idx > s_best || (s_idx == s_best && t_idx < t_best) {
            best = idx;
        }
    }
    let token = candidates[best].0;
    if cfg.history_on_fallback {
        history.push(p, scores[best].unwrap());
    }
    Ok((
        token,
        DecodeStepTrace {
            position: p,
            tau,
            candidates: traces,
            accepted: token,
            accepted_via: AcceptedVia::Fallback,
            rejections,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    Baseline,
    Sgrs,
    Locore,
    SgrsLocore,
}

impl DecodeMode {
    pub fn uses_sgrs(self) -> bool {
        matches!(self, DecodeMode::Sgrs | DecodeMode::SgrsLocore)
    }

    pub fn uses_locore(self) -> bool {
        matches!(self, DecodeMode::Locore | DecodeMode::SgrsLocore)
    }

    pub fn name(self) -> &'static str {
        match self {
            DecodeMode::Baseline => "baseline",
            DecodeMode::Sgrs => "sgrs",
            DecodeMode::Locore => "locore",
            DecodeMode::SgrsLocore => "sgrs+locore",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "baseline" => Some(DecodeMode::Baseline),
            "sgrs" => Some(DecodeMode::Sgrs),
            "locore" => Some(DecodeMode::Locore),
            "sgrs+locore" | "sgrs_locore" => Some(DecodeMode::SgrsLocore),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LatencyReport {
    pub mode: String,
    pub tokens: usize,
    pub total_ms: f64,
    pub ms_per_token: f64,
}

#[derive(Debug)]
pub struct DecodeOutcome {
    /// Generated tokens (prompt excluded; includes the end symbol when
    /// one was emitted).
    pub tokens: Vec<usize>,
    pub traces: Vec<DecodeStepTrace>,
    pub latency: LatencyReport,
}

#[derive(Debug, Clone)]
pub struct DecodeParams {
    pub mode: DecodeMode,
    pub sgrs: SGRSConfig,
    pub locore: LocoREConfig,
    pub score_cfg: SaliencyScoreConfig,
    pub agg_mode: AggregationMode,
    pub max_new_tokens: usize,
    pub eos_token: Option<usize>,
    pub seed: u64,
    /// Cached fast path; honored for baseline/locore modes only.
    pub use_cache: bool,
    /// Static attention column scale (decay intervention), applied in
    /// every forward of this decode.
    pub col_scale: Option<crate::model::ColScale>,
}

fn position_rng(seed: u64, position: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(
        seed ^ (position as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
    )
}

/// Autoregressive decode in one of the four modes.
pub fn decode(model: &Model, prompt: &[usize], params: &DecodeParams) -> Result<DecodeOutcome> {
    let start = Instant::now();
    let layout = params.score_cfg.layout;
    let use_cache = params.use_cache && !params.mode.uses_sgrs();
    let max_len = model.config().max_seq_len;

    let mut tokens: Vec<usize> = prompt.to_vec();
    let mut generated: Vec<usize> = Vec::new();
    let mut traces: Vec<DecodeStepTrace> = Vec::new();
    let mut history = SaliencyHistory::new();

    let mut session: Option<DecodeSession> = if use_cache {
        Some(model.decode_session(params.col_scale))
    } else {
        None
    };

    // Next-token logits at the current final row.
    let step_gains = |q: usize| -> Option<RowGain> {
        if params.mode.uses_locore() {
            Some(row_gain(&params.locore, &layout, q))
        } else {
            None
        }
    };

    let mut logits: Vec<f64> = if let Some(sess) = session.as_mut() {
        let mut last = Vec::new();
        for (i, &t) in prompt.iter().enumerate() {
            let gains = if i + 1 == prompt.len() { step_gains(i) } else { None };
            last = sess.push(t, gains.as_ref())?;
        }
        last
    } else {
        full_forward_logits(model, &tokens, step_gains(tokens.len() - 1), params.col_scale)?
    };

    for _ in 0..params.max_new_tokens {
        let p = tokens.len();
        if p + 1 >= max_len {
            break;
        }
        let mut rng = position_rng(params.seed, p);

        let token = if params.mode.uses_sgrs() {
            let scorer_gains = |cand_pos: usize| -> Option<RowGain> {
                if params.sgrs.score_with_gains && params.mode.uses_locore() {
                    Some(row_gain(&params.locore, &layout, cand_pos))
                } else {
                    None
                }
            };
            let (token, trace) = sgrs_step(
                &tokens,
                &logits,
                &mut history,
                &params.sgrs,
                &params.score_cfg,
                &mut rng,
                |ctx, cand| {
                    score_candidate(
                        model,
                        ctx,
                        cand,
                        &params.score_cfg,
                        params.agg_mode,
                        scorer_gains(ctx.len()),
                    )
                },
            )?;
            traces.push(trace);
            token
        } else {
            let candidates =
                top_k_candidates(&logits, params.sgrs.top_k, params.sgrs.temperature);
            let alive = vec![true; candidates.len()];
            let idx = draw_candidate(&candidates, &alive, &mut rng);
            candidates[idx].0
        };

        tokens.push(token);
        generated.push(token);
        if params.eos_token == Some(token) {
            break;
        }
        if generated.len() == params.max_new_tokens {
            break;
        }

        let q = tokens.len() - 1;
        logits = if let Some(sess) = session.as_mut() {
            sess.push(token, step_gains(q).as_ref())?
        } else {
            full_forward_logits(model, &tokens, step_gains(q), params.col_scale)?
        };
    }

    let total_ms = start.elapsed().as_secs_f64() * 1e3;
    let count = generated.len();
    Ok(DecodeOutcome {
        tokens: generated,
        traces,
        latency: LatencyReport {
            mode: params.mode.name().to_string(),
            tokens: count,
            total_ms,
            ms_per_token: total_ms / count.max(1) as f64,
        },
    })
}

fn full_forward_logits(
    model: &Model,
    tokens: &[usize],
    gains: Option<RowGain>,
    col_scale: Option<crate::model::ColScale>,
) -> Result<Vec<f64>> {
    let mods = ForwardMods {
        row_gain: gains,
        col_scale,
        ..Default::default()
    };
    let pass = model.forward_with(tokens, &mods)?;
    Ok(pass.last_logits().to_vec())
}

/// One JSON object per step.
pub fn write_traces_jsonl(
    traces: &[DecodeStepTrace],
    header: Option<&serde_json::Value>,
    path: &std::path::Path,
) -> Result<()> {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(&serde_json::to_string(h)?);
        out.push('\n');
    }
    for t in traces {
        out.push_str(&serde_json::to_string(t)?);
        out.push('\n');
    }
    crate::saliency::write_atomic(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TokenLayout;

    fn score_cfg(layout: TokenLayout) -> SaliencyScoreConfig {
        SaliencyScoreConfig {
            target_layers: vec![1],
            layout,
            j_mode: crate::saliency::JMode::FullHistory,
        }
    }

    #[test]
    fn threshold_direct_example() {
        let mut h = SaliencyHistory::new();
        h.push(10, 0.5);
        h.push(11, 0.3);
        let tau = adaptive_threshold(&h, 0.6, 2, 12).unwrap();
        assert!((tau - 0.24).abs() < 1e-12);
    }

    #[test]
    fn threshold_alpha_zero() {
        let mut h = SaliencyHistory::new();
        h.push(10, 0.5);
        let tau = adaptive_threshold(&h, 0.0, 5, 12).unwrap();
        assert_eq!(tau, 0.0);
    }

    #[test]
    fn threshold_empty_history_is_sentinel() {
        let h = SaliencyHistory::new();
        assert_eq!(adaptive_threshold(&h, 0.6, 5, 12), None);
    }

    #[test]
    fn threshold_ignores_entries_outside_window() {
        let mut a = SaliencyHistory::new();
        a.push(2, 0.9);
        a.push(10, 0.5);
        a.push(11, 0.3);
        let mut b = SaliencyHistory::new();
        b.push(2, 0.111); // outside window — must not matter
        b.push(10, 0.5);
        b.push(11, 0.3);
        let ta = adaptive_threshold(&a, 0.6, 2, 12);
        let tb = adaptive_threshold(&b, 0.6, 2, 12);
        assert_eq!(ta, tb);
    }

    #[test]
    fn top_k_orders_by_prob_then_id() {
        let logits = [0.0, 2.0, 2.0, -1.0];
        let c = top_k_candidates(&logits, 3, 1.0);
        assert_eq!(c[0].0, 1); // tie with 2 broken toward lower id
        assert_eq!(c[1].0, 2);
        assert_eq!(c[2].0, 0);
    }

    #[test]
    fn top_k_zero_temperature_is_argmax() {
        let logits = [0.0, 3.0, 2.0];
        let c = top_k_candidates(&logits, 2, 0.0);
        assert_eq!(c[0], (1, 1.0));
        assert_eq!(c[1].1, 0.0);
    }

    /// Scripted-oracle example: scores [0.1, 0.5, 0.2] by candidate order,
    /// tau = 0.4, sampling order [0, 2, 1] forced via probabilities, R = 3.
    #[test]
    fn scripted_rejection_accepts_third_draw() {
        let layout = TokenLayout::new(1, 1, 0);
        let cfg = SGRSConfig {
            top_k: 3,
            max_rounds: 3,
            alpha: 1.0,
            window: 10,
            temperature: 1.0,
            history_on_fallback: true,
            score_with_gains: false,
        };
        // Logits make token 0 overwhelmingly likely, then token 2, then 1,
        // so sampling-without-replacement draws [0, 2, 1] with near
        // certainty under any rng.
        let logits = vec![50.0, 10.0, 30.0];
        let mut history = SaliencyHistory::new();
        history.push(4, 0.4); // tau = 1.0 * 0.4
        let scores = [0.1, 0.5, 0.2];
        let mut rng = position_rng(7, 5);
        let context: Vec<usize> = (0..5).map(|_| 0).collect();
        let (token, trace) = sgrs_step(
            &context,
            &logits,
            &mut history,
            &cfg,
            &score_cfg(layout),
            &mut rng,
            |_, cand| Ok(Some(scores[cand])),
        )
        .unwrap();
        assert_eq!(token, 1);
        assert_eq!(trace.accepted_via, AcceptedVia::Threshold);
        assert_eq!(trace.rejections, 2);
        let drawn: Vec<(usize, usize)> = trace
            .candidates
            .iter()
            .filter_map(|c| c.draw_round.map(|r| (r, c.token)))
            .collect();
        let mut order = drawn.clone();
        order.sort();
        assert_eq!(order, vec![(1, 0), (2, 2), (3, 1)]);
        // Accepted saliency entered the history.
        assert_eq!(history.entries().last(), Some(&(5, 0.5)));
    }

    #[test]
    fn single_rejected_candidate_falls_back_to_it() {
        let layout = TokenLayout::new(1, 1, 0);
        let cfg = SGRSConfig {
            top_k: 1,
            max_rounds: 1,
            alpha: 1.0,
            ..Default::default()
        };
        let logits = vec![0.0, 5.0, 0.0];
        let mut history = SaliencyHistory::new();
        history.push(4, 0.9); // tau = 0.9, candidate scores 0.1 -> reject
        let mut rng = position_rng(3, 5);
        let context = vec![0usize; 5];
        let (token, trace) = sgrs_step(
            &context,
            &logits,
            &mut history,
            &cfg,
            &score_cfg(layout),
            &mut rng,
            |_, _| Ok(Some(0.1)),
        )
        .unwrap();
        assert_eq!(token, 1);
        assert_eq!(trace.accepted_via, AcceptedVia::Fallback);
        assert_eq!(trace.rejections, 1);
    }

    #[test]
    fn first_output_token_accepts_without_scoring() {
        let layout = TokenLayout::new(1, 1, 0); // output_start = 2
        let cfg = SGRSConfig::default();
        let logits = vec![0.0, 9.0, 0.0];
        let mut history = SaliencyHistory::new();
        let mut rng = position_rng(3, 2);
        let context = vec![0usize; 2]; // p = 2 == output_start -> J empty
        let mut scored = 0usize;
        let (_, trace) = sgrs_step(
            &context,
            &logits,
            &mut history,
            &cfg,
            &score_cfg(layout),
            &mut rng,
            |_, _| {
                scored += 1;
                Ok(Some(0.5))
            },
        )
        .unwrap();
        assert_eq!(scored, 0);
        assert_eq!(trace.accepted_via, AcceptedVia::NoHistory);
        assert!(history.entries().is_empty());
    }

    #[test]
    fn empty_window_accepts_first_draw_and_appends() {
        let layout = TokenLayout::new(1, 1, 0); // output_start = 2
        let cfg = SGRSConfig::default();
        let logits = vec![0.0, 9.0, 0.0];
        let mut history = SaliencyHistory::new();
        let mut rng = position_rng(3, 3);
        let context = vec![0usize; 3]; // p = 3, J = {2}, history empty
        let (_, trace) = sgrs_step(
            &context,
            &logits,
            &mut history,
            &cfg,
            &score_cfg(layout),
            &mut rng,
            |_, _| Ok(Some(0.123)),
        )
        .unwrap();
        assert_eq!(trace.accepted_via, AcceptedVia::NoHistory);
        assert_eq!(trace.tau, None);
        assert_eq!(history.entries(), &[(3, 0.123)]);
    }

    #[test]
    fn strict_history_mode_skips_fallback_appends() {
        let layout = TokenLayout::new(1, 1, 0);
        let cfg = SGRSConfig {
            top_k: 2,
            max_rounds: 2,
            alpha: 1.0,
            history_on_fallback: false,
            ..Default::default()
        };
        let logits = vec![5.0, 4.0, 0.0];
        let mut history = SaliencyHistory::new();
        history.push(4, 0.9);
        let mut rng = position_rng(3, 5);
        let context = vec![0usize; 5];
        let (_, trace) = sgrs_step(
            &context,
            &logits,
            &mut history,
            &cfg,
            &score_cfg(layout),
            &mut rng,
            |_, _| Ok(Some(0.05)),
        )
        .unwrap();
        assert_eq!(trace.accepted_via, AcceptedVia::Fallback);
        assert_eq!(history.entries().len(), 1);
    }

    #[test]
    fn rejections_monotone_in_alpha() {
        let layout = TokenLayout::new(1, 1, 0);
        let logits = vec![3.0, 2.5, 2.0, 1.5, 1.0];
        let scores = [0.3, 0.1, 0.5, 0.2, 0.4];
        let mut prev_rejections = 0usize;
        for (i, alpha) in [0.0, 0.25, 0.5, 0.75, 1.0, 1.5].into_iter().enumerate() {
            let cfg = SGRSConfig {
                top_k: 5,
                max_rounds: 5,
                alpha,
                ..Default::default()
            };
            let mut history = SaliencyHistory::new();
            history.push(4, 0.5);
            let mut rng = position_rng(99, 5); // same draws for every alpha
            let context = vec![0usize; 5];
            let (_, trace) = sgrs_step(
                &context,
                &logits,
                &mut history,
                &cfg,
                &score_cfg(layout),
                &mut rng,
                |_, cand| Ok(Some(scores[cand])),
            )
            .unwrap();
            if i > 0 {
                assert!(
                    trace.rejections >= prev_rejections,
                    "alpha {alpha}: {} < {prev_rejections}",
                    trace.rejections
                );
            }
            prev_rejections = trace.rejections;
        }
    }

    #[test]
    fn threshold_acceptance_soundness() {
        // Every threshold-accepted trace satisfies score >= tau.
        let layout = TokenLayout::new(1, 1, 0);
        for seed in 0..20u64 {
            let cfg = SGRSConfig {
                top_k: 4,
                max_rounds: 4,
                alpha: 0.9,
                ..Default::default()
            };
            let logits = vec![2.0, 1.8, 1.6, 1.4, 0.0];
            let mut history = SaliencyHistory::new();
            history.push(4, 0.35);
            let mut rng = position_rng(seed, 5);
            let context = vec![0usize; 5];
            let scores = [0.05, 0.31, 0.33, 0.6, 0.0];
            let (_, trace) = sgrs_step(
                &context,
                &logits,
                &mut history,
                &cfg,
                &score_cfg(layout),
                &mut rng,
                |_, cand| Ok(Some(scores[cand])),
            )
            .unwrap();
            if trace.accepted_via == AcceptedVia::Threshold {
                let acc = trace
                    .candidates
                    .iter()
                    .find(|c| c.token == trace.accepted)
                    .unwrap();
                assert!(acc.saliency.unwrap() >= trace.tau.unwrap());
            }
        }
    }
}
