// Sweep target-layer choices: within-position candidate discrimination
// (argmax-in-scene rate) and realized-token prev-edge separation, per
// L_target candidate set.

use nanosal::harness::{corpus, decode_corpus, gen_corpus, TokenClass};
use nanosal::locore::LocoREConfig;
use nanosal::model::Model;
use nanosal::saliency::{
    candidate_score, AggregationMode, JMode, SaliencyScoreConfig, SaliencyStack,
};
use nanosal::sgrs::{top_k_candidates, DecodeMode, DecodeParams, SGRSConfig};

fn main() {
    let model = Model::load(std::path::Path::new("/tmp/explore_ref.nmdl")).unwrap();
    let layout = corpus::task_layout();
    let set = gen_corpus(3003, 150, 2);
    let params = DecodeParams {
        mode: DecodeMode::Baseline,
        sgrs: SGRSConfig::default(),
        locore: LocoREConfig::default(),
        score_cfg: SaliencyScoreConfig::upper_half(4, layout),
        agg_mode: AggregationMode::MainText,
        max_new_tokens: 12,
        eos_token: Some(corpus::EOS),
        seed: 0,
        use_cache: true,
        col_scale: None,
    };
    let outs = decode_corpus(&model, &set, &params, 42, 2).unwrap();

    let targets: Vec<Vec<usize>> = vec![
        vec![0],
        vec![1],
        vec![2],
        vec![3],
        vec![0, 1],
        vec![1, 2],
        vec![2, 3],
        vec![0, 1, 2, 3],
    ];
    let mut cfgs: Vec<SaliencyScoreConfig> = targets
        .iter()
        .map(|t| SaliencyScoreConfig {
            target_layers: t.clone(),
            layout,
            j_mode: JMode::FullHistory,
        })
        .collect();
    // Same layer sets again under the single-predecessor restriction.
    let prev_variants: Vec<SaliencyScoreConfig> = cfgs
        .iter()
        .map(|c| c.clone().with_j_mode(JMode::PrevOnly))
        .collect();
    cfgs.extend(prev_variants);
    // Text-reading J: only generated tokens count as history.
    let gen_layout = layout.with_output_start(layout.prompt_end());
    let gen_variants: Vec<SaliencyScoreConfig> = targets
        .iter()
        .map(|t| SaliencyScoreConfig {
            target_layers: t.clone(),
            layout: gen_layout,
            j_mode: JMode::FullHistory,
        })
        .collect();
    cfgs.extend(gen_variants);
    let names: Vec<String> = targets
        .iter()
        .map(|t| format!("full {t:?}"))
        .chain(targets.iter().map(|t| format!("prev {t:?}")))
        .chain(targets.iter().map(|t| format!("genJ {t:?}")))
        .collect();

    // Candidate-level: argmax-in-scene per target set.
    let mut hits = vec![0usize; cfgs.len()];
    let mut in_means = vec![(0.0f64, 0usize); cfgs.len()];
    let mut out_means = vec![(0.0f64, 0usize); cfgs.len()];
    let mut positions = 0usize;

    'outer: for (sample, out) in set.iter().zip(&outs) {
        for (k, &tok) in out.tokens.iter().enumerate() {
            if !corpus::is_content(tok) {
                continue;
            }
            let mut ctx = sample.tokens.clone();
            ctx.extend_from_slice(&out.tokens[..k]);
            let pass = model.forward(&ctx).unwrap();
            let cands = top_k_candidates(pass.last_logits(), 5, 1.0);
            let n_in = cands
                .iter()
                .filter(|&&(t, _)| sample.gold_set.contains(&t))
                .count();
            if n_in == 0 || n_in == cands.len() {
                continue;
            }
            positions += 1;
            let p = ctx.len();
            let mut best = vec![(f64::MIN, false); cfgs.len()];
            for &(cand, _) in &cands {
                let mut seq = ctx.clone();
                seq.push(cand);
                let mut cpass = model.forward(&seq).unwrap();
                model.backward_attention(&mut cpass, p, cand).unwrap();
                let stack =
                    SaliencyStack::from_tape(cpass.tape(), AggregationMode::MainText, 0)
                        .unwrap();
                let in_scene = sample.gold_set.contains(&cand);
                for (ci, cfg) in cfgs.iter().enumerate() {
                    let s = candidate_score(&stack, cfg, p).unwrap().unwrap_or(0.0);
                    if in_scene {
                        in_means[ci].0 += s;
                        in_means[ci].1 += 1;
                    } else {
                        out_means[ci].0 += s;
                        out_means[ci].1 += 1;
                    }
                    if s > best[ci].0 {
                        best[ci] = (s, in_scene);
                    }
                }
            }
            for (ci, b) in best.iter().enumerate() {
                if b.1 {
                    hits[ci] += 1;
                }
            }
            if positions >= 350 {
                break 'outer;
            }
        }
    }

    println!("candidate level ({positions} positions):");
    for (ci, t) in names.iter().enumerate() {
        println!(
            "  {t}: argmax-in {:.1}% | in-mean {:.4} out-mean {:.4} ratio {:.2}",
            100.0 * hits[ci] as f64 / positions as f64,
            in_means[ci].0 / in_means[ci].1 as f64,
            out_means[ci].0 / out_means[ci].1 as f64,
            (in_means[ci].0 / in_means[ci].1 as f64)
                / (out_means[ci].0 / out_means[ci].1 as f64)
        );
    }

    // Realized-token prev-edge separation per target set.
    let prev_cfgs: Vec<SaliencyScoreConfig> = cfgs
        .iter()
        .map(|c| c.clone().with_j_mode(JMode::PrevOnly))
        .collect();
    let mut cor = vec![(0.0f64, 0usize); cfgs.len()];
    let mut hal = vec![(0.0f64, 0usize); cfgs.len()];
    for (sample, out) in set.iter().zip(&outs).take(120) {
        let mut seq = sample.tokens.clone();
        seq.extend_from_slice(&out.tokens);
        let mut pass = model.forward(&seq).unwrap();
        for (k, &tok) in out.tokens.iter().enumerate() {
            if !corpus::is_content(tok) {
                continue;
            }
            let p = sample.tokens.len() + k;
            model.backward_attention(&mut pass, p, tok).unwrap();
            let stack =
                SaliencyStack::from_tape(pass.tape(), AggregationMode::MainText, 0).unwrap();
            let class = if sample.gold_set.contains(&tok) {
                TokenClass::Correct
            } else {
                TokenClass::Hallucinated
            };
            for (ci, cfg) in prev_cfgs.iter().enumerate() {
                if let Some(s) = candidate_score(&stack, cfg, p).unwrap() {
                    match class {
                        TokenClass::Correct => {
                            cor[ci].0 += s;
                            cor[ci].1 += 1;
                        }
                        TokenClass::Hallucinated => {
                            hal[ci].0 += s;
                            hal[ci].1 += 1;
                        }
                        _ => {}
                    }
                }
            }
        }
    }
    println!("prev-edge (realized tokens):");
    for (ci, t) in targets.iter().enumerate() {
        println!(
            "  L={t:?}: correct {:.4} (n={}) halluc {:.4} (n={}) ratio {:.2}",
            cor[ci].0 / cor[ci].1 as f64,
            cor[ci].1,
            hal[ci].0 / hal[ci].1 as f64,
            hal[ci].1,
            (cor[ci].0 / cor[ci].1 as f64) / (hal[ci].0 / hal[ci].1 as f64)
        );
    }
}
