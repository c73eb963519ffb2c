// (1) Oracle-scored SGRS ceiling: scripted scorer that knows grounding.
// (2) Score distributions at good vs guess states for candidate configs.

use nanosal::harness::{corpus, corpus_metrics, for_each_sample, gen_corpus, sample_seed};
use nanosal::locore::LocoREConfig;
use nanosal::model::Model;
use nanosal::saliency::{AggregationMode, JMode, SaliencyScoreConfig};
use nanosal::sgrs::{
    decode, sgrs_step, top_k_candidates, DecodeMode, DecodeParams, SaliencyHistory, SGRSConfig,
};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Decode with a scripted scorer: grounded candidates score 1, junk 0.
fn oracle_decode(
    model: &Model,
    sample: &nanosal::harness::SyntheticSample,
    params: &DecodeParams,
) -> Vec<usize> {
    let mut tokens = sample.tokens.clone();
    let mut generated = Vec::new();
    let mut history = SaliencyHistory::new();
    let max_len = model.config().max_seq_len;
    let mut logits = model.forward(&tokens).unwrap().last_logits().to_vec();
    for _ in 0..params.max_new_tokens {
        let p = tokens.len();
        if p + 1 >= max_len {
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(
            params.seed ^ (p as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
        );
        let (token, _) = sgrs_step(
            &tokens,
            &logits,
            &mut history,
            &params.sgrs,
            &params.score_cfg,
            &mut rng,
            |_, cand| {
                Ok(Some(if sample.gold_set.contains(&cand) || !corpus::is_content(cand) {
                    1.0
                } else {
                    0.0
                }))
            },
        )
        .unwrap();
        tokens.push(token);
        generated.push(token);
        if Some(token) == params.eos_token {
            break;
        }
        logits = model.forward(&tokens).unwrap().last_logits().to_vec();
    }
    generated
}

fn main() {
    let model = Model::load(std::path::Path::new("/tmp/explore_ref.nmdl")).unwrap();
    let layout = corpus::task_layout();
    let set = gen_corpus(3003, 150, 2);
    let base = DecodeParams {
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

    // Baseline.
    let outs: Vec<_> = for_each_sample(&set, 2, |s| {
        let mut p = base.clone();
        p.seed = sample_seed(42, s.id);
        decode(model_ref(), &s.tokens, &p)
    })
    .unwrap();
    let outputs: Vec<Vec<usize>> = outs.iter().map(|o| o.tokens.clone()).collect();
    let m0 = corpus_metrics(&set, &outputs);
    println!("baseline: halluc {:.2}% recall {:.1}", m0.halluc_rate, m0.recall);

    // Oracle ceiling.
    let oracle_outputs: Vec<Vec<usize>> = for_each_sample(&set, 2, |s| {
        let mut p = base.clone();
        p.seed = sample_seed(42, s.id);
        Ok(oracle_decode(model_ref(), s, &p))
    })
    .unwrap();
    let m1 = corpus_metrics(&set, &oracle_outputs);
    println!(
        "oracle sgrs: halluc {:.2}% recall {:.1} (ceiling)",
        m1.halluc_rate, m1.recall
    );

    // Score distributions at good vs guess states: the drawn (round-1)
    // candidate's score under each config.
    let gen_layout = layout.with_output_start(layout.prompt_end());
    let configs: Vec<(&str, SaliencyScoreConfig)> = vec![
        ("formulaJ L12", SaliencyScoreConfig { target_layers: vec![1, 2], layout, j_mode: JMode::FullHistory }),
        ("formulaJ L0123", SaliencyScoreConfig { target_layers: vec![0, 1, 2, 3], layout, j_mode: JMode::FullHistory }),
        ("prev L0123", SaliencyScoreConfig { target_layers: vec![0, 1, 2, 3], layout, j_mode: JMode::PrevOnly }),
        ("prev L12", SaliencyScoreConfig { target_layers: vec![1, 2], layout, j_mode: JMode::PrevOnly }),
        ("genJ L0123", SaliencyScoreConfig { target_layers: vec![0, 1, 2, 3], layout: gen_layout, j_mode: JMode::FullHistory }),
    ];
    // Stats: (sum, sumsq, n) for [good][cfg] and [guess][cfg].
    let mut acc = vec![[(0.0f64, 0.0f64, 0usize); 5]; 2];
    let mut done = 0usize;
    'outer: for (sample, out) in set.iter().zip(&outs) {
        // Position kind: guess if the slot being generated is occluded
        // transcript-or-recall of an occluded node.
        let k = sample.scene.len();
        for (idx, &tok) in out.tokens.iter().enumerate() {
            if !corpus::is_content(tok) {
                continue;
            }
            // transcript slots: idx < k+? The walk is positions 0..k of
            // the output; recall positions k+2..; map to node index.
            let node = if idx <= k {
                idx
            } else if idx > k + 1 {
                idx - (k + 2)
            } else {
                continue;
            };
            if node >= sample.occluded.len() {
                continue;
            }
            let state = usize::from(sample.occluded[node]); // 1 = guess
            let mut ctx = sample.tokens.clone();
            ctx.extend_from_slice(&out.tokens[..idx]);
            for (ci, (_, cfg)) in configs.iter().enumerate() {
                let s = nanosal::sgrs::score_candidate(
                    model_ref(),
                    &ctx,
                    tok,
                    cfg,
                    AggregationMode::MainText,
                    None,
                )
                .unwrap()
                .unwrap_or(0.0);
                let slot = &mut acc[state][ci];
                slot.0 += s;
                slot.1 += s * s;
                slot.2 += 1;
            }
            done += 1;
            if done >= 500 {
                break 'outer;
            }
        }
    }
    println!("state-level score distributions (drawn candidate):");
    for (ci, (name, _)) in configs.iter().enumerate() {
        let st = |slot: (f64, f64, usize)| {
            let n = slot.2.max(1) as f64;
            let mean = slot.0 / n;
            let var = (slot.1 / n - mean * mean).max(0.0);
            (mean, var.sqrt(), slot.2)
        };
        let (gm, gs, gn) = st(acc[0][ci]);
        let (bm, bs, bn) = st(acc[1][ci]);
        println!(
            "  {name}: good {gm:.4}±{gs:.4} (n={gn}, cv {:.2}) | guess {bm:.4}±{bs:.4} (n={bn}) | sep {:.2}",
            gs / gm,
            gm / bm.max(1e-12)
        );
    }
}

fn model_ref() -> &'static Model {
    use std::sync::OnceLock;
    static M: OnceLock<Model> = OnceLock::new();
    M.get_or_init(|| Model::load(std::path::Path::new("/tmp/explore_ref.nmdl")).unwrap())
}
