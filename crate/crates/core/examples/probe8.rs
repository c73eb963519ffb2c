// Per-layer diagnostics on the full-pool-guess model:
// (1) emitted-token class means per layer (prev-edge and full-J),
// (2) within-guess-position candidate ranking per layer.

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
    let set = gen_corpus(3003, 250, 2);
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

    let per_layer: Vec<Vec<usize>> =
        vec![vec![0], vec![1], vec![2], vec![3], vec![1, 2], vec![2, 3]];
    let j_modes = [JMode::PrevOnly, JMode::FullHistory];

    // class sums [jmode][layercfg][class] -> (sum, n)
    let mut sums = vec![vec![[(0.0f64, 0usize); 2]; per_layer.len()]; 2];

    for (sample, out) in set.iter().zip(&outs).take(150) {
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
            let class = usize::from(!sample.gold_set.contains(&tok)); // 1 = halluc
            for (ji, jm) in j_modes.iter().enumerate() {
                for (li, layers) in per_layer.iter().enumerate() {
                    let cfg = SaliencyScoreConfig {
                        target_layers: layers.clone(),
                        layout,
                        j_mode: *jm,
                    };
                    if let Some(s) = candidate_score(&stack, &cfg, p).unwrap() {
                        sums[ji][li][class].0 += s;
                        sums[ji][li][class].1 += 1;
                    }
                }
            }
        }
    }
    for (ji, jname) in ["prev", "fullJ"].iter().enumerate() {
        for (li, layers) in per_layer.iter().enumerate() {
            let (cs, cn) = sums[ji][li][0];
            let (hs, hn) = sums[ji][li][1];
            println!(
                "{jname} L={layers:?}: correct {:.4} (n={cn}) halluc {:.4} (n={hn}) ratio {:.2}",
                cs / cn.max(1) as f64,
                hs / hn.max(1) as f64,
                (cs / cn.max(1) as f64) / (hs / hn.max(1) as f64).max(1e-9)
            );
        }
    }

    // Within-guess-position ranking: the occluded final step.
    let mut rank = vec![vec![(0usize, 0usize); per_layer.len()]; 2]; // [jmode][layers] (argmax-in hits, positions)
    let mut in_out_means = vec![vec![[(0.0f64, 0usize); 2]; per_layer.len()]; 2];
    for (sample, out) in set.iter().zip(&outs) {
        if !sample.occluded.last().copied().unwrap_or(false) {
            continue;
        }
        let guess_idx = sample.scene.len() - 1; // walk index of the hidden node
        if guess_idx >= out.tokens.len() {
            continue;
        }
        let mut ctx = sample.tokens.clone();
        ctx.extend_from_slice(&out.tokens[..guess_idx]);
        let pass = model.forward(&ctx).unwrap();
        let cands = top_k_candidates(pass.last_logits(), 5, 1.0);
        let n_in = cands
            .iter()
            .filter(|&&(t, _)| sample.gold_set.contains(&t))
            .count();
        if n_in == 0 || n_in == cands.len() {
            continue;
        }
        let p = ctx.len();
        let mut best = vec![vec![(f64::MIN, false); per_layer.len()]; 2];
        for &(cand, _) in &cands {
            let mut seq = ctx.clone();
            seq.push(cand);
            let mut cpass = model.forward(&seq).unwrap();
            model.backward_attention(&mut cpass, p, cand).unwrap();
            let stack =
                SaliencyStack::from_tape(cpass.tape(), AggregationMode::MainText, 0).unwrap();
            let in_scene = sample.gold_set.contains(&cand);
            for (ji, jm) in j_modes.iter().enumerate() {
                for (li, layers) in per_layer.iter().enumerate() {
                    let cfg = SaliencyScoreConfig {
                        target_layers: layers.clone(),
                        layout,
                        j_mode: *jm,
                    };
                    let s = candidate_score(&stack, &cfg, p).unwrap().unwrap_or(0.0);
                    let slot = &mut in_out_means[ji][li][usize::from(!in_scene)];
                    slot.0 += s;
                    slot.1 += 1;
                    if s > best[ji][li].0 {
                        best[ji][li] = (s, in_scene);
                    }
                }
            }
        }
        for ji in 0..2 {
            for li in 0..per_layer.len() {
                rank[ji][li].1 += 1;
                if best[ji][li].1 {
                    rank[ji][li].0 += 1;
                }
            }
        }
    }
    println!("guess-position candidate ranking:");
    for (ji, jname) in ["prev", "fullJ"].iter().enumerate() {
        for (li, layers) in per_layer.iter().enumerate() {
            let (hits, n) = rank[ji][li];
            let (is, inn) = in_out_means[ji][li][0];
            let (os, on) = in_out_means[ji][li][1];
            println!(
                "{jname} L={layers:?}: argmax-in {:.1}% ({n} pos) | in {:.4} out {:.4}",
                100.0 * hits as f64 / n.max(1) as f64,
                is / inn.max(1) as f64,
                os / on.max(1) as f64,
            );
        }
    }
}
