// Regional breakdown of the candidate row's attention and saliency mass,
// per layer, averaged over in-scene vs out-of-scene candidates at recall
// positions. Shows which slice of the map (if any) separates them.

use nanosal::harness::{corpus, decode_corpus, gen_corpus};
use nanosal::locore::LocoREConfig;
use nanosal::model::Model;
use nanosal::saliency::{AggregationMode, SaliencyScoreConfig, SaliencyStack};
use nanosal::sgrs::{top_k_candidates, DecodeMode, DecodeParams, SGRSConfig};

#[derive(Default, Clone)]
struct Acc {
    att: [f64; 4],
    sal: [f64; 4],
    n: usize,
}

fn regions(p: usize, layout: &nanosal::model::TokenLayout) -> [std::ops::Range<usize>; 4] {
    // sys, img, prompt, output(generated)
    [
        0..layout.sys_len,
        layout.sys_len..layout.sys_len + layout.img_len,
        layout.sys_len + layout.img_len..layout.prompt_end(),
        layout.prompt_end()..p,
    ]
}

fn main() {
    let model = Model::load(std::path::Path::new("/tmp/explore_ref.nmdl")).unwrap();
    let layout = corpus::task_layout();
    let cfg = SaliencyScoreConfig::upper_half(4, layout);
    let set = gen_corpus(3003, 60, 2);
    let params = DecodeParams {
        mode: DecodeMode::Baseline,
        sgrs: SGRSConfig::default(),
        locore: LocoREConfig::default(),
        score_cfg: cfg.clone(),
        agg_mode: AggregationMode::MainText,
        max_new_tokens: 12,
        eos_token: Some(corpus::EOS),
        seed: 0,
        use_cache: true,
        col_scale: None,
    };
    let outs = decode_corpus(&model, &set, &params, 42, 2).unwrap();

    let n_layers = model.config().n_layers;
    // [section][layer][in/out] accumulators
    let mut acc = vec![vec![[Acc::default(), Acc::default()]; n_layers]; 2];

    let mut done = 0usize;
    'outer: for (sample, out) in set.iter().zip(&outs) {
        let mut section = 0usize;
        for (k, &tok) in out.tokens.iter().enumerate() {
            if tok == corpus::SEP {
                section = 1;
                continue;
            }
            if !corpus::is_content(tok) {
                continue;
            }
            let mut ctx = sample.tokens.clone();
            ctx.extend_from_slice(&out.tokens[..k]);
            let pass = model.forward(&ctx).unwrap();
            let cands = top_k_candidates(pass.last_logits(), 5, 1.0);
            let p = ctx.len();
            for &(cand, _) in &cands {
                let mut seq = ctx.clone();
                seq.push(cand);
                let mut cpass = model.forward(&seq).unwrap();
                model.backward_attention(&mut cpass, p, cand).unwrap();
                let stack =
                    SaliencyStack::from_tape(cpass.tape(), AggregationMode::MainText, 0).unwrap();
                let in_scene = sample.gold_set.contains(&cand) as usize;
                for l in 0..n_layers {
                    let sal = stack.layer(l);
                    let slot = &mut acc[section][l][1 - in_scene];
                    for (r, range) in regions(p, &layout).into_iter().enumerate() {
                        for j in range {
                            // attention averaged over heads
                            let mut a = 0.0;
                            for h in 0..model.config().n_heads {
                                a += cpass.tape().attention(l, h).get(p, j);
                            }
                            slot.att[r] += a / model.config().n_heads as f64;
                            slot.sal[r] += sal.get(p, j);
                        }
                    }
                    slot.n += 1;
                }
            }
            done += 1;
            if done >= 120 {
                break 'outer;
            }
        }
    }

    for (sname, sec) in ["transcript", "recall"].iter().zip(&acc) {
        println!("== {sname} ==");
        for (l, pair) in sec.iter().enumerate() {
            for (tag, a) in ["in ", "out"].iter().zip(pair) {
                if a.n == 0 {
                    continue;
                }
                let f = |x: f64| x / a.n as f64;
                println!(
                    "layer {l} {tag}: att sys {:.3} img {:.3} prm {:.3} out {:.3} | sal sys {:.4} img {:.4} prm {:.4} out {:.4}",
                    f(a.att[0]), f(a.att[1]), f(a.att[2]), f(a.att[3]),
                    f(a.sal[0]), f(a.sal[1]), f(a.sal[2]), f(a.sal[3]),
                );
            }
        }
    }
}
