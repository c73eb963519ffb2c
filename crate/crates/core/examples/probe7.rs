// Where do hallucinations occur now? Dump decodes and label composition.

use nanosal::harness::{corpus, decode_corpus, gen_corpus, label_tokens, TokenClass};
use nanosal::locore::LocoREConfig;
use nanosal::model::Model;
use nanosal::saliency::{AggregationMode, SaliencyScoreConfig};
use nanosal::sgrs::{DecodeMode, DecodeParams, SGRSConfig};

fn tok_str(t: usize) -> String {
    match t {
        corpus::PAD => "_".into(),
        corpus::EOS => "E".into(),
        corpus::SEP => "|".into(),
        corpus::UNK => "?".into(),
        corpus::QRY => "Q".into(),
        corpus::ANS => ":".into(),
        t if corpus::is_object(t) => format!("o{}", t - corpus::OBJ_BASE),
        t if corpus::is_attribute(t) => format!("a{}", t - corpus::ATTR_BASE),
        t => format!("#{t}"),
    }
}

fn main() {
    let model = Model::load(std::path::Path::new("/tmp/explore_ref.nmdl")).unwrap();
    let layout = corpus::task_layout();
    let cfg = SaliencyScoreConfig::upper_half(4, layout);
    let set = gen_corpus(3003, 300, 2);
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

    // Position-in-output histogram of hallucinated tokens, plus saliency.
    let mut by_pos: std::collections::BTreeMap<usize, (usize, f64)> = Default::default();
    let mut shown = 0;
    for (sample, out) in set.iter().zip(&outs) {
        let labels =
            label_tokens(&model, sample, &out.tokens, &cfg, AggregationMode::MainText).unwrap();
        let has_halluc = labels.iter().any(|l| l.label == TokenClass::Hallucinated);
        if has_halluc && shown < 12 {
            shown += 1;
            let walk: Vec<String> = sample.gold_output.iter().map(|&t| tok_str(t)).collect();
            let got: Vec<String> = out.tokens.iter().map(|&t| tok_str(t)).collect();
            let occ = sample.occluded.last().copied().unwrap_or(false);
            println!(
                "k={} occ={} gold {:?} got {:?}",
                sample.scene.len() - 1,
                occ,
                walk.join(" "),
                got.join(" ")
            );
        }
        for (i, l) in labels.iter().enumerate() {
            if l.label == TokenClass::Hallucinated {
                let e = by_pos.entry(i).or_insert((0, 0.0));
                e.0 += 1;
                e.1 += l.saliency_prev.unwrap_or(0.0);
            }
        }
    }
    println!("hallucinated tokens by output index (count, mean saliency):");
    for (i, (n, s)) in by_pos {
        println!("  idx {i}: n={n} mean_sal {:.4}", s / n as f64);
    }
}
