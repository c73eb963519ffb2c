// Step-trace autopsy of the rejection sampler: where do rejections land,
// what gets accepted instead, split by slot visibility and section.

use nanosal::harness::{corpus, decode_corpus, gen_corpus};
use nanosal::locore::LocoREConfig;
use nanosal::model::Model;
use nanosal::saliency::{AggregationMode, SaliencyScoreConfig};
use nanosal::sgrs::{AcceptedVia, DecodeMode, DecodeParams, SGRSConfig};

fn main() {
    let model = Model::load(std::path::Path::new("/tmp/explore_ref.nmdl")).unwrap();
    let layout = corpus::task_layout();
    let cfg = SaliencyScoreConfig::upper_half(4, layout);
    let set = gen_corpus(3003, 120, 2);
    let params = DecodeParams {
        mode: DecodeMode::Sgrs,
        sgrs: SGRSConfig::default(),
        locore: LocoREConfig::default(),
        score_cfg: cfg.clone(),
        agg_mode: AggregationMode::MainText,
        max_new_tokens: 12,
        eos_token: Some(corpus::EOS),
        seed: 0,
        use_cache: false,
        col_scale: None,
    };
    let outs = decode_corpus(&model, &set, &params, 42, 2).unwrap();

    // (events, rejected_in_scene, accepted_out_after_reject) per via kind
    let mut via_counts = std::collections::BTreeMap::new();
    let mut first_draw_in = 0usize;
    let mut first_draw_out = 0usize;
    let mut flips_good_to_bad = 0usize;
    let mut flips_bad_to_good = 0usize;
    let mut steps = 0usize;
    let mut rejections = 0usize;

    for (sample, out) in set.iter().zip(&outs) {
        for tr in &out.traces {
            steps += 1;
            rejections += tr.rejections;
            let via = format!("{:?}", tr.accepted_via);
            let e = via_counts.entry(via).or_insert((0usize, 0usize));
            e.0 += 1;
            if sample.gold_set.contains(&tr.accepted) || !corpus::is_content(tr.accepted) {
                e.1 += 1;
            }
            // What did round 1 draw, and what was finally accepted?
            let r1 = tr
                .candidates
                .iter()
                .find(|c| c.draw_round == Some(1))
                .map(|c| c.token);
            if let Some(first) = r1 {
                let first_ok =
                    sample.gold_set.contains(&first) || !corpus::is_content(first);
                let final_ok = sample.gold_set.contains(&tr.accepted)
                    || !corpus::is_content(tr.accepted);
                if first_ok {
                    first_draw_in += 1;
                } else {
                    first_draw_out += 1;
                }
                if tr.accepted != first {
                    if first_ok && !final_ok {
                        flips_good_to_bad += 1;
                    }
                    if !first_ok && final_ok {
                        flips_bad_to_good += 1;
                    }
                }
            }
        }
    }

    println!("steps {steps} rejections {rejections}");
    for (via, (n, ok)) in &via_counts {
        println!(
            "{via}: {n} accepts, {:.1}% grounded-or-neutral",
            100.0 * *ok as f64 / *n as f64
        );
    }
    println!(
        "round-1 draw grounded: {:.1}% ({} / {})",
        100.0 * first_draw_in as f64 / (first_draw_in + first_draw_out) as f64,
        first_draw_in,
        first_draw_in + first_draw_out
    );
    println!("flips good->bad {flips_good_to_bad}, bad->good {flips_bad_to_good}");
}
