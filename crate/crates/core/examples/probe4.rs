// End-to-end SGRS cells under alternative scoring configurations, with
// rejection dynamics.

use nanosal::harness::{corpus, corpus_metrics, for_each_sample, gen_corpus, sample_seed};
use nanosal::locore::LocoREConfig;
use nanosal::model::Model;
use nanosal::saliency::{AggregationMode, JMode, SaliencyScoreConfig};
use nanosal::sgrs::{decode, AcceptedVia, DecodeMode, DecodeParams, SGRSConfig};

fn cell(
    model: &Model,
    set: &[nanosal::harness::SyntheticSample],
    base: &DecodeParams,
    mode: DecodeMode,
    alpha: f64,
    beta: f64,
) {
    let mut params = base.clone();
    params.mode = mode;
    params.sgrs.alpha = alpha;
    params.locore.beta = beta;
    let results: Vec<_> = for_each_sample(set, 2, |s| {
        let mut p = params.clone();
        p.seed = sample_seed(42, s.id);
        decode(model, &s.tokens, &p)
    })
    .unwrap();
    let outputs: Vec<Vec<usize>> = results.iter().map(|o| o.tokens.clone()).collect();
    let m = corpus_metrics(set, &outputs);
    let mut rejections = 0usize;
    let mut steps = 0usize;
    let mut fallbacks = 0usize;
    let mut threshold_accepts = 0usize;
    for r in &results {
        for t in &r.traces {
            steps += 1;
            rejections += t.rejections;
            match t.accepted_via {
                AcceptedVia::Fallback => fallbacks += 1,
                AcceptedVia::Threshold => threshold_accepts += 1,
                _ => {}
            }
        }
    }
    println!(
        "  {:12} a={alpha:.2} b={beta:.2}: halluc {:6.2}% recall {:5.1} | rej {rejections}/{steps} fb {fallbacks} thr {threshold_accepts}",
        mode.name(),
        m.halluc_rate,
        m.recall,
    );
}

fn main() {
    let model = Model::load(std::path::Path::new("/tmp/explore_ref.nmdl")).unwrap();
    let layout = corpus::task_layout();
    let set = gen_corpus(3003, 200, 2);

    let gen_layout = layout.with_output_start(layout.prompt_end());
    let variants: Vec<(String, SaliencyScoreConfig, usize)> = vec![
        ("genJ L0123 W10", SaliencyScoreConfig { target_layers: vec![0, 1, 2, 3], layout: gen_layout, j_mode: JMode::FullHistory }, 10),
        ("genJ L0123 W3", SaliencyScoreConfig { target_layers: vec![0, 1, 2, 3], layout: gen_layout, j_mode: JMode::FullHistory }, 3),
        ("genJ L12 W3", SaliencyScoreConfig { target_layers: vec![1, 2], layout: gen_layout, j_mode: JMode::FullHistory }, 3),
        ("formulaJ L12 W3", SaliencyScoreConfig { target_layers: vec![1, 2], layout, j_mode: JMode::FullHistory }, 3),
        ("formulaJ L12 W10", SaliencyScoreConfig { target_layers: vec![1, 2], layout, j_mode: JMode::FullHistory }, 10),
    ]
    .into_iter()
    .map(|(n, c, w)| (n.to_string(), c, w))
    .collect();

    for (name, score_cfg, window) in variants {
        let base = DecodeParams {
            mode: DecodeMode::Baseline,
            sgrs: SGRSConfig {
                window,
                ..Default::default()
            },
            locore: LocoREConfig::default(),
            score_cfg,
            agg_mode: AggregationMode::MainText,
            max_new_tokens: 12,
            eos_token: Some(corpus::EOS),
            seed: 0,
            use_cache: true,
            col_scale: None,
        };
        println!("== {name} ==");
        cell(&model, &set, &base, DecodeMode::Baseline, 0.0, 0.0);
        cell(&model, &set, &base, DecodeMode::Sgrs, 0.6, 0.0);
        cell(&model, &set, &base, DecodeMode::SgrsLocore, 0.6, 0.15);
    }
}
