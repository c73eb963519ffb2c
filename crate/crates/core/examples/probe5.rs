// Grid search over the scoring J boundary, target layers, and history
// window: criterion-9 margin per configuration.

use nanosal::harness::{corpus, corpus_metrics, for_each_sample, gen_corpus, sample_seed};
use nanosal::locore::LocoREConfig;
use nanosal::model::Model;
use nanosal::saliency::{AggregationMode, JMode, SaliencyScoreConfig};
use nanosal::sgrs::{decode, DecodeMode, DecodeParams, SGRSConfig};

fn run(
    model: &Model,
    set: &[nanosal::harness::SyntheticSample],
    base: &DecodeParams,
    mode: DecodeMode,
    alpha: f64,
    beta: f64,
) -> (f64, f64, usize) {
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
    let rejections: usize = results
        .iter()
        .flat_map(|r| r.traces.iter())
        .map(|t| t.rejections)
        .sum();
    (m.halluc_rate, m.recall, rejections)
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
    let (h0, r0, _) = run(&model, &set, &base, DecodeMode::Baseline, 0.0, 0.0);
    println!("baseline: halluc {h0:.2}% recall {r0:.1}");

    for layers in [vec![1usize, 2], vec![0usize, 1, 2, 3]] {
        for window in [2usize, 3, 10] {
            for strict in [false, true] {
                let mut b = base.clone();
                b.score_cfg = SaliencyScoreConfig {
                    target_layers: layers.clone(),
                    layout,
                    j_mode: JMode::PrevOnly,
                };
                b.sgrs.window = window;
                b.sgrs.history_on_fallback = !strict;
                let (h, r, rej) =
                    run(&model, &set, &b, DecodeMode::SgrsLocore, 0.6, 0.15);
                let rel = 100.0 * (h0 - h) / h0;
                println!(
                    "prev L={layers:?} W={window:2} strict={strict}: halluc {h:6.2}% ({rel:+5.1}% rel) recall {r:5.1} rej {rej}"
                );
            }
        }
    }
}
