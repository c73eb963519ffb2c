// Scratch driver for sizing the reference training run and sanity-checking
// the directional analyses before they are frozen into the acceptance
// suite.

use nanosal::harness::{
    self, corpus, decode_corpus, gen_corpus, label_tokens, stats_saliency, token_accuracy,
};
use nanosal::locore::LocoREConfig;
use nanosal::model::train::{train_toy, TrainConfig};
use nanosal::model::{Model, ModelConfig};
use nanosal::saliency::{AggregationMode, SaliencyScoreConfig};
use nanosal::sgrs::{DecodeMode, DecodeParams, SGRSConfig};

fn base_params(mode: DecodeMode) -> DecodeParams {
    let layout = corpus::task_layout();
    DecodeParams {
        mode,
        sgrs: SGRSConfig::default(),
        locore: LocoREConfig::default(),
        score_cfg: SaliencyScoreConfig::upper_half(4, layout),
        agg_mode: AggregationMode::MainText,
        max_new_tokens: 12,
        eos_token: Some(corpus::EOS),
        seed: 0,
        use_cache: true,
        col_scale: None,
    }
}

fn greedy_params() -> DecodeParams {
    let mut p = base_params(DecodeMode::Baseline);
    p.sgrs.temperature = 0.0;
    p.sgrs.top_k = 1;
    p
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map_or(12, |s| s.parse().unwrap());
    let n_train: usize = args.get(2).map_or(4000, |s| s.parse().unwrap());
    let lr: f64 = args.get(3).map_or(1e-3, |s| s.parse().unwrap());

    let t0 = std::time::Instant::now();
    let train_set = gen_corpus(1001, n_train, 2);
    let holdout = gen_corpus(2002, 300, 2);
    let stats_set = gen_corpus(3003, 500, 2);

    let mut model = Model::init(ModelConfig::toy()).unwrap();
    let examples = harness::training_examples(&train_set);
    let stats = train_toy(
        &mut model,
        &examples,
        &TrainConfig {
            epochs,
            learning_rate: lr,
            log_every: Some(1),
            ..Default::default()
        },
    )
    .unwrap();
    println!(
        "train: initial {:.4} final {:.4} ({:.1}s)",
        stats.initial_loss,
        stats.final_loss,
        t0.elapsed().as_secs_f64()
    );

    // Held-out greedy accuracy.
    let outs = decode_corpus(&model, &holdout, &greedy_params(), 42, 2).unwrap();
    let outputs: Vec<Vec<usize>> = outs.iter().map(|o| o.tokens.clone()).collect();
    println!("holdout greedy accuracy: {:.3}", token_accuracy(&holdout, &outputs));

    // Baseline sampling metrics.
    let outs = decode_corpus(&model, &stats_set, &base_params(DecodeMode::Baseline), 42, 2).unwrap();
    let outputs: Vec<Vec<usize>> = outs.iter().map(|o| o.tokens.clone()).collect();
    let m = harness::corpus_metrics(&stats_set, &outputs);
    println!(
        "baseline sampling: halluc_rate {:.2}% recall {:.1} content {} halluc {}",
        m.halluc_rate, m.recall, m.content_tokens, m.hallucinated_tokens
    );

    // Label-conditioned saliency.
    let t1 = std::time::Instant::now();
    let score_cfg = SaliencyScoreConfig::upper_half(4, corpus::task_layout());
    let mut all_labels = Vec::new();
    for (sample, output) in stats_set.iter().zip(&outputs) {
        let labels =
            label_tokens(&model, sample, output, &score_cfg, AggregationMode::MainText).unwrap();
        all_labels.extend(labels);
    }
    println!("labeling took {:.1}s", t1.elapsed().as_secs_f64());
    match stats_saliency(&all_labels) {
        Ok(r) => {
            println!(
                "saliency: correct {:.4}±{:.4} (n={}) halluc {:.4}±{:.4} (n={}) t {:.2} p {:.3e}",
                r.correct.mean,
                r.correct.std,
                r.correct.count,
                r.hallucinated.mean,
                r.hallucinated.std,
                r.hallucinated.count,
                r.welch_t,
                r.welch_p
            );
            println!("spearman(bin, rate) = {:?}", r.spearman_rho);
            for (i, b) in r.bins.iter().enumerate() {
                println!(
                    "  bin {i}: [{:.4},{:.4}) n={} rate={:?}",
                    b.lo, b.hi, b.count, b.rate
                );
            }
            println!(
                "high-saliency hallucinations: {:.1}%",
                r.high_saliency_hallucination_pct
            );
        }
        Err(e) => println!("stats error: {e}"),
    }

    // SGRS + LocoRE effect on a subset.
    let sub: Vec<_> = stats_set.iter().take(150).cloned().collect();
    for (mode, alpha, beta) in [
        (DecodeMode::Baseline, 0.0, 0.0),
        (DecodeMode::Sgrs, 0.6, 0.0),
        (DecodeMode::Locore, 0.0, 0.15),
        (DecodeMode::SgrsLocore, 0.6, 0.15),
        (DecodeMode::SgrsLocore, 0.6, 1.0),
    ] {
        let t2 = std::time::Instant::now();
        let cell = harness::sweep::run_cell(
            &model,
            &sub,
            &base_params(mode),
            42,
            mode,
            alpha,
            beta,
            2,
        )
        .unwrap();
        println!(
            "cell {:12} a={:.2} b={:.2}: halluc {:.2}% recall {:.1} ms/tok {:.3} ({:.1}s)",
            cell.mode, alpha, beta, cell.halluc_rate, cell.recall, cell.ms_per_token,
            t2.elapsed().as_secs_f64()
        );
    }

    let path = std::path::Path::new("/tmp/explore_ref.nmdl");
    model.save(path).unwrap();
    println!("saved {}", path.display());
}
