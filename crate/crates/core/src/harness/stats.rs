//! Label-conditioned saliency statistics: class means, the 10-bin
//! hallucination-probability curve, and the correlation measures used by
//! the directional checks.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

use super::label::{TokenClass, TokenLabel};

pub const MIN_CLASS_TOKENS: usize = 30;

#[derive(Debug, Clone, Serialize)]
pub struct ClassStats {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct BinRow {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub hallucinated: usize,
    /// P(hallucinated | bin); absent for empty bins.
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StatsReport {
    pub correct: ClassStats,
    pub hallucinated: ClassStats,
    /// Welch's t statistic for mean(correct) > mean(hallucinated).
    pub welch_t: f64,
    /// One-sided p-value of the above.
    pub welch_p: f64,
    pub bins: Vec<BinRow>,
    /// Spearman rank correlation between bin index and hallucination
    /// rate over non-empty bins.
    pub spearman_rho: Option<f64>,
    /// Share of hallucinated tokens whose saliency clears the 75th
    /// percentile of the correct class (the high-saliency failure mode),
    /// in percent.
    pub high_saliency_hallucination_pct: f64,
    /// Prompt-column saliency means per class, for inspection only.
    pub prompt_saliency_correct: Option<f64>,
    pub prompt_saliency_hallucinated: Option<f64>,
}

fn scored<'a>(
    labels: &'a [TokenLabel],
    class: TokenClass,
) -> impl Iterator<Item = (f64, &'a TokenLabel)> {
    labels
        .iter()
        .filter(move |l| l.label == class)
        .filter_map(|l| l.saliency_prev.map(|s| (s, l)))
}

fn class_stats(values: &[f64]) -> ClassStats {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n.max(1) as f64;
    let var = if n > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    ClassStats {
        mean,
        std: var.sqrt(),
        count: n,
    }
}

/// Welch's unequal-variance t-test, one-sided for mean(a) > mean(b).
/// Returns (t, p).
pub fn welch_one_sided(a: &[f64], b: &[f64]) -> (f64, f64) {
    let sa = class_stats(a);
    let sb = class_stats(b);
    let va = sa.std * sa.std / sa.count as f64;
    let vb = sb.std * sb.std / sb.count as f64;
    let se = (va + vb).sqrt();
    if se == 0.0 {
        // Degenerate: identical constant samples.
        return if sa.mean > sb.mean {
            (f64::INFINITY, 0.0)
        } else {
            (0.0, 1.0)
        };
    }
    let t = (sa.mean - sb.mean) / se;
    let df = (va + vb).powi(2)
        / (va * va / (sa.count as f64 - 1.0) + vb * vb / (sb.count as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("valid dof");
    let p = 1.0 - dist.cdf(t);
    (t, p)
}

/// Linear-interpolation percentile of unsorted data; `q` in [0, 100].
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = (q / 100.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        v[lo]
    } else {
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    }
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

/// Equal-width bins over the observed saliency range.
pub fn bin_analysis(labels: &[TokenLabel], n_bins: usize) -> Result<Vec<BinRow>> {
    let points: Vec<(f64, bool)> = labels
        .iter()
        .filter(|l| l.label != TokenClass::Neutral)
        .filter_map(|l| {
            l.saliency_prev
                .map(|s| (s, l.label == TokenClass::Hallucinated))
        })
        .collect();
    if points.is_empty() {
        return Err(Error::InsufficientData {
            class: "scored content tokens",
            got: 0,
            needed: 1,
        });
    }
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / n_bins as f64 } else { 1.0 };
    let mut bins: Vec<BinRow> = (0..n_bins)
        .map(|b| BinRow {
            lo: lo + b as f64 * width,
            hi: lo + (b + 1) as f64 * width,
            count: 0,
            hallucinated: 0,
            rate: None,
        })
        .collect();
    for (s, is_h) in points {
        let mut b = ((s - lo) / width) as usize;
        if b >= n_bins {
            b = n_bins - 1; // max value lands in the top bin
        }
        bins[b].count += 1;
        if is_h {
            bins[b].hallucinated += 1;
        }
    }
    for b in bins.iter_mut() {
        if b.count > 0 {
            b.rate = Some(b.hallucinated as f64 / b.count as f64);
        }
    }
    Ok(bins)
}

/// Spearman of (bin index, rate) over non-empty bins.
pub fn bin_spearman(bins: &[BinRow]) -> Option<f64> {
    let pairs: Vec<(f64, f64)> = bins
        .iter()
        .enumerate()
        .filter_map(|(i, b)| b.rate.map(|r| (i as f64, r)))
        .collect();
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    spearman(&xs, &ys)
}

/// Full label-conditioned report. Requires at least `MIN_CLASS_TOKENS`
/// scored tokens in each class.
pub fn stats_saliency(labels: &[TokenLabel]) -> Result<StatsReport> {
    let correct: Vec<f64> = scored(labels, TokenClass::Correct).map(|(s, _)| s).collect();
    let halluc: Vec<f64> = scored(labels, TokenClass::Hallucinated)
        .map(|(s, _)| s)
        .collect();
    if correct.len() < MIN_CLASS_TOKENS {
        return Err(Error::InsufficientData {
            class: "correct",
            got: correct.len(),
            needed: MIN_CLASS_TOKENS,
        });
    }
    if halluc.len() < MIN_CLASS_TOKENS {
        return Err(Error::InsufficientData {
            class: "hallucinated",
            got: halluc.len(),
            needed: MIN_CLASS_TOKENS,
        });
    }
    let (t, p) = welch_one_sided(&correct, &halluc);
    let bins = bin_analysis(labels, 10)?;
    let rho = bin_spearman(&bins);

    let cut = percentile(&correct, 75.0);
    let high = halluc.iter().filter(|&&s| s > cut).count();
    let high_pct = 100.0 * high as f64 / halluc.len() as f64;

    let prompt_mean = |class: TokenClass| -> Option<f64> {
        let vals: Vec<f64> = labels
            .iter()
            .filter(|l| l.label == class)
            .filter_map(|l| l.prompt_saliency)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };

    Ok(StatsReport {
        correct: class_stats(&correct),
        hallucinated: class_stats(&halluc),
        welch_t: t,
        welch_p: p,
        bins,
        spearman_rho: rho,
        high_saliency_hallucination_pct: high_pct,
        prompt_saliency_correct: prompt_mean(TokenClass::Correct),
        prompt_saliency_hallucinated: prompt_mean(TokenClass::Hallucinated),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(pos: usize, class: TokenClass, s: f64) -> TokenLabel {
        TokenLabel {
            position: pos,
            token: 40,
            label: class,
            saliency_prev: Some(s),
            prompt_saliency: None,
        }
    }

    #[test]
    fn separable_classes_give_tiny_p() {
        let mut labels = Vec::new();
        for i in 0..40 {
            labels.push(label(i, TokenClass::Correct, 1.0 + (i % 3) as f64 * 1e-3));
            labels.push(label(100 + i, TokenClass::Hallucinated, (i % 3) as f64 * 1e-3));
        }
        let r = stats_saliency(&labels).unwrap();
        assert!((r.correct.mean - 1.001).abs() < 1e-2);
        assert!(r.hallucinated.mean < 0.01);
        assert!(r.welch_p < 1e-10, "p = {}", r.welch_p);
    }

    #[test]
    fn identical_classes_give_large_p() {
        let mut labels = Vec::new();
        for i in 0..40 {
            let s = (i % 5) as f64 * 0.1;
            labels.push(label(i, TokenClass::Correct, s));
            labels.push(label(100 + i, TokenClass::Hallucinated, s));
        }
        let r = stats_saliency(&labels).unwrap();
        assert!(r.welch_p > 0.4, "p = {}", r.welch_p);
    }

    #[test]
    fn small_class_is_an_error_naming_it() {
        let mut labels = Vec::new();
        for i in 0..40 {
            labels.push(label(i, TokenClass::Correct, 0.5));
        }
        labels.push(label(99, TokenClass::Hallucinated, 0.1));
        match stats_saliency(&labels) {
            Err(Error::InsufficientData { class, .. }) => assert_eq!(class, "hallucinated"),
            other => panic!("expected insufficient data, got {other:?}"),
        }
    }

    #[test]
    fn two_point_bins() {
        let labels = vec![
            label(0, TokenClass::Hallucinated, 0.0),
            label(1, TokenClass::Correct, 1.0),
        ];
        let bins = bin_analysis(&labels, 10).unwrap();
        assert_eq!(bins[0].rate, Some(1.0));
        assert_eq!(bins[9].rate, Some(0.0));
        for b in &bins[1..9] {
            assert_eq!(b.rate, None);
            assert_eq!(b.count, 0);
        }
    }

    #[test]
    fn uniform_labels_give_flat_bins() {
        let mut labels = Vec::new();
        for i in 0..100 {
            labels.push(label(i, TokenClass::Hallucinated, i as f64 / 100.0));
        }
        let bins = bin_analysis(&labels, 10).unwrap();
        for b in &bins {
            assert_eq!(b.rate, Some(1.0));
        }
    }

    #[test]
    fn spearman_perfect_orders() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let up = [0.1, 0.2, 0.3, 0.4];
        let down = [0.4, 0.3, 0.2, 0.1];
        assert!((spearman(&x, &up).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &down).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert!((percentile(&v, 0.0) - 1.0).abs() < 1e-12);
        assert!((percentile(&v, 100.0) - 4.0).abs() < 1e-12);
        assert!((percentile(&v, 50.0) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn stats_are_permutation_invariant() {
        let mut labels = Vec::new();
        for i in 0..35 {
            labels.push(label(i, TokenClass::Correct, 0.3 + (i % 7) as f64 * 0.05));
            labels.push(label(100 + i, TokenClass::Hallucinated, 0.1 + (i % 5) as f64 * 0.04));
        }
        let a = stats_saliency(&labels).unwrap();
        labels.reverse();
        let b = stats_saliency(&labels).unwrap();
        assert_eq!(a.correct.mean, b.correct.mean);
        assert_eq!(a.welch_p, b.welch_p);
        assert_eq!(a.spearman_rho, b.spearman_rho);
    }
}
