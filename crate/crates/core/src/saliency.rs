//! Saliency maps from attention and attention gradients.
//!
//! Per head: `tril(|A .* dA|)`. Per layer, two aggregations:
//!
//! - main-text mode: sum heads, then divide by the Frobenius norm of the
//!   sum (all-zero sums are kept as-is and flagged degenerate);
//! - taylor mode: absolute value of the signed head sum (cancellation
//!   across heads allowed), divided by the head count, then masked.
//!
//! The candidate score averages one query row of the per-layer maps over
//! a set of target layers and the output-history columns `J`.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::math::Mat;
use crate::model::{AttentionTape, TokenLayout};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregationMode {
    MainText,
    AppendixTaylor,
}

/// Which columns count as history for the candidate score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JMode {
    /// All output positions before the query row.
    FullHistory,
    /// Only the immediately preceding position (the per-token protocol
    /// used by the label statistics).
    PrevOnly,
}

#[derive(Debug, Clone)]
pub struct SaliencyScoreConfig {
    pub target_layers: Vec<usize>,
    pub layout: TokenLayout,
    pub j_mode: JMode,
}

impl SaliencyScoreConfig {
    /// Default target layers: the upper half of the stack.
    pub fn upper_half(n_layers: usize, layout: TokenLayout) -> Self {
        SaliencyScoreConfig {
            target_layers: (n_layers / 2..n_layers).collect(),
            layout,
            j_mode: JMode::FullHistory,
        }
    }

    pub fn with_j_mode(mut self, j_mode: JMode) -> Self {
        self.j_mode = j_mode;
        self
    }
}

/// Per-layer aggregated saliency matrices.
#[derive(Debug, Clone)]
pub struct SaliencyStack {
    pub n: usize,
    pub mode: AggregationMode,
    layers: Vec<Mat<f64>>,
    degenerate: Vec<bool>,
}

impl SaliencyStack {
    /// Build from a tape whose gradients were filled by a backward pass.
    /// `min_layer` restricts the build to layers that actually carry
    /// gradients (scoring fast path); pass 0 for the full stack.
    pub fn from_tape(
        tape: &AttentionTape,
        mode: AggregationMode,
        min_layer: usize,
    ) -> Result<SaliencyStack> {
        let n = tape.n();
        let mut layers = Vec::with_capacity(tape.n_layers());
        let mut degenerate = Vec::with_capacity(tape.n_layers());
        for l in 0..tape.n_layers() {
            if l < min_layer {
                layers.push(Mat::zeros(n, n));
                degenerate.push(true);
                continue;
            }
            match mode {
                AggregationMode::MainText => {
                    let heads: Vec<Mat<f64>> = (0..tape.n_heads())
                        .map(|h| per_head_saliency(tape.attention(l, h), tape.grad(l, h)?))
                        .collect::<Result<_>>()?;
                    let (s, deg) = layer_saliency(&heads)?;
                    layers.push(s);
                    degenerate.push(deg);
                }
                AggregationMode::AppendixTaylor => {
                    let mut pairs = Vec::with_capacity(tape.n_heads());
                    for h in 0..tape.n_heads() {
                        pairs.push((tape.attention(l, h), tape.grad(l, h)?));
                    }
                    let s = appendix_saliency(&pairs)?;
                    let deg = s.data.iter().all(|&x| x == 0.0);
                    layers.push(s);
                    degenerate.push(deg);
                }
            }
        }
        Ok(SaliencyStack {
            n,
            mode,
            layers,
            degenerate,
        })
    }

    /// Raw constructor; used by tests and by callers that bypass
    /// normalization.
    pub fn from_layers(layers: Vec<Mat<f64>>, mode: AggregationMode) -> SaliencyStack {
        let n = layers.first().map_or(0, |m| m.rows);
        let degenerate = layers
            .iter()
            .map(|m| m.data.iter().all(|&x| x == 0.0))
            .collect();
        SaliencyStack {
            n,
            mode,
            layers,
            degenerate,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, l: usize) -> &Mat<f64> {
        &self.layers[l]
    }

    pub fn is_degenerate(&self, l: usize) -> bool {
        self.degenerate[l]
    }
}

/// `tril(|A .* G|)`: element-wise product magnitude with the strict upper
/// triangle zeroed; the diagonal survives.
pub fn per_head_saliency(a: &Mat<f64>, g: &Mat<f64>) -> Result<Mat<f64>> {
    if !a.same_shape(g) {
        return Err(Error::MatShape {
            left: format!("{}x{}", a.rows, a.cols),
            right: format!("{}x{}", g.rows, g.cols),
        });
    }
    let mut out = Mat::zeros(a.rows, a.cols);
    for i in 0..a.rows {
        for j in 0..=i.min(a.cols - 1) {
            out.set(i, j, (a.get(i, j) * g.get(i, j)).abs());
        }
    }
    Ok(out)
}

/// Sum per-head saliency matrices and normalize by the Frobenius norm of
/// the sum. A zero sum is returned unchanged with `degenerate = true`.
pub fn layer_saliency(heads: &[Mat<f64>]) -> Result<(Mat<f64>, bool)> {
    let first = heads.first().expect("at least one head");
    let mut sum = Mat::zeros(first.rows, first.cols);
    for h in heads {
        if !h.same_shape(first) {
            return Err(Error::MatShape {
                left: format!("{}x{}", first.rows, first.cols),
                right: format!("{}x{}", h.rows, h.cols),
            });
        }
        for (s, &v) in sum.data.iter_mut().zip(&h.data) {
            *s += v;
        }
    }
    let norm = sum.frobenius();
    if norm == 0.0 {
        return Ok((sum, true));
    }
    for v in sum.data.iter_mut() {
        *v /= norm;
    }
    Ok((sum, false))
}

/// Signed head sum, absolute value after summation, averaged over heads,
/// then masked to the lower triangle.
pub fn appendix_saliency(pairs: &[(&Mat<f64>, &Mat<f64>)]) -> Result<Mat<f64>> {
    let (a0, _) = pairs.first().expect("at least one head");
    let mut sum = Mat::<f64>::zeros(a0.rows, a0.cols);
    for (a, g) in pairs {
        if !a.same_shape(*g) || !a.same_shape(a0) {
            return Err(Error::MatShape {
                left: format!("{}x{}", a0.rows, a0.cols),
                right: format!("{}x{}", g.rows, g.cols),
            });
        }
        for ((s, &av), &gv) in sum.data.iter_mut().zip(&a.data).zip(&g.data) {
            *s += av * gv;
        }
    }
    let h = pairs.len() as f64;
    let mut out = Mat::zeros(a0.rows, a0.cols);
    for i in 0..a0.rows {
        for j in 0..=i.min(a0.cols - 1) {
            out.set(i, j, sum.get(i, j).abs() / h);
        }
    }
    Ok(out)
}

/// Columns consulted by the candidate score at query row `p`.
pub fn history_columns(cfg: &SaliencyScoreConfig, p: usize) -> Vec<usize> {
    match cfg.j_mode {
        JMode::FullHistory => cfg.layout.output_positions(p).collect(),
        JMode::PrevOnly => {
            if p > cfg.layout.output_start {
                vec![p - 1]
            } else {
                Vec::new()
            }
        }
    }
}

/// Mean saliency of row `p` over target layers and history columns.
/// `Ok(None)` signals the no-history condition (empty `J`).
pub fn candidate_score(
    stack: &SaliencyStack,
    cfg: &SaliencyScoreConfig,
    p: usize,
) -> Result<Option<f64>> {
    if p >= stack.n {
        return Err(Error::PositionOutOfRange {
            pos: p,
            len: stack.n,
        });
    }
    if cfg.target_layers.is_empty() {
        return Err(Error::CheckpointShape("target_layers must be non-empty".into()));
    }
    let cols = history_columns(cfg, p);
    if cols.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for &l in &cfg.target_layers {
        if l >= stack.n_layers() {
            return Err(Error::PositionOutOfRange {
                pos: l,
                len: stack.n_layers(),
            });
        }
        let m = stack.layer(l);
        for &j in &cols {
            total += m.get(p, j);
        }
    }
    Ok(Some(total / (cfg.target_layers.len() * cols.len()) as f64))
}

/// Mean saliency of row `p` over target layers and the prompt columns —
/// reported for inspection only.
pub fn prompt_score(stack: &SaliencyStack, cfg: &SaliencyScoreConfig, p: usize) -> Option<f64> {
    let lay = cfg.layout;
    let lo = lay.sys_len + lay.img_len;
    let hi = lay.prompt_end().min(p);
    if lo >= hi || p >= stack.n {
        return None;
    }
    let mut total = 0.0;
    for &l in &cfg.target_layers {
        let m = stack.layer(l);
        for j in lo..hi {
            total += m.get(p, j);
        }
    }
    Some(total / (cfg.target_layers.len() * (hi - lo)) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapFormat {
    /// Header `i,j,value`, one line per entry, row-major.
    Triplets,
    /// One CSV line per row.
    Dense,
}

#[derive(Serialize)]
struct MapSidecar {
    n: usize,
    layer: usize,
    sys_len: usize,
    img_len: usize,
    prompt_len: usize,
    output_start: usize,
}

/// Write one layer's map as CSV plus a JSON sidecar (`<path>.layout.json`)
/// carrying the layout boundaries. Values print with 12 fractional digits
/// of scientific notation, enough to re-parse to 12 significant digits.
pub fn export_map(
    stack: &SaliencyStack,
    layer: usize,
    layout: &TokenLayout,
    path: &Path,
    format: MapFormat,
) -> Result<()> {
    if layer >= stack.n_layers() {
        return Err(Error::PositionOutOfRange {
            pos: layer,
            len: stack.n_layers(),
        });
    }
    let m = stack.layer(layer);
    let mut out = String::new();
    match format {
        MapFormat::Triplets => {
            out.push_str("i,j,value\n");
            for i in 0..m.rows {
                for j in 0..m.cols {
                    out.push_str(&format!("{i},{j},{:.12e}\n", m.get(i, j)));
                }
            }
        }
        MapFormat::Dense => {
            for i in 0..m.rows {
                let row: Vec<String> =
                    (0..m.cols).map(|j| format!("{:.12e}", m.get(i, j))).collect();
                out.push_str(&row.join(","));
                out.push('\n');
            }
        }
    }
    write_atomic(path, out.as_bytes())?;

    let sidecar = MapSidecar {
        n: stack.n,
        layer,
        sys_len: layout.sys_len,
        img_len: layout.img_len,
        prompt_len: layout.prompt_len,
        output_start: layout.output_start,
    };
    let sidecar_path = sidecar_path(path);
    write_atomic(&sidecar_path, serde_json::to_string_pretty(&sidecar)?.as_bytes())?;
    Ok(())
}

pub fn sidecar_path(map_path: &Path) -> std::path::PathBuf {
    let mut os = map_path.as_os_str().to_os_string();
    os.push(".layout.json");
    std::path::PathBuf::from(os)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[Vec<f64>]) -> Mat<f64> {
        Mat::from_rows(rows)
    }

    #[test]
    fn per_head_direct_example() {
        let a = m(&[vec![0.7, 0.3], vec![0.5, 0.5]]);
        let g = m(&[vec![0.2, -0.1], vec![-0.4, 0.3]]);
        let s = per_head_saliency(&a, &g).unwrap();
        let expect = [0.14, 0.0, 0.20, 0.15];
        for (got, want) in s.data.iter().zip(expect) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn per_head_zero_grad() {
        let a = m(&[vec![0.7, 0.3], vec![0.5, 0.5]]);
        let g = Mat::zeros(2, 2);
        let s = per_head_saliency(&a, &g).unwrap();
        assert!(s.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn per_head_identity_survives_tril() {
        let eye = m(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let s = per_head_saliency(&eye, &eye).unwrap();
        assert_eq!(s.data, eye.data);
    }

    #[test]
    fn per_head_shape_mismatch() {
        let a = Mat::zeros(2, 2);
        let g = Mat::zeros(3, 3);
        assert!(matches!(
            per_head_saliency(&a, &g),
            Err(Error::MatShape { .. })
        ));
    }

    #[test]
    fn layer_saliency_frobenius_example() {
        let h1 = m(&[vec![3.0, 0.0], vec![0.0, 4.0]]);
        let h2 = Mat::zeros(2, 2);
        let (s, deg) = layer_saliency(&[h1, h2]).unwrap();
        assert!(!deg);
        assert!((s.get(0, 0) - 0.6).abs() < 1e-12);
        assert!((s.get(1, 1) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn layer_saliency_idempotent_on_unit_norm() {
        let h = m(&[vec![0.6, 0.0], vec![0.0, 0.8]]);
        let (s, _) = layer_saliency(std::slice::from_ref(&h)).unwrap();
        for (a, b) in s.data.iter().zip(&h.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_saliency_degenerate() {
        let (s, deg) = layer_saliency(&[Mat::zeros(2, 2), Mat::zeros(2, 2)]).unwrap();
        assert!(deg);
        assert!(s.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn appendix_cancellation_differs_from_main_text() {
        // Two 1x1 heads with A.*G = +1 and -1.
        let a1 = m(&[vec![1.0]]);
        let g1 = m(&[vec![1.0]]);
        let a2 = m(&[vec![1.0]]);
        let g2 = m(&[vec![-1.0]]);
        let appendix = appendix_saliency(&[(&a1, &g1), (&a2, &g2)]).unwrap();
        assert_eq!(appendix.get(0, 0), 0.0);
        let h1 = per_head_saliency(&a1, &g1).unwrap();
        let h2 = per_head_saliency(&a2, &g2).unwrap();
        let pre_norm_sum = h1.get(0, 0) + h2.get(0, 0);
        assert!((pre_norm_sum - 2.0).abs() < 1e-12);
    }

    #[test]
    fn appendix_single_head_matches_per_head() {
        let a = m(&[vec![0.7, 0.0], vec![0.5, 0.5]]);
        let g = m(&[vec![0.2, 0.0], vec![-0.4, 0.3]]);
        let appendix = appendix_saliency(&[(&a, &g)]).unwrap();
        let per_head = per_head_saliency(&a, &g).unwrap();
        assert_eq!(appendix.data, per_head.data);
    }

    #[test]
    fn appendix_all_positive_equals_head_mean() {
        let a1 = m(&[vec![0.5]]);
        let g1 = m(&[vec![0.2]]);
        let a2 = m(&[vec![0.4]]);
        let g2 = m(&[vec![0.5]]);
        let appendix = appendix_saliency(&[(&a1, &g1), (&a2, &g2)]).unwrap();
        assert!((appendix.get(0, 0) - (0.1 + 0.2) / 2.0).abs() < 1e-12);
    }

    fn raw_stack_8x8() -> SaliencyStack {
        // Three layers; only entries used by the score example are set.
        let mut l0 = Mat::zeros(8, 8);
        l0.set(7, 5, 9.0);
        let mut l1 = Mat::zeros(8, 8);
        l1.set(7, 5, 0.2);
        l1.set(7, 6, 0.4);
        let mut l2 = Mat::zeros(8, 8);
        l2.set(7, 5, 0.1);
        l2.set(7, 6, 0.3);
        SaliencyStack::from_layers(vec![l0, l1, l2], AggregationMode::MainText)
    }

    #[test]
    fn candidate_score_direct_example() {
        let stack = raw_stack_8x8();
        let layout = TokenLayout::new(2, 3, 0);
        let cfg = SaliencyScoreConfig {
            target_layers: vec![1, 2],
            layout,
            j_mode: JMode::FullHistory,
        };
        let s = candidate_score(&stack, &cfg, 7).unwrap().unwrap();
        assert!((s - 0.25).abs() < 1e-12);
    }

    #[test]
    fn candidate_score_zero_stack() {
        let stack = SaliencyStack::from_layers(
            vec![Mat::zeros(8, 8), Mat::zeros(8, 8)],
            AggregationMode::MainText,
        );
        let layout = TokenLayout::new(2, 3, 0);
        let cfg = SaliencyScoreConfig {
            target_layers: vec![1],
            layout,
            j_mode: JMode::FullHistory,
        };
        assert_eq!(candidate_score(&stack, &cfg, 7).unwrap(), Some(0.0));
    }

    #[test]
    fn candidate_score_single_cell() {
        let stack = raw_stack_8x8();
        let layout = TokenLayout::new(2, 3, 0).with_output_start(6);
        let cfg = SaliencyScoreConfig {
            target_layers: vec![1],
            layout,
            j_mode: JMode::FullHistory,
        };
        let s = candidate_score(&stack, &cfg, 7).unwrap().unwrap();
        assert!((s - 0.4).abs() < 1e-12);
    }

    #[test]
    fn candidate_score_empty_j_is_no_history() {
        let stack = raw_stack_8x8();
        let layout = TokenLayout::new(2, 3, 0);
        let cfg = SaliencyScoreConfig {
            target_layers: vec![1],
            layout,
            j_mode: JMode::FullHistory,
        };
        assert_eq!(candidate_score(&stack, &cfg, 5).unwrap(), None);
        assert_eq!(candidate_score(&stack, &cfg, 4).unwrap(), None);
    }

    #[test]
    fn candidate_score_prev_only() {
        let stack = raw_stack_8x8();
        let layout = TokenLayout::new(2, 3, 0);
        let cfg = SaliencyScoreConfig {
            target_layers: vec![1, 2],
            layout,
            j_mode: JMode::PrevOnly,
        };
        let s = candidate_score(&stack, &cfg, 7).unwrap().unwrap();
        assert!((s - (0.4 + 0.3) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn candidate_score_linear_in_raw_stack() {
        let stack = raw_stack_8x8();
        let scaled = SaliencyStack::from_layers(
            stack
                .layers
                .iter()
                .map(|m| {
                    let mut c = m.clone();
                    c.data.iter_mut().for_each(|x| *x *= 3.0);
                    c
                })
                .collect(),
            AggregationMode::MainText,
        );
        let layout = TokenLayout::new(2, 3, 0);
        let cfg = SaliencyScoreConfig {
            target_layers: vec![1, 2],
            layout,
            j_mode: JMode::FullHistory,
        };
        let a = candidate_score(&stack, &cfg, 7).unwrap().unwrap();
        let b = candidate_score(&scaled, &cfg, 7).unwrap().unwrap();
        assert!((b - 3.0 * a).abs() < 1e-12);
    }

    #[test]
    fn export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.csv");
        let mut l0 = Mat::zeros(2, 2);
        l0.set(0, 0, 1.0 / 3.0);
        l0.set(1, 0, 0.123456789012345);
        l0.set(1, 1, 2.5e-7);
        let stack = SaliencyStack::from_layers(vec![l0.clone()], AggregationMode::MainText);
        let layout = TokenLayout::new(1, 1, 0);
        export_map(&stack, 0, &layout, &path, MapFormat::Triplets).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("i,j,value"));
        let data_lines: Vec<&str> = lines.collect();
        assert_eq!(data_lines.len(), 4);
        for line in data_lines {
            let parts: Vec<&str> = line.split(',').collect();
            let (i, j): (usize, usize) = (parts[0].parse().unwrap(), parts[1].parse().unwrap());
            let v: f64 = parts[2].parse().unwrap();
            let orig = l0.get(i, j);
            let tol = if orig == 0.0 { 1e-12 } else { orig.abs() * 1e-12 };
            assert!((v - orig).abs() <= tol, "{v} vs {orig}");
        }

        let sidecar = std::fs::read_to_string(sidecar_path(&path)).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&sidecar).unwrap();
        assert_eq!(parsed["sys_len"], 1);
        assert_eq!(parsed["img_len"], 1);
        assert_eq!(parsed["prompt_len"], 0);
    }

    #[test]
    fn export_dense_one_line_per_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dense.csv");
        let stack =
            SaliencyStack::from_layers(vec![Mat::zeros(3, 3)], AggregationMode::MainText);
        let layout = TokenLayout::new(1, 1, 0);
        export_map(&stack, 0, &layout, &path, MapFormat::Dense).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
    }
}
