//! Synthetic grounded-generation task: chain traversal with recall.
//!
//! A scene is a set of (object, attribute) pairs whose attributes form a
//! successor chain a0 -> a1 -> ... -> ak. The image block shows the pairs;
//! the prompt lists the chain's successor pairs `[from, to]` in shuffled
//! order plus the start attribute. The reference output walks the chain
//! from the start (`a0 a1 ... ak`), then recalls its own first two tokens
//! after a separator. Each forward step is a content lookup keyed by the
//! token just emitted, so a token's groundedness is visible in how its
//! row couples to the prompt; the recall section depends on specific
//! earlier output positions, which is what the decay intervention severs.
//!
//! Hallucination pressure comes from occlusion: with some probability the
//! chain's final link is missing — the prompt simply omits that successor
//! pair and the image shows the pair's attribute slot as `UNK` — while
//! the reference output still carries the full walk. The model can only
//! guess at the missing step, and its lookup query finds no match in the
//! listed pairs, so the guessing state shows up as collapsed saliency
//! over the history columns. Occluded attributes are excluded from the
//! grounded set (an unverifiable claim counts as a hallucination), which
//! keeps the invariant that every grounded token appears in the image
//! encoding.

use std::collections::BTreeSet;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TokenLayout;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const QRY: usize = 3;
pub const ANS: usize = 4;
pub const SYS_A: usize = 5;
pub const SYS_B: usize = 6;
pub const SEP: usize = 7;
pub const UNK: usize = 8;

pub const OBJ_BASE: usize = 16;
pub const N_OBJECTS: usize = 12;
pub const ATTR_BASE: usize = 32;
pub const N_ATTRS: usize = 16;

pub const SYS_LEN: usize = 2;
pub const IMG_LEN: usize = 8;
/// Longest chain: MAX_EDGES successor links, MAX_EDGES + 1 nodes.
pub const MAX_EDGES: usize = 3;
/// QRY, MAX_EDGES shuffled [from, to] slots, start attribute, ANS.
pub const PROMPT_LEN: usize = 2 * MAX_EDGES + 3;
/// The recall section repeats the walk's nodes except the last one
/// (which may be a hidden-slot guess).

/// Vocabulary size the task needs; the model default (96) leaves head
/// room.
pub const MIN_VOCAB: usize = ATTR_BASE + N_ATTRS;

pub fn obj_token(idx: usize) -> usize {
    OBJ_BASE + idx
}

pub fn attr_token(idx: usize) -> usize {
    ATTR_BASE + idx
}

pub fn is_object(token: usize) -> bool {
    (OBJ_BASE..OBJ_BASE + N_OBJECTS).contains(&token)
}

pub fn is_attribute(token: usize) -> bool {
    (ATTR_BASE..ATTR_BASE + N_ATTRS).contains(&token)
}

/// Content tokens carry grounding labels; everything else is neutral.
pub fn is_content(token: usize) -> bool {
    is_object(token) || is_attribute(token)
}

pub fn task_layout() -> TokenLayout {
    TokenLayout::new(SYS_LEN, IMG_LEN, PROMPT_LEN)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSample {
    pub id: usize,
    /// (object index, attribute index) pairs; attribute `i` is chain node
    /// `i` (node 0 is the start cue).
    pub scene: Vec<(usize, usize)>,
    /// Which chain nodes are hidden (at most the last one).
    pub occluded: Vec<bool>,
    /// System + image + prompt tokens; generation starts after these.
    pub tokens: Vec<usize>,
    /// Reference output: the chain walk, SEP, recall of the walk's first
    /// tokens, EOS. Occluded slots carry the truth the model cannot see.
    pub gold_output: Vec<usize>,
    /// Grounded content token ids: objects plus visible attributes.
    pub gold_set: BTreeSet<usize>,
}

impl SyntheticSample {
    pub fn prompt_len(&self) -> usize {
        self.tokens.len()
    }

    /// Full teacher-forcing sequence: prompt then reference output.
    pub fn gold_sequence(&self) -> Vec<usize> {
        let mut seq = self.tokens.clone();
        seq.extend_from_slice(&self.gold_output);
        seq
    }

    /// Grounded attribute tokens (the recall target set).
    pub fn gold_attrs(&self) -> BTreeSet<usize> {
        self.gold_set
            .iter()
            .copied()
            .filter(|&t| is_attribute(t))
            .collect()
    }
}

/// Per difficulty notch: edge-count range, attribute pool, probability
/// that the chain's final link is hidden.
fn difficulty_knobs(difficulty: usize) -> (usize, usize, usize, f64) {
    match difficulty {
        0 => (0, 0, 1, 0.0),
        1 => (1, 2, 8, 0.20),
        2 => (2, MAX_EDGES, N_ATTRS, 0.35),
        _ => (MAX_EDGES, MAX_EDGES, N_ATTRS, 0.50),
    }
}

pub fn gen_corpus(seed: u64, n_samples: usize, difficulty: usize) -> Vec<SyntheticSample> {
    assert!(n_samples >= 1, "n_samples must be >= 1");
    let (min_edges, max_edges, attr_pool, occlusion) = difficulty_knobs(difficulty);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_samples);
    for id in 0..n_samples {
        let k = rng.random_range(min_edges..=max_edges);
        let n_nodes = k + 1;
        // Distinct objects and chain-node attributes.
        let mut objs: Vec<usize> = (0..N_OBJECTS).collect();
        for i in 0..n_nodes {
            let j = rng.random_range(i..N_OBJECTS);
            objs.swap(i, j);
        }
        let mut attrs: Vec<usize> = (0..attr_pool).collect();
        for i in 0..n_nodes.min(attr_pool) {
            let j = rng.random_range(i..attr_pool);
            attrs.swap(i, j);
        }
        let nodes: Vec<usize> = (0..n_nodes).map(|i| attrs[i]).collect();
        // Only the final node can be hidden; its link is then omitted
        // from the prompt and its image slot reads UNK.
        let hide_last = k > 0 && occlusion > 0.0 && rng.random::<f64>() < occlusion;
        let occluded: Vec<bool> = (0..n_nodes).map(|i| hide_last && i == k).collect();
        let scene: Vec<(usize, usize)> = (0..n_nodes).map(|i| (objs[i], nodes[i])).collect();
        let listed_edges = if hide_last { k - 1 } else { k };
        // Display order of the listed successor links in the prompt.
        let mut edge_order: Vec<usize> = (0..listed_edges).collect();
        for i in 0..listed_edges {
            let j = rng.random_range(i..listed_edges);
            edge_order.swap(i, j);
        }

        let mut tokens = vec![SYS_A, SYS_B];
        for (i, &(o, a)) in scene.iter().enumerate() {
            tokens.push(obj_token(o));
            tokens.push(if occluded[i] { UNK } else { attr_token(a) });
        }
        while tokens.len() < SYS_LEN + IMG_LEN {
            tokens.push(PAD);
        }
        tokens.push(QRY);
        // Edge e goes from node e to node e+1.
        for &e in &edge_order {
            tokens.push(attr_token(nodes[e]));
            tokens.push(attr_token(nodes[e + 1]));
        }
        while tokens.len() < SYS_LEN + IMG_LEN + PROMPT_LEN - 2 {
            tokens.push(PAD);
        }
        tokens.push(attr_token(nodes[0]));
        tokens.push(ANS);

        let mut gold_set = BTreeSet::new();
        for (i, &(o, a)) in scene.iter().enumerate() {
            gold_set.insert(obj_token(o));
            if !occluded[i] {
                gold_set.insert(attr_token(a));
            }
        }

        // Walk, separator, recall of everything but the final node, end.
        let mut gold_output: Vec<usize> =
            nodes.iter().map(|&a| attr_token(a)).collect();
        gold_output.push(SEP);
        for &a in nodes.iter().take(n_nodes - 1) {
            gold_output.push(attr_token(a));
        }
        gold_output.push(EOS);

        out.push(SyntheticSample {
            id,
            scene,
            occluded,
            tokens,
            gold_output,
            gold_set,
        });
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusHeader {
    seed: u64,
    n_samples: usize,
    difficulty: usize,
}

/// JSON-lines: one header object, then one sample per line.
pub fn write_corpus_jsonl(
    samples: &[SyntheticSample],
    seed: u64,
    difficulty: usize,
    path: &Path,
) -> Result<()> {
    let mut out = String::new();
    out.push_str(&serde_json::to_string(&CorpusHeader {
        seed,
        n_samples: samples.len(),
        difficulty,
    })?);
    out.push('\n');
    for s in samples {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    crate::saliency::write_atomic(path, out.as_bytes())
}

pub fn read_corpus_jsonl(path: &Path) -> Result<Vec<SyntheticSample>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::CheckpointShape("empty corpus file".into()))?;
    let _: CorpusHeader = serde_json::from_str(header)?;
    lines.map(|l| Ok(serde_json::from_str(l)?)).collect()
}
