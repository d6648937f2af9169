use alloc::collections::{BTreeSet, VecDeque};
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use super::{distance_score, AttributionConfig, AttributionError};
use crate::model::{ForwardTrace, TokenKind};

/// A position queued at one layer. `score` is `None` for a degenerate state.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct KeyToken {
    pub position: usize,
    pub kind: TokenKind,
    pub score: Option<f64>,
    pub accepted: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct LayerKeys {
    /// Processing order; every position appears at most once.
    pub queued: Vec<KeyToken>,
    /// Scores of accepted tokens in acceptance order.
    pub accepted_scores: Vec<f64>,
}

impl LayerKeys {
    pub fn positions(&self) -> BTreeSet<usize> {
        self.queued.iter().map(|t| t.position).collect()
    }

    pub fn accepted(&self) -> impl Iterator<Item = &KeyToken> {
        self.queued.iter().filter(|t| t.accepted)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum EdgeKind {
    /// `from` was accepted at `layer` and `to` is among its top attention sources.
    Expansion,
    /// `from` was accepted at `layer + 1` and seeds `layer`.
    CarryDown,
}

/// Provenance of one queue entry. Every queued token except the output seed
/// has exactly one incoming edge, so the edges form a tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Edge {
    /// Layer of the `to` token.
    pub layer: usize,
    pub from: usize,
    pub to: usize,
    pub kind: EdgeKind,
}

/// Per-layer key tokens, indexed by zero-based layer.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct KeyTokenPath {
    pub n_positions: usize,
    pub output_position: usize,
    pub layers: Vec<LayerKeys>,
    pub edges: Vec<Edge>,
    pub config: AttributionConfig,
}

impl KeyTokenPath {
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }
}

/// The `k` highest-weight sources of an attention row; ties go to the lower
/// position and zero weights are never selected.
fn top_sources(row: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).filter(|&j| row[j] > 0.0).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Walk the layers from the top. Each layer's queue starts from the tokens
/// accepted in the layer above (the output position at the top layer); a
/// token is accepted when its distance score reaches `gamma`, and then its
/// top-`k` attention sources at the same layer join the queue.
pub fn extract_key_tokens(trace: &ForwardTrace, config: &AttributionConfig) -> Result<KeyTokenPath, AttributionError> {
    config.validate()?;
    let n = trace.n_positions();
    let out = trace.output_position();
    let n_layers = trace.n_layers();
    let mut layers = alloc::vec![LayerKeys::default(); n_layers];
    let mut edges = Vec::new();
    let mut seeds = alloc::vec![out];

    for l in (0..n_layers).rev() {
        let mut queue: VecDeque<usize> = VecDeque::new();
        let mut enqueued = BTreeSet::new();
        for &s in &seeds {
            if enqueued.insert(s) {
                queue.push_back(s);
                if l + 1 < n_layers {
                    edges.push(Edge { layer: l, from: s, to: s, kind: EdgeKind::CarryDown });
                }
            }
        }
        let keys = &mut layers[l];
        let mut accepted = Vec::new();
        while let Some(pos) = queue.pop_front() {
            let score = match distance_score(trace.h_new(l, pos), trace.attn_out(l, pos), trace.mlp_out(l, pos), trace.h_prev(l, pos)) {
                Ok(s) => Some(s),
                Err(AttributionError::DegenerateState) => None,
                Err(e) => return Err(e),
            };
            let ok = score.is_some_and(|s| s >= config.gamma);
            keys.queued.push(KeyToken { position: pos, kind: trace.token_kind(pos), score, accepted: ok });
            if !ok {
                continue;
            }
            keys.accepted_scores.push(score.expect("accepted implies scored"));
            accepted.push(pos);
            for src in top_sources(trace.attention_row(l, pos), config.top_k) {
                if enqueued.insert(src) {
                    queue.push_back(src);
                    edges.push(Edge { layer: l, from: pos, to: src, kind: EdgeKind::Expansion });
                }
            }
        }
        seeds = accepted;
    }
    Ok(KeyTokenPath { n_positions: n, output_position: out, layers, edges, config: *config })
}
