use alloc::collections::BTreeSet;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use super::{AttributionError, KeyTokenPath};
use crate::math::argmax;
use crate::model::{forward, forward_masked, MaskPlan, ModelInput, Parameters, TokenId};

/// An input, its reference answer and its key-token path.
#[derive(Clone, Copy, Debug)]
pub struct SweepInput<'a> {
    pub input: ModelInput<'a>,
    pub answer: TokenId,
    pub path: &'a KeyTokenPath,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SweepRow {
    /// Masked layers are `start..n_layers` (zero-based).
    pub start: usize,
    pub n_layers: usize,
    pub accuracy: f64,
    pub unmasked_accuracy: f64,
    /// `accuracy / unmasked_accuracy`; NaN when the unmasked accuracy is zero.
    pub retained: f64,
}

/// Suffix lengths for a sweep: the top eighth, then every multiple of four,
/// then the whole stack.
pub fn default_suffix_lengths(n_layers: usize) -> Vec<usize> {
    let mut lengths = BTreeSet::new();
    lengths.insert(n_layers.div_ceil(8).max(1));
    lengths.extend((1..).map(|k| 4 * k).take_while(|&len| len < n_layers));
    lengths.insert(n_layers);
    lengths.into_iter().collect()
}

/// Keep only each layer's key tokens and the output position at every layer
/// of `start..n_layers`.
pub fn mask_plan_for(path: &KeyTokenPath, start: usize) -> MaskPlan {
    let mut plan = MaskPlan::new();
    for l in start..path.n_layers() {
        let mut keep = path.layers[l].positions();
        keep.insert(path.output_position);
        plan.keep_only(l, path.n_positions, &keep);
    }
    plan
}

/// Retained accuracy for each masked suffix length in `suffix_lengths`.
pub fn mask_sweep(
    params: &Parameters,
    inputs: &[SweepInput<'_>],
    suffix_lengths: &[usize],
) -> Result<Vec<SweepRow>, AttributionError> {
    let n_layers = params.config.n_layers;
    let mut base_hits = 0usize;
    for s in inputs {
        if argmax(&forward(params, &s.input)?) == s.answer.index() {
            base_hits += 1;
        }
    }
    let total = inputs.len().max(1) as f64;
    let unmasked = base_hits as f64 / total;
    suffix_lengths
        .iter()
        .map(|&len| {
            let start = n_layers - len.min(n_layers);
            let mut hits = 0usize;
            for s in inputs {
                let plan = mask_plan_for(s.path, start);
                if argmax(&forward_masked(params, &s.input, &plan)?) == s.answer.index() {
                    hits += 1;
                }
            }
            let accuracy = hits as f64 / total;
            let retained = if base_hits == 0 { f64::NAN } else { accuracy / unmasked };
            Ok(SweepRow { start, n_layers, accuracy, unmasked_accuracy: unmasked, retained })
        })
        .collect()
}
