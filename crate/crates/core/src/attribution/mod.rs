//! Token attribution over a forward trace: the Distance score, per-layer
//! key-token extraction, image/text contribution ratios, masking sweeps and
//! the KL modality-shift ratio.

mod extract;
mod ratio;
mod sweep;

pub use extract::{extract_key_tokens, Edge, EdgeKind, KeyToken, KeyTokenPath, LayerKeys};
pub use ratio::{kl_modality_ratio, modality_ratio, KlModalityRatio, LayerRatio, ModalityRatioSeries};
pub use sweep::{default_suffix_lengths, mask_plan_for, mask_sweep, SweepInput, SweepRow};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::math::{cosine, l2_distance};
use crate::model::ModelError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AttributionError {
    #[error("state, attention and MLP components coincide; the distance score is undefined")]
    DegenerateState,
    #[error("invalid attribution config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(default))]
pub struct AttributionConfig {
    /// Acceptance threshold on the distance score.
    pub gamma: f64,
    /// Attention sources enqueued per accepted token.
    pub top_k: usize,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        Self { gamma: 0.8, top_k: 5 }
    }
}

impl AttributionConfig {
    pub fn validate(&self) -> Result<(), AttributionError> {
        if self.top_k == 0 {
            return Err(AttributionError::InvalidConfig("top_k must be at least 1"));
        }
        if self.gamma.is_nan() {
            return Err(AttributionError::InvalidConfig("gamma is NaN"));
        }
        Ok(())
    }
}

/// `|h - a| / (|h - h_prev| + |h - m| + |h - a|) + cos(h, a)`.
pub fn distance_score(h: &[f64], a: &[f64], m: &[f64], h_prev: &[f64]) -> Result<f64, AttributionError> {
    let to_a = l2_distance(h, a);
    let denom = l2_distance(h, h_prev) + l2_distance(h, m) + to_a;
    if denom == 0.0 {
        return Err(AttributionError::DegenerateState);
    }
    Ok(to_a / denom + cosine(h, a))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_score() {
        let s = distance_score(&[2.0, 0.0], &[1.0, 0.0], &[0.5, 0.0], &[0.5, 0.0]).unwrap();
        assert!((s - 1.25).abs() < 1e-12);
    }

    #[test]
    fn attention_dominated_state_scores_one() {
        let s = distance_score(&[1.0, 2.0], &[1.0, 2.0], &[0.0, 1.0], &[3.0, 0.0]).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_state_is_reported() {
        let v = [0.3, 0.3];
        assert_eq!(distance_score(&v, &v, &v, &v), Err(AttributionError::DegenerateState));
    }
}
