use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use super::{AttributionError, KeyTokenPath};
use crate::math::{kl_divergence, PROB_EPSILON};
use crate::model::{ModelConfig, ModelInput, Parameters, TokenKind};
use crate::model::forward_with_trace;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct LayerRatio {
    pub image_sum: f64,
    pub text_sum: f64,
    /// `image_sum / text_sum`; `+inf` when `text_sum` is zero.
    pub ratio: f64,
    /// Set when the text sum is zero.
    pub undefined: bool,
}

/// Image-to-text ratio of accepted scores per zero-based layer.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ModalityRatioSeries {
    pub layers: Vec<LayerRatio>,
}

pub fn modality_ratio(path: &KeyTokenPath, config: &ModelConfig) -> ModalityRatioSeries {
    let layers = path
        .layers
        .iter()
        .map(|keys| {
            let (mut image_sum, mut text_sum) = (0.0, 0.0);
            for t in keys.accepted() {
                let s = t.score.unwrap_or(0.0);
                match config.token_kind(t.position) {
                    TokenKind::Image => image_sum += s,
                    TokenKind::Text => text_sum += s,
                }
            }
            if text_sum == 0.0 {
                LayerRatio { image_sum, text_sum, ratio: f64::INFINITY, undefined: true }
            } else {
                LayerRatio { image_sum, text_sum, ratio: image_sum / text_sum, undefined: false }
            }
        })
        .collect();
    ModalityRatioSeries { layers }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct KlModalityRatio {
    /// Mean of the per-input ratios.
    pub ratio: f64,
    pub per_input: Vec<f64>,
    pub kl_image: Vec<f64>,
    pub kl_text: Vec<f64>,
}

/// Mean of the vocabulary distributions of every final-layer position of one
/// modality.
fn modality_means(trace: &crate::model::ForwardTrace) -> (Vec<f64>, Vec<f64>) {
    let v = trace.config().vocab_size;
    let mut image = alloc::vec![0.0; v];
    let mut text = alloc::vec![0.0; v];
    let (mut ni, mut nt) = (0usize, 0usize);
    for pos in 0..trace.n_positions() {
        let (acc, n) = match trace.token_kind(pos) {
            TokenKind::Image => (&mut image, &mut ni),
            TokenKind::Text => (&mut text, &mut nt),
        };
        *n += 1;
        for (a, p) in acc.iter_mut().zip(trace.probabilities(pos)) {
            *a += p;
        }
    }
    image.iter_mut().for_each(|x| *x /= ni.max(1) as f64);
    text.iter_mut().for_each(|x| *x /= nt.max(1) as f64);
    (image, text)
}

/// `KL(P_image_before || P_image_after) / KL(P_text_before || P_text_after)`
/// per input, averaged. An input where both divergences are below `1e-12`
/// contributes `1.0`.
pub fn kl_modality_ratio(
    before: &Parameters,
    after: &Parameters,
    inputs: &[ModelInput<'_>],
) -> Result<KlModalityRatio, AttributionError> {
    let mut per_input = Vec::with_capacity(inputs.len());
    let mut kl_image = Vec::with_capacity(inputs.len());
    let mut kl_text = Vec::with_capacity(inputs.len());
    for input in inputs {
        let (_, t0) = forward_with_trace(before, input)?;
        let (_, t1) = forward_with_trace(after, input)?;
        let (i0, x0) = modality_means(&t0);
        let (i1, x1) = modality_means(&t1);
        let ki = kl_divergence(&i0, &i1);
        let kt = kl_divergence(&x0, &x1);
        let r = if ki < PROB_EPSILON && kt < PROB_EPSILON {
            1.0
        } else if kt == 0.0 {
            f64::INFINITY
        } else {
            ki / kt
        };
        per_input.push(r);
        kl_image.push(ki);
        kl_text.push(kt);
    }
    let ratio = if per_input.is_empty() { 1.0 } else { per_input.iter().sum::<f64>() / per_input.len() as f64 };
    Ok(KlModalityRatio { ratio, per_input, kl_image, kl_text })
}
