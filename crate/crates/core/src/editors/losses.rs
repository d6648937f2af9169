use alloc::collections::BTreeSet;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use super::{AdversarialBatch, EditError, EditorConfig, LocalityKind, Sample};
use crate::dataset::EditRecord;
use crate::math::{kl_divergence, neg_log};
use crate::model::{forward, ModelError, Parameters};

/// `-ln p'(a | I1, T1)` with the probability floored at the epsilon.
pub fn edit_loss(edited: &Parameters, edit: &EditRecord) -> Result<f64, ModelError> {
    let p = forward(edited, &edit.input())?;
    Ok(neg_log(p[edit.target.index()]))
}

/// `KL(p_base(.|x) || p_edited(.|x))` over the answer distribution.
pub fn locality_kl(base: &Parameters, edited: &Parameters, sample: &Sample) -> Result<f64, ModelError> {
    let p = forward(base, &sample.input())?;
    let q = forward(edited, &sample.input())?;
    Ok(kl_divergence(&p, &q))
}

/// KL on an unrelated image-text pair plus KL on an unrelated text-only input.
pub fn base_locality_loss(
    base: &Parameters,
    edited: &Parameters,
    multimodal: &Sample,
    text_only: &Sample,
) -> Result<f64, ModelError> {
    Ok(locality_kl(base, edited, multimodal)? + locality_kl(base, edited, text_only)?)
}

/// Sum of the KL terms of the selected adversarial types.
pub fn multimodal_locality_loss(
    base: &Parameters,
    edited: &Parameters,
    batch: &AdversarialBatch,
    combination: &BTreeSet<LocalityKind>,
) -> Result<f64, EditError> {
    let mut total = 0.0;
    for &kind in combination {
        let sample = batch.sample(kind).ok_or(EditError::IncompleteBatch(kind_name(kind)))?;
        total += locality_kl(base, edited, sample)?;
    }
    Ok(total)
}

pub(crate) fn kind_name(kind: LocalityKind) -> &'static str {
    match kind {
        LocalityKind::RI => "RI",
        LocalityKind::NI => "NI",
        LocalityKind::CI => "CI",
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct LossBreakdown {
    pub edit: f64,
    pub locality: f64,
    pub multimodal: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn combine(edit: f64, locality: f64, multimodal: f64, lambdas: [f64; 3]) -> Self {
        let total = lambdas[0] * edit + lambdas[1] * locality + lambdas[2] * multimodal;
        Self { edit, locality, multimodal, total }
    }
}

/// Weighted sum of the three terms. A term whose weight is zero is still
/// reported when its samples are present, and reported as zero otherwise.
pub fn composite_loss(
    base: &Parameters,
    edited: &Parameters,
    edit: &EditRecord,
    batch: &AdversarialBatch,
    config: &EditorConfig,
) -> Result<LossBreakdown, EditError> {
    let [_, l2, l3] = config.lambdas;
    let le = edit_loss(edited, edit)?;
    let loc = match (&batch.unrelated_multimodal, &batch.unrelated_text) {
        (Some(m), Some(t)) => base_locality_loss(base, edited, m, t)?,
        _ if l2 > 0.0 => return Err(EditError::IncompleteBatch("unrelated")),
        _ => 0.0,
    };
    let locm = match multimodal_locality_loss(base, edited, batch, &config.loss_combination) {
        Ok(v) => v,
        Err(EditError::IncompleteBatch(_)) if l3 == 0.0 => 0.0,
        Err(e) => return Err(e),
    };
    Ok(LossBreakdown::combine(le, loc, locm, config.lambdas))
}
