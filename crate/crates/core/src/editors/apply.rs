use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use super::losses::{composite_loss, kind_name};
use super::{AdversarialBatch, EditError, EditorConfig, LossBreakdown, Sample};
use crate::dataset::EditRecord;
use crate::math::neg_log;
use crate::model::{
    backward_from_logits, forward, forward_with_trace, GradientScope, Gradients, Parameters, TensorId,
};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct EditReport {
    /// Gradient steps applied.
    pub steps: usize,
    pub losses: LossBreakdown,
    /// `(tensor name, L2 norm of the change)` for every tensor, canonical order.
    pub delta_norms: Vec<(String, f64)>,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EditOutcome {
    pub params: Parameters,
    pub report: EditReport,
}

struct Term<'a> {
    sample: &'a Sample,
    weight: f64,
    reference: Vec<f64>,
}

fn locality_terms<'a>(
    base: &Parameters,
    batch: &'a AdversarialBatch,
    config: &EditorConfig,
) -> Result<Vec<Term<'a>>, EditError> {
    let [_, l2, l3] = config.lambdas;
    let mut samples: Vec<(&Sample, f64)> = Vec::new();
    if l2 > 0.0 {
        for s in [&batch.unrelated_multimodal, &batch.unrelated_text] {
            samples.push((s.as_ref().ok_or(EditError::IncompleteBatch("unrelated"))?, l2));
        }
    }
    if l3 > 0.0 {
        for &kind in &config.loss_combination {
            samples.push((batch.sample(kind).ok_or(EditError::IncompleteBatch(kind_name(kind)))?, l3));
        }
    }
    samples
        .into_iter()
        .map(|(sample, weight)| Ok(Term { sample, weight, reference: forward(base, &sample.input())? }))
        .collect()
}

fn report(base: &Parameters, edited: &Parameters, losses: LossBreakdown, steps: usize, converged: bool) -> EditReport {
    let delta_norms = Parameters::tensor_ids(&base.config)
        .into_iter()
        .map(|id| (format!("{id}"), edited.delta_norm(base, id)))
        .collect();
    EditReport { steps, losses, delta_norms, converged }
}

/// Per-edit gradient descent on the composite objective, restricted to the
/// configured target tensors. `base` is never modified.
pub fn apply_edit(
    base: &Parameters,
    edit: &EditRecord,
    batch: &AdversarialBatch,
    config: &EditorConfig,
) -> Result<EditOutcome, EditError> {
    config.validate(&base.config)?;
    let targets: Vec<TensorId> = config.targets.resolve(&base.config)?;
    let scope = GradientScope::only(targets.iter().copied());
    let terms = locality_terms(base, batch, config)?;
    let l1 = config.lambdas[0];
    let a = edit.target.index();

    let mut current = base.clone();
    let mut grads = Gradients::zeros(&base.config);
    let mut best: Option<(f64, Parameters, usize)> = None;
    let mut steps = 0;
    let mut converged = false;
    let mut dlogits = alloc::vec![0.0; base.config.vocab_size];

    loop {
        let (p, trace) = forward_with_trace(&current, &edit.input())?;
        let le = neg_log(p[a]);
        if best.as_ref().is_none_or(|(b, _, _)| le < *b) {
            best = Some((le, current.clone(), steps));
        }
        if le < config.threshold {
            converged = true;
            break;
        }
        if steps == config.max_steps {
            break;
        }
        for id in &targets {
            grads.tensor_mut(*id).expect("resolved id").iter_mut().for_each(|g| *g = 0.0);
        }
        dlogits.copy_from_slice(&p);
        dlogits[a] -= 1.0;
        backward_from_logits(&current, &trace, &dlogits, l1, &scope, &mut grads)?;
        for term in &terms {
            let (q, trace) = forward_with_trace(&current, &term.sample.input())?;
            for ((g, &qi), &pi) in dlogits.iter_mut().zip(&q).zip(&term.reference) {
                *g = qi - pi;
            }
            backward_from_logits(&current, &trace, &dlogits, term.weight, &scope, &mut grads)?;
        }
        if targets.iter().any(|id| grads.tensor(*id).is_some_and(|g| g.iter().any(|x| !x.is_finite()))) {
            return Err(EditError::NonFiniteGradient { step: steps });
        }
        for id in &targets {
            let g = grads.tensor(*id).expect("resolved id");
            let w = current.tensor_mut(*id).expect("resolved id");
            for (wi, gi) in w.iter_mut().zip(g) {
                *wi -= config.learning_rate * gi;
            }
        }
        steps += 1;
    }

    if converged {
        let losses = composite_loss(base, &current, edit, batch, config)?;
        return Ok(EditOutcome { report: report(base, &current, losses, steps, true), params: current });
    }
    let (_, params, _) = best.expect("at least one evaluation");
    let losses = composite_loss(base, &params, edit, batch, config)?;
    let report = report(base, &params, losses, steps, false);
    Err(EditError::DidNotConverge(Box::new(EditOutcome { params, report })))
}
