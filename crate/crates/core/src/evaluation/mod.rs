//! Metric engine: greedy decoding of every suite cell on the pre- and
//! post-edit models, indicator scoring and aggregation over edits.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::dataset::{EvalCell, EvalSuite, Expectation, MetricClass, SuiteCell, CANONICAL_NINE};
use crate::model::{predict, ImageInput, ModelError, ModelInput, Parameters, TokenId};

pub fn exact_match(predicted: TokenId, reference: TokenId) -> bool {
    predicted == reference
}

/// The indicator of a cell given its expectation.
pub fn satisfied(expectation: Expectation, pre: TokenId, post: TokenId, target: TokenId) -> bool {
    match expectation {
        Expectation::EqualsTarget => exact_match(post, target),
        Expectation::NotTarget => !exact_match(post, target),
        Expectation::EqualsPreEdit => exact_match(post, pre),
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct CellResult {
    pub edit_id: u64,
    pub cell: EvalCell,
    pub pre: TokenId,
    pub post: TokenId,
    pub target: TokenId,
    pub pre_edit_answer: TokenId,
    pub satisfied: bool,
    /// `post == pre`, reported for every cell.
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("cell {cell} of edit {edit}: {source}")]
    Cell { edit: u64, cell: String, source: ModelError },
    #[error("no edits to aggregate")]
    NoEdits,
}

pub fn cell_input(cell: &SuiteCell) -> ModelInput<'_> {
    let image = match &cell.image {
        Some(i) => ImageInput::Features(&i.features),
        None => ImageInput::Absent,
    };
    ModelInput::new(image, &cell.question)
}

/// Evaluate every cell of `suite` on both models.
pub fn evaluate_suite(pre: &Parameters, post: &Parameters, suite: &EvalSuite) -> Result<Vec<CellResult>, EvalError> {
    let edit = &suite.edit;
    suite
        .cells
        .iter()
        .map(|c| {
            let annotate = |source| EvalError::Cell { edit: edit.id, cell: c.cell.id(), source };
            let input = cell_input(c);
            let before = predict(pre, &input).map_err(annotate)?;
            let after = predict(post, &input).map_err(annotate)?;
            Ok(CellResult {
                edit_id: edit.id,
                cell: c.cell,
                pre: before,
                post: after,
                target: edit.target,
                pre_edit_answer: edit.answer,
                satisfied: satisfied(c.cell.expectation, before, after, edit.target),
                consistent: before == after,
            })
        })
        .collect()
}

/// All eight metrics plus per-pair means. A metric with no evaluated cell is NaN.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct MetricReport {
    pub rel: f64,
    pub t_gen: f64,
    pub i_gen: f64,
    pub t_loc: f64,
    pub i_loc: f64,
    pub ri_loc: f64,
    pub ni_loc: f64,
    pub ci_loc: f64,
    /// Cell id to mean indicator, over every evaluated cell.
    pub per_pair: BTreeMap<String, f64>,
    /// Cell id to mean of `post == pre`.
    pub consistency: BTreeMap<String, f64>,
    /// Mean of the canonical nine per-pair scores.
    pub mean_nine: f64,
    /// `all`, `ri`, `ni` and `other` means over supplementary cells.
    pub supplementary: BTreeMap<String, f64>,
    pub n_edits: usize,
    pub metadata: BTreeMap<String, String>,
}

impl MetricReport {
    pub fn metric(&self, class: MetricClass) -> f64 {
        match class {
            MetricClass::Rel => self.rel,
            MetricClass::TGen => self.t_gen,
            MetricClass::IGen => self.i_gen,
            MetricClass::TLoc => self.t_loc,
            MetricClass::ILoc => self.i_loc,
            MetricClass::RILoc => self.ri_loc,
            MetricClass::NILoc => self.ni_loc,
            MetricClass::CILoc => self.ci_loc,
            MetricClass::Supplementary => self.supplementary.get("all").copied().unwrap_or(f64::NAN),
        }
    }

    /// Mean of RI-, NI- and CI-Loc.
    pub fn adversarial_mean(&self) -> f64 {
        (self.ri_loc + self.ni_loc + self.ci_loc) / 3.0
    }
}

#[derive(Default)]
struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    fn add(&mut self, hit: bool) {
        self.sum += if hit { 1.0 } else { 0.0 };
        self.n += 1;
    }

    fn value(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.sum / self.n as f64
        }
    }
}

/// Mean of each indicator over (edits x cells of its class).
pub fn aggregate(results: &[Vec<CellResult>]) -> Result<MetricReport, EvalError> {
    if results.is_empty() {
        return Err(EvalError::NoEdits);
    }
    let mut by_class: BTreeMap<MetricClass, Mean> = BTreeMap::new();
    let mut per_pair: BTreeMap<String, Mean> = BTreeMap::new();
    let mut consistency: BTreeMap<String, Mean> = BTreeMap::new();
    let mut supplementary: BTreeMap<String, Mean> = BTreeMap::new();
    for r in results.iter().flatten() {
        by_class.entry(r.cell.class).or_default().add(r.satisfied);
        let id = r.cell.id();
        per_pair.entry(id.clone()).or_default().add(r.satisfied);
        consistency.entry(id).or_default().add(r.consistent);
        if r.cell.class == MetricClass::Supplementary {
            let family = match r.cell.family {
                Some(MetricClass::RILoc) => "ri",
                Some(MetricClass::NILoc) => "ni",
                _ => "other",
            };
            supplementary.entry(family.into()).or_default().add(r.satisfied);
            supplementary.entry("all".into()).or_default().add(r.satisfied);
        }
    }
    let class = |c| by_class.get(&c).map_or(f64::NAN, Mean::value);
    let per_pair: BTreeMap<String, f64> = per_pair.into_iter().map(|(k, m)| (k, m.value())).collect();
    let nine: Vec<f64> =
        CANONICAL_NINE.iter().filter_map(|(t, i)| per_pair.get(&alloc::format!("T{t}I{i}")).copied()).collect();
    let mean_nine = if nine.is_empty() { f64::NAN } else { nine.iter().sum::<f64>() / nine.len() as f64 };
    Ok(MetricReport {
        rel: class(MetricClass::Rel),
        t_gen: class(MetricClass::TGen),
        i_gen: class(MetricClass::IGen),
        t_loc: class(MetricClass::TLoc),
        i_loc: class(MetricClass::ILoc),
        ri_loc: class(MetricClass::RILoc),
        ni_loc: class(MetricClass::NILoc),
        ci_loc: class(MetricClass::CILoc),
        per_pair,
        consistency: consistency.into_iter().map(|(k, m)| (k, m.value())).collect(),
        mean_nine,
        supplementary: supplementary.into_iter().map(|(k, m)| (k, m.value())).collect(),
        n_edits: results.len(),
        metadata: BTreeMap::new(),
    })
}
