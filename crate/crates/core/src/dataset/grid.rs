use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use super::{EditRecord, ImageSpec, Provenance, SampledSets};
use crate::model::TokenId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum MetricClass {
    Rel,
    TGen,
    IGen,
    TLoc,
    ILoc,
    RILoc,
    NILoc,
    CILoc,
    Supplementary,
}

impl MetricClass {
    pub fn expectation(self) -> Expectation {
        match self {
            MetricClass::Rel | MetricClass::TGen | MetricClass::IGen => Expectation::EqualsTarget,
            MetricClass::RILoc | MetricClass::NILoc | MetricClass::CILoc => Expectation::NotTarget,
            MetricClass::TLoc | MetricClass::ILoc | MetricClass::Supplementary => Expectation::EqualsPreEdit,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricClass::Rel => "rel",
            MetricClass::TGen => "t_gen",
            MetricClass::IGen => "i_gen",
            MetricClass::TLoc => "t_loc",
            MetricClass::ILoc => "i_loc",
            MetricClass::RILoc => "ri_loc",
            MetricClass::NILoc => "ni_loc",
            MetricClass::CILoc => "ci_loc",
            MetricClass::Supplementary => "supplementary",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum Expectation {
    EqualsTarget,
    NotTarget,
    EqualsPreEdit,
}

/// Which member of a set a cell uses beyond the plain `T_i` / `I_j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum Variant {
    Plain,
    RephrasedText,
    RephrasedImage,
}

/// One cell of the grid; indices are 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct EvalCell {
    pub text: usize,
    pub image: usize,
    pub variant: Variant,
    pub class: MetricClass,
    pub expectation: Expectation,
    /// Metric family of a supplementary cell, when it has one.
    pub family: Option<MetricClass>,
}

/// The nine pairs reported by default, in report column order.
pub const CANONICAL_NINE: [(usize, usize); 9] = [(4, 4), (3, 3), (3, 1), (1, 2), (1, 3), (1, 4), (2, 1), (2, 2), (2, 4)];

impl EvalCell {
    /// `T1I2`, `T1'I1` (rephrased text) or `T1I1'` (rephrased image).
    pub fn id(&self) -> String {
        match self.variant {
            Variant::Plain => format!("T{}I{}", self.text, self.image),
            Variant::RephrasedText => format!("T{}'I{}", self.text, self.image),
            Variant::RephrasedImage => format!("T{}I{}'", self.text, self.image),
        }
    }

    pub fn is_canonical(&self) -> bool {
        self.variant == Variant::Plain && CANONICAL_NINE.contains(&(self.text, self.image))
    }

    pub fn is_locality(&self) -> bool {
        self.variant == Variant::Plain && self.class != MetricClass::Rel
    }
}

/// Class (and supplementary family) of grid pair `(i, j)`.
pub fn classify(text: usize, image: usize) -> (MetricClass, Option<MetricClass>) {
    use MetricClass::*;
    match (text, image) {
        (1, 1) => (Rel, None),
        (1, 2) | (2, 1) | (2, 2) => (CILoc, None),
        (1, 4) | (2, 4) => (NILoc, None),
        (1, 3) | (3, 1) => (RILoc, None),
        (4, 4) => (TLoc, None),
        (3, 3) => (ILoc, None),
        (3, 4) => (Supplementary, Some(NILoc)),
        (2, 3) | (4, 1) | (4, 2) | (4, 3) => (Supplementary, Some(RILoc)),
        _ => (Supplementary, None),
    }
}

fn cell(text: usize, image: usize, variant: Variant, class: MetricClass, family: Option<MetricClass>) -> EvalCell {
    EvalCell { text, image, variant, class, expectation: class.expectation(), family }
}

/// A cell together with its concrete input.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteCell {
    pub cell: EvalCell,
    pub question: Vec<TokenId>,
    /// `None` is the absent image.
    pub image: Option<ImageSpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSuite {
    pub edit: EditRecord,
    /// Rel first, then the locality cells in row-major order, then the two
    /// generalisation cells.
    pub cells: Vec<SuiteCell>,
    pub provenance: Option<Provenance>,
}

impl EvalSuite {
    pub fn locality_cells(&self) -> impl Iterator<Item = &SuiteCell> {
        self.cells.iter().filter(|c| c.cell.is_locality())
    }

    pub fn canonical_nine(&self) -> impl Iterator<Item = &SuiteCell> {
        self.cells.iter().filter(|c| c.cell.is_canonical())
    }

    pub fn cell(&self, text: usize, image: usize) -> Option<&SuiteCell> {
        self.cells.iter().find(|c| c.cell.variant == Variant::Plain && c.cell.text == text && c.cell.image == image)
    }
}

/// Cartesian product of the sets plus the two generalisation cells.
pub fn build_grid(sets: &SampledSets) -> EvalSuite {
    let mut cells = Vec::with_capacity(sets.texts.len() * sets.images.len() + 2);
    for (ti, text) in sets.texts.iter().enumerate() {
        for (ii, image) in sets.images.iter().enumerate() {
            let (class, family) = classify(ti + 1, ii + 1);
            cells.push(SuiteCell { cell: cell(ti + 1, ii + 1, Variant::Plain, class, family), question: text.clone(), image: image.clone() });
        }
    }
    let edit = &sets.edit;
    cells.push(SuiteCell {
        cell: cell(1, 1, Variant::RephrasedText, MetricClass::TGen, None),
        question: edit.rephrase_q.clone(),
        image: Some(edit.image.clone()),
    });
    cells.push(SuiteCell {
        cell: cell(1, 1, Variant::RephrasedImage, MetricClass::IGen, None),
        question: edit.question.clone(),
        image: Some(edit.rephrase_img.clone()),
    });
    EvalSuite { edit: edit.clone(), cells, provenance: sets.provenance.clone() }
}
