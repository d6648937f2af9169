//! Editing objectives and the per-edit optimisation loop.
//!
//! The objective is `l1 * L_e + l2 * L_loc + l3 * L_loc_m`: the edit loss on
//! the edited pair, a KL term on unrelated multimodal and text-only inputs,
//! and KL terms on adversarial inputs that pair the edit question with an
//! unrelated image (RI), no image (NI) or a related pair (CI). The edit is
//! applied by plain gradient descent on a clone of the base parameters.

mod apply;
mod batch;
mod config;
mod losses;

use alloc::boxed::Box;
use alloc::string::String;

pub use apply::{apply_edit, EditOutcome, EditReport};
pub use batch::{AdversarialBatch, Sample};
pub use config::{EditorConfig, LocalityKind, TargetSpec};
pub use losses::{
    base_locality_loss, composite_loss, edit_loss, locality_kl, multimodal_locality_loss, LossBreakdown,
};

use crate::model::ModelError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EditError {
    #[error("invalid editor config: {0}")]
    InvalidConfig(&'static str),
    #[error("unknown tensor {0:?}")]
    UnknownTensor(String),
    #[error("adversarial batch has no {0} sample")]
    IncompleteBatch(&'static str),
    #[error("non-finite gradient at step {step}")]
    NonFiniteGradient { step: usize },
    #[error("edit did not reach the loss threshold after {} steps", .0.report.steps)]
    DidNotConverge(Box<EditOutcome>),
    #[error(transparent)]
    Model(#[from] ModelError),
}
