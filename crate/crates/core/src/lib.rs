//! Desk-scale laboratory for multimodal model editing.
//!
//! The crate is `no_std` (with `alloc`) and holds every algorithm: the
//! instrumented subject model with manual reverse-mode gradients, the
//! synthetic attribute world and locality grid, the editing objectives,
//! token attribution and the metric engine. File formats, configuration and
//! the command line live in the `tblind` companion crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod attribution;
pub mod dataset;
pub mod editors;
pub mod evaluation;
pub mod math;
pub mod model;

pub use model::{ForwardTrace, Gradients, ModelConfig, Parameters, TokenId, TokenKind};
