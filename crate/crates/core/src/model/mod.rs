//! The subject model: an image-prefix decoder with parallel attention/MLP
//! residual blocks, full residual-stream capture and manual reverse mode.
//!
//! Every block computes `h = h_prev + attn(norm(h_prev)) + mlp(norm(h_prev))`,
//! so the trace decomposition `h_new = mlp_out + attn_out + h_prev` is exact.

mod backward;
mod config;
mod forward;
mod params;
mod train;

pub use backward::{backward, backward_from_logits, GradientScope};
pub use config::{ModelConfig, TokenKind};
pub use forward::{
    forward, forward_masked, forward_with_trace, predict, ForwardTrace, ImageInput, LayerTrace, MaskPlan,
    ModelInput, TokenId,
};
pub use params::{Gradients, LayerParams, LayerTensor, Matrix, Parameters, TensorId};
pub use train::{accuracy, train_base, Adam, Target, TrainOutcome, TrainSettings, TrainingExample, TrainingFailure};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {reason}")]
    InvalidConfig { reason: &'static str },
    #[error("token {token} at text position {position} is outside the vocabulary of {vocab_size}")]
    InvalidToken { position: usize, token: u32, vocab_size: usize },
    #[error("text length {len} outside 1..={max}")]
    InvalidLength { len: usize, max: usize },
    #[error("image input has {got} values, expected {expected}")]
    InvalidImage { expected: usize, got: usize },
    #[error("non-finite activation at layer {layer}, position {position}")]
    NumericalOverflow { layer: usize, position: usize },
    #[error("trace does not match the parameters: {reason}")]
    TraceMismatch { reason: &'static str },
    #[error("mask plan invalid at layer {layer} (position {position:?})")]
    InvalidMask { layer: usize, position: Option<usize> },
}
