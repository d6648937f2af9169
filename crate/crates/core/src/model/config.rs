use super::ModelError;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Shape of the subject model.
///
/// Input positions `0..n_image_tokens` hold the image prefix; the text tokens
/// follow. A forward pass over `n` text tokens therefore sees
/// `N = n_image_tokens + n` positions and predicts from position `N - 1`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub n_image_tokens: usize,
    pub max_text_tokens: usize,
    /// Length of the raw image feature vector fed to the image projection.
    pub image_feature_dim: usize,
    pub seed: u64,
}

/// Modality of an input position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum TokenKind {
    Image,
    Text,
}

impl ModelConfig {
    /// The default desk configuration: 4 layers, width 64, 4 heads, 8 image tokens.
    pub fn desk(vocab_size: usize, image_feature_dim: usize, max_text_tokens: usize, seed: u64) -> Self {
        Self {
            n_layers: 4,
            d_model: 64,
            n_heads: 4,
            d_ff: 128,
            vocab_size,
            n_image_tokens: 8,
            max_text_tokens,
            image_feature_dim,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |reason| Err(ModelError::InvalidConfig { reason });
        if self.n_layers == 0 {
            return fail("n_layers must be positive");
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return fail("d_model, n_heads and d_ff must be positive");
        }
        if self.d_model % self.n_heads != 0 {
            return fail("d_model must be divisible by n_heads");
        }
        if self.n_image_tokens == 0 || self.max_text_tokens == 0 {
            return fail("need at least one image and one text position");
        }
        if self.vocab_size == 0 || self.image_feature_dim == 0 {
            return fail("vocab_size and image_feature_dim must be positive");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn max_positions(&self) -> usize {
        self.n_image_tokens + self.max_text_tokens
    }

    pub fn token_kind(&self, position: usize) -> TokenKind {
        if position < self.n_image_tokens {
            TokenKind::Image
        } else {
            TokenKind::Text
        }
    }
}
