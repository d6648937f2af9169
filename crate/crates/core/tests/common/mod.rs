#![allow(dead_code)]

use tblind_core::dataset::{generate_corpus, Corpus, World, WorldConfig};
use tblind_core::model::{ModelConfig, Parameters};

/// Two-layer config small enough for exhaustive finite differences.
pub fn tiny(seed: u64) -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        d_model: 8,
        n_heads: 2,
        d_ff: 12,
        vocab_size: 11,
        n_image_tokens: 2,
        max_text_tokens: 4,
        image_feature_dim: 5,
        seed,
    }
}

/// Four-layer config sized to a corpus.
pub fn small_for(corpus: &Corpus, seed: u64) -> ModelConfig {
    ModelConfig {
        n_layers: 4,
        d_model: 16,
        n_heads: 2,
        d_ff: 24,
        vocab_size: corpus.vocab().len(),
        n_image_tokens: 3,
        max_text_tokens: corpus.max_question_len(),
        image_feature_dim: corpus.feature_dim(),
        seed,
    }
}

pub fn world(n_records: usize, seed: u64) -> (World, Corpus) {
    generate_corpus(&WorldConfig { n_records, seed, ..WorldConfig::default() }).unwrap()
}

pub fn random_params(corpus: &Corpus, seed: u64) -> Parameters {
    Parameters::init(&small_for(corpus, seed)).unwrap()
}
