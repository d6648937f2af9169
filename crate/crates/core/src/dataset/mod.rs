//! Corpus schema, the synthetic attribute world, retrieval, set sampling and
//! the text-by-image evaluation grid.

mod corpus;
mod grid;
mod retrieval;
mod sampling;
mod vocab;
mod world;

pub use corpus::{Corpus, EditRecord, FactKey, ImageSpec, QuestionSlots};
pub use grid::{build_grid, classify, EvalCell, EvalSuite, Expectation, MetricClass, SuiteCell, Variant, CANONICAL_NINE};
pub use retrieval::{candidates, retrieve_similar, Candidates, Retrieved};
pub use sampling::{sample_sets, sample_sets_excluding, Provenance, SampledSets};
pub use vocab::Vocabulary;
pub use world::{generate_corpus, training_examples, World, WorldConfig, TEMPLATES};

use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DatasetError {
    #[error("world can hold fewer unique facts than requested ({produced} of {requested})")]
    WorldExhausted { requested: usize, produced: usize },
    #[error("invalid world: {0}")]
    InvalidWorld(&'static str),
    #[error("no related record with an answer different from the target for edit {edit}")]
    NoCandidate { edit: u64 },
    #[error("corpus too small to draw {role} for edit {edit}")]
    CorpusTooSmall { edit: u64, role: &'static str },
    #[error("record {id}: {reason}")]
    InvalidRecord { id: u64, reason: String },
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("unknown record {0}")]
    UnknownRecord(u64),
}

/// Deterministic seed derivation (splitmix64 finaliser).
pub(crate) fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
