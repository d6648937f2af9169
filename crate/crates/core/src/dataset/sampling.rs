use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{candidates, mix_seed, Corpus, DatasetError, EditRecord, ImageSpec};
use crate::model::TokenId;

/// Where the non-edit members of the sets came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    /// Record supplying T2 and I2.
    pub related: u64,
    /// Record supplying T3 and I3.
    pub unrelated: u64,
    /// Record supplying T4.
    pub text_only: u64,
}

/// The text set `T` and the image set `I` for one edit. Index 0 holds T1 / I1.
/// `None` in `images` is the absent image.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledSets {
    pub edit: EditRecord,
    pub texts: Vec<Vec<TokenId>>,
    pub images: Vec<Option<ImageSpec>>,
    /// Known answers of corpus pairings, keyed by 1-based `(text, image)`.
    pub answers: BTreeMap<(usize, usize), TokenId>,
    pub provenance: Option<Provenance>,
}

impl SampledSets {
    /// Arbitrary `k x k` sets; `texts[0]` and `images[0]` must be the edit's.
    pub fn from_parts(edit: EditRecord, texts: Vec<Vec<TokenId>>, images: Vec<Option<ImageSpec>>) -> Self {
        let mut answers = BTreeMap::new();
        answers.insert((1, 1), edit.answer);
        Self { edit, texts, images, answers, provenance: None }
    }
}

fn slot_disjoint(a: &EditRecord, b: &EditRecord) -> bool {
    match (&a.slots, &b.slots) {
        (Some(x), Some(y)) => !x.overlaps(y),
        _ => true,
    }
}

/// The two images disagree on every fact either question asks about. Records
/// without slot metadata must share no fact at all.
fn fact_disjoint(a: &EditRecord, b: &EditRecord) -> bool {
    match (&a.slots, &b.slots) {
        (Some(x), Some(y)) => [x.fact_key(), y.fact_key()]
            .iter()
            .all(|k| a.image.attrs.get(k) != b.image.attrs.get(k)),
        _ => !a.image.shares_fact(&b.image),
    }
}

/// Draw the four-by-four sets for `edit`.
pub fn sample_sets(edit: &EditRecord, corpus: &Corpus, seed: u64) -> Result<SampledSets, DatasetError> {
    sample_sets_excluding(edit, corpus, seed, &BTreeSet::new())
}

/// As [`sample_sets`], never drawing T2..T4 or I2..I3 from `excluded` records.
pub fn sample_sets_excluding(
    edit: &EditRecord,
    corpus: &Corpus,
    seed: u64,
    excluded: &BTreeSet<u64>,
) -> Result<SampledSets, DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, edit.id, 2));
    let related = candidates(edit, corpus)
        .find(|c| c.record.answer != edit.target && !excluded.contains(&c.record.id))
        .ok_or(DatasetError::NoCandidate { edit: edit.id })?
        .record;

    let pool: Vec<&EditRecord> = corpus
        .records()
        .iter()
        .filter(|r| {
            r.id != edit.id
                && r.id != related.id
                && !excluded.contains(&r.id)
                && r.question != edit.question
                && fact_disjoint(r, edit)
                && slot_disjoint(r, edit)
        })
        .collect();
    let unrelated = *pool.choose(&mut rng).ok_or(DatasetError::CorpusTooSmall { edit: edit.id, role: "T3/I3" })?;

    let taken = [edit.id, related.id, unrelated.id];
    let used = [&edit.question, &related.question, &unrelated.question];
    let pool: Vec<&EditRecord> = corpus
        .records()
        .iter()
        .filter(|r| {
            !taken.contains(&r.id)
                && !excluded.contains(&r.id)
                && !used.contains(&&r.question)
                && slot_disjoint(r, edit)
        })
        .collect();
    let text_only = *pool.choose(&mut rng).ok_or(DatasetError::CorpusTooSmall { edit: edit.id, role: "T4" })?;

    let mut answers = BTreeMap::new();
    answers.insert((1, 1), edit.answer);
    answers.insert((2, 2), related.answer);
    answers.insert((3, 3), unrelated.answer);
    Ok(SampledSets {
        edit: edit.clone(),
        texts: alloc::vec![
            edit.question.clone(),
            related.question.clone(),
            unrelated.question.clone(),
            text_only.question.clone()
        ],
        images: alloc::vec![
            Some(edit.image.clone()),
            Some(related.image.clone()),
            Some(unrelated.image.clone()),
            None
        ],
        answers,
        provenance: Some(Provenance { related: related.id, unrelated: unrelated.id, text_only: text_only.id }),
    })
}
