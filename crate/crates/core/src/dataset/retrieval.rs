use alloc::collections::BinaryHeap;
use core::cmp::Ordering;

use super::{Corpus, DatasetError, EditRecord};
use crate::math::cosine;

/// A retrieval hit.
#[derive(Clone, Copy, Debug)]
pub struct Retrieved<'a> {
    pub record: &'a EditRecord,
    pub similarity: f64,
}

#[derive(Clone, Copy, Debug)]
struct Entry {
    similarity: f64,
    id: u64,
    index: usize,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // Max-heap order: higher similarity first, then lower id.
    fn cmp(&self, other: &Self) -> Ordering {
        self.similarity.total_cmp(&other.similarity).then_with(|| other.id.cmp(&self.id))
    }
}

/// Corpus neighbours of an edit in descending cosine order, ties by ascending
/// id. The edit itself and records asking the identical question are skipped.
pub struct Candidates<'a> {
    corpus: &'a Corpus,
    heap: BinaryHeap<Entry>,
}

impl<'a> Iterator for Candidates<'a> {
    type Item = Retrieved<'a>;

    fn next(&mut self) -> Option<Self::Item> {
        let e = self.heap.pop()?;
        Some(Retrieved { record: &self.corpus.records()[e.index], similarity: e.similarity })
    }
}

pub fn candidates<'a>(edit: &EditRecord, corpus: &'a Corpus) -> Candidates<'a> {
    let heap = corpus
        .records()
        .iter()
        .enumerate()
        .filter(|(_, r)| r.id != edit.id && r.question != edit.question)
        .map(|(index, r)| Entry { similarity: cosine(&edit.embedding, &r.embedding), id: r.id, index })
        .collect();
    Candidates { corpus, heap }
}

/// Related sample for the edit: the most similar record whose own answer
/// differs from the edit target.
pub fn retrieve_similar<'a>(edit: &EditRecord, corpus: &'a Corpus) -> Result<Retrieved<'a>, DatasetError> {
    candidates(edit, corpus)
        .find(|c| c.record.answer != edit.target)
        .ok_or(DatasetError::NoCandidate { edit: edit.id })
}
