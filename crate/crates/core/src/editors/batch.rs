use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use super::LocalityKind;
use crate::dataset::{sample_sets_excluding, Corpus, DatasetError, EditRecord, ImageSpec, SampledSets};
use crate::model::{ImageInput, ModelInput, TokenId};

/// One model input owned by a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub question: Vec<TokenId>,
    /// `None` is the absent image.
    pub image: Option<Vec<f32>>,
}

impl Sample {
    pub fn new(question: &[TokenId], image: Option<&ImageSpec>) -> Self {
        Self { question: question.to_vec(), image: image.map(|i| i.features.clone()) }
    }

    pub fn input(&self) -> ModelInput<'_> {
        let image = match &self.image {
            Some(f) => ImageInput::Features(f),
            None => ImageInput::Absent,
        };
        ModelInput::new(image, &self.question)
    }
}

/// Training-side samples for the locality terms.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdversarialBatch {
    /// Edit question with an unrelated image.
    pub ri: Option<Sample>,
    /// Related question with its own image.
    pub ci: Option<Sample>,
    /// Edit question with no image.
    pub ni: Option<Sample>,
    /// Unrelated image-text pair.
    pub unrelated_multimodal: Option<Sample>,
    /// Unrelated question with no image.
    pub unrelated_text: Option<Sample>,
}

impl AdversarialBatch {
    pub fn sample(&self, kind: LocalityKind) -> Option<&Sample> {
        match kind {
            LocalityKind::RI => self.ri.as_ref(),
            LocalityKind::NI => self.ni.as_ref(),
            LocalityKind::CI => self.ci.as_ref(),
        }
    }

    /// Build a batch from a set draw that is disjoint from the evaluation draw.
    pub fn from_sets(sets: &SampledSets) -> Self {
        let t = &sets.texts;
        let i = &sets.images;
        Self {
            ri: Some(Sample::new(&t[0], i[2].as_ref())),
            ci: Some(Sample::new(&t[1], i[1].as_ref())),
            ni: Some(Sample::new(&t[0], None)),
            unrelated_multimodal: Some(Sample::new(&t[2], i[2].as_ref())),
            unrelated_text: Some(Sample::new(&t[3], None)),
        }
    }

    /// Seeded draw that avoids every record supplying the evaluation sets.
    pub fn draw(edit: &EditRecord, corpus: &Corpus, eval: &SampledSets, seed: u64) -> Result<Self, DatasetError> {
        let mut excluded = BTreeSet::new();
        if let Some(p) = &eval.provenance {
            excluded.extend([p.related, p.unrelated, p.text_only]);
        }
        let sets = sample_sets_excluding(edit, corpus, seed ^ 0x5EED_BA7C, &excluded)?;
        Ok(Self::from_sets(&sets))
    }
}
