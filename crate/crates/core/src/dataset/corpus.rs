use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{DatasetError, Vocabulary};
use crate::math::l2_norm;
use crate::model::{ImageInput, ModelInput, TokenId};

/// Key of one image fact: `"object.attribute"`.
pub type FactKey = String;

/// One synthetic image: a closed attribute assignment plus its feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSpec {
    pub id: u64,
    /// `"object.attribute" -> value`. May be empty for externally supplied images.
    pub attrs: BTreeMap<FactKey, String>,
    pub features: Vec<f32>,
}

impl ImageSpec {
    /// True when the two images agree on at least one fact.
    pub fn shares_fact(&self, other: &ImageSpec) -> bool {
        self.attrs.iter().any(|(k, v)| other.attrs.get(k) == Some(v))
    }
}

/// Generator metadata for a question: which template asks about which slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuestionSlots {
    pub template: usize,
    pub object: String,
    pub attribute: String,
}

impl QuestionSlots {
    pub fn fact_key(&self) -> FactKey {
        format!("{}.{}", self.object, self.attribute)
    }

    /// Shares the object or the attribute.
    pub fn overlaps(&self, other: &QuestionSlots) -> bool {
        self.object == other.object || self.attribute == other.attribute
    }
}

/// One editable fact.
#[derive(Clone, Debug, PartialEq)]
pub struct EditRecord {
    pub id: u64,
    pub image: ImageSpec,
    pub question: Vec<TokenId>,
    /// Answer of the unedited world, `y_e`.
    pub answer: TokenId,
    /// Edit target `a`; never equal to `answer`.
    pub target: TokenId,
    pub rephrase_q: Vec<TokenId>,
    pub rephrase_img: ImageSpec,
    /// Unit-norm retrieval embedding.
    pub embedding: Vec<f64>,
    pub slots: Option<QuestionSlots>,
}

impl EditRecord {
    /// The edited pair `(I1, T1)`.
    pub fn input(&self) -> ModelInput<'_> {
        ModelInput::new(ImageInput::Features(&self.image.features), &self.question)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |reason: &str| Err(DatasetError::InvalidRecord { id: self.id, reason: reason.into() });
        if self.target == self.answer {
            return bad("target equals the pre-edit answer");
        }
        if self.question.is_empty() || self.rephrase_q.is_empty() {
            return bad("empty question");
        }
        if (l2_norm(&self.embedding) - 1.0).abs() > 1e-6 {
            return bad("embedding is not unit norm");
        }
        if self.image.features.len() != self.rephrase_img.features.len() {
            return bad("rephrased image has a different feature length");
        }
        Ok(())
    }
}

/// Immutable collection of records sharing one vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    vocab: Vocabulary,
    records: Vec<EditRecord>,
    by_id: BTreeMap<u64, usize>,
}

impl Corpus {
    pub fn new(vocab: Vocabulary, records: Vec<EditRecord>) -> Result<Self, DatasetError> {
        let mut by_id = BTreeMap::new();
        let dim = records.first().map(|r| r.embedding.len());
        let feat = records.first().map(|r| r.image.features.len());
        for (i, r) in records.iter().enumerate() {
            r.validate()?;
            if Some(r.embedding.len()) != dim || Some(r.image.features.len()) != feat {
                return Err(DatasetError::InvalidRecord { id: r.id, reason: "inconsistent vector length".into() });
            }
            let tokens = r.question.iter().chain(&r.rephrase_q).chain([&r.answer, &r.target]);
            if tokens.into_iter().any(|t| t.index() >= vocab.len()) {
                return Err(DatasetError::InvalidRecord { id: r.id, reason: "token outside vocabulary".into() });
            }
            if by_id.insert(r.id, i).is_some() {
                return Err(DatasetError::InvalidRecord { id: r.id, reason: "duplicate id".into() });
            }
        }
        Ok(Self { vocab, records, by_id })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn records(&self) -> &[EditRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&EditRecord> {
        self.by_id.get(&id).map(|&i| &self.records[i])
    }

    pub fn feature_dim(&self) -> usize {
        self.records.first().map_or(0, |r| r.image.features.len())
    }

    pub fn max_question_len(&self) -> usize {
        self.records.iter().map(|r| r.question.len().max(r.rephrase_q.len())).max().unwrap_or(0)
    }

    /// Every token that appears as an answer or an edit target.
    pub fn answer_tokens(&self) -> BTreeSet<TokenId> {
        self.records.iter().flat_map(|r| [r.answer, r.target]).collect()
    }
}
