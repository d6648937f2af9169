use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use super::{mix_seed, Corpus, DatasetError, EditRecord, ImageSpec, QuestionSlots, Vocabulary};
use crate::model::{Target, TokenId, TrainingExample};

const OBJECT_NAMES: [&str; 8] = ["cube", "ball", "cone", "ring", "disk", "star", "tube", "vase"];
const ATTRIBUTE_NAMES: [&str; 4] = ["color", "size", "material", "pattern"];
const VALUE_NAMES: [[&str; 8]; 4] = [
    ["red", "green", "blue", "yellow", "black", "white", "orange", "purple"],
    ["tiny", "small", "medium", "large", "huge", "giant", "narrow", "wide"],
    ["metal", "wood", "glass", "stone", "cloth", "paper", "rubber", "clay"],
    ["plain", "striped", "dotted", "checked", "wavy", "spotted", "marbled", "zigzag"],
];

/// Question templates; `A` and `O` are replaced by the attribute and object.
pub const TEMPLATES: [&[&str]; 4] = [
    &["what", "is", "the", "A", "of", "the", "O", "?"],
    &["what", "A", "is", "the", "O", "?"],
    &["tell", "me", "the", "A", "of", "the", "O", "?"],
    &["the", "O", "has", "which", "A", "?"],
];

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(default))]
pub struct WorldConfig {
    pub n_objects: usize,
    pub n_attributes: usize,
    pub n_values: usize,
    pub n_records: usize,
    /// Chance that an object's attribute takes its world-typical value.
    pub typical_prob: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self { n_objects: 4, n_attributes: 3, n_values: 6, n_records: 2000, typical_prob: 0.3, noise_std: 0.1, seed: 7 }
    }
}

/// Names and priors of a generated world.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub config: WorldConfig,
    pub objects: Vec<String>,
    pub attributes: Vec<String>,
    /// `values[attribute][value]`
    pub values: Vec<Vec<String>>,
    /// `typical[object][attribute]` value index.
    pub typical: Vec<Vec<usize>>,
}

impl World {
    pub fn feature_dim(&self) -> usize {
        self.objects.len() * self.attributes.len() * self.values[0].len()
    }

    fn feature_index(&self, object: usize, attribute: usize, value: usize) -> usize {
        (object * self.attributes.len() + attribute) * self.values[0].len() + value
    }

    pub fn question(&self, template: usize, object: usize, attribute: usize) -> Vec<String> {
        TEMPLATES[template]
            .iter()
            .map(|&w| match w {
                "A" => self.attributes[attribute].clone(),
                "O" => self.objects[object].clone(),
                _ => w.to_string(),
            })
            .collect()
    }

    /// One-hot fact blocks plus Gaussian noise drawn from `noise_seed`.
    pub fn features(&self, assignment: &[Vec<usize>], noise_seed: u64) -> Vec<f32> {
        let mut f = alloc::vec![0.0f64; self.feature_dim()];
        for (o, row) in assignment.iter().enumerate() {
            for (a, &v) in row.iter().enumerate() {
                f[self.feature_index(o, a, v)] = 1.0;
            }
        }
        if self.config.noise_std > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
            let normal = Normal::new(0.0, self.config.noise_std).expect("positive std");
            for x in &mut f {
                *x += normal.sample(&mut rng);
            }
        }
        f.into_iter().map(|x| x as f32).collect()
    }

    pub fn image(&self, id: u64, assignment: &[Vec<usize>], noise_seed: u64) -> ImageSpec {
        let mut attrs = BTreeMap::new();
        for (o, row) in assignment.iter().enumerate() {
            for (a, &v) in row.iter().enumerate() {
                attrs.insert(format!("{}.{}", self.objects[o], self.attributes[a]), self.values[a][v].clone());
            }
        }
        ImageSpec { id, attrs, features: self.features(assignment, noise_seed) }
    }

    /// Unit-norm bag of template slots: `[2 * template; attribute; object]`.
    pub fn embedding(&self, template: usize, object: usize, attribute: usize) -> Vec<f64> {
        let nt = TEMPLATES.len();
        let na = self.attributes.len();
        let mut e = alloc::vec![0.0; nt + na + self.objects.len()];
        e[template] = 2.0;
        e[nt + attribute] = 1.0;
        e[nt + na + object] = 1.0;
        let norm = libm::sqrt(6.0);
        e.iter_mut().for_each(|x| *x /= norm);
        e
    }

    pub fn vocabulary(&self) -> Vocabulary {
        let words = TEMPLATES.iter().flat_map(|t| t.iter()).filter(|w| !matches!(**w, "A" | "O")).map(|w| w.to_string());
        Vocabulary::new(
            words
                .chain(self.objects.iter().cloned())
                .chain(self.attributes.iter().cloned())
                .chain(self.values.iter().flatten().cloned()),
        )
    }
}

fn names(config: &WorldConfig) -> (Vec<String>, Vec<String>, Vec<Vec<String>>) {
    let objects = (0..config.n_objects)
        .map(|i| OBJECT_NAMES.get(i).map_or_else(|| format!("object{i}"), |s| s.to_string()))
        .collect();
    let attributes: Vec<String> = (0..config.n_attributes)
        .map(|i| ATTRIBUTE_NAMES.get(i).map_or_else(|| format!("attribute{i}"), |s| s.to_string()))
        .collect();
    let values = attributes
        .iter()
        .enumerate()
        .map(|(a, name)| {
            (0..config.n_values)
                .map(|v| match VALUE_NAMES.get(a).and_then(|row| row.get(v)) {
                    Some(s) => s.to_string(),
                    None => format!("{name}{v}"),
                })
                .collect()
        })
        .collect();
    (objects, attributes, values)
}

fn capacity(config: &WorldConfig) -> u128 {
    let mut images: u128 = 1;
    for _ in 0..config.n_objects * config.n_attributes {
        images = images.saturating_mul(config.n_values as u128);
    }
    images.saturating_mul((config.n_objects * config.n_attributes * TEMPLATES.len()) as u128)
}

/// An edit target outside `forbidden`, which holds the true value and every
/// text-only prior for the attribute. Falls back to any other value when the
/// priors cover the rest.
fn counterfactual(n: usize, value: usize, forbidden: &BTreeSet<usize>, rng: &mut ChaCha8Rng) -> usize {
    let allowed: Vec<usize> = (0..n).filter(|v| *v != value && !forbidden.contains(v)).collect();
    if allowed.is_empty() {
        (value + rng.random_range(1..n)) % n
    } else {
        allowed[rng.random_range(0..allowed.len())]
    }
}

/// Every value tied for most frequent in `counts`.
fn modes(counts: &[usize]) -> impl Iterator<Item = usize> + '_ {
    let top = counts.iter().copied().max().unwrap_or(0);
    counts.iter().enumerate().filter(move |(_, c)| **c == top && top > 0).map(|(v, _)| v)
}

/// Generate a world and `n_records` edit records with unique
/// (image attributes, question) pairs.
pub fn generate_corpus(config: &WorldConfig) -> Result<(World, Corpus), DatasetError> {
    if config.n_objects == 0 || config.n_attributes == 0 || config.n_records == 0 {
        return Err(DatasetError::InvalidWorld("objects, attributes and records must be positive"));
    }
    if config.n_values < 2 {
        return Err(DatasetError::InvalidWorld("need at least two values per attribute"));
    }
    if !(0.0..=1.0).contains(&config.typical_prob) || !(config.noise_std >= 0.0) {
        return Err(DatasetError::InvalidWorld("typical_prob must be in [0, 1] and noise_std nonnegative"));
    }
    if capacity(config) < config.n_records as u128 {
        return Err(DatasetError::WorldExhausted { requested: config.n_records, produced: 0 });
    }
    let (objects, attributes, values) = names(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let typical = (0..config.n_objects)
        .map(|_| (0..config.n_attributes).map(|_| rng.random_range(0..config.n_values)).collect())
        .collect();
    let world = World { config: config.clone(), objects, attributes, values, typical };
    let vocab = world.vocabulary();
    let encode = |words: &[String]| vocab.encode(words).expect("world words are in the vocabulary");

    let mut seen = BTreeSet::new();
    let mut records = Vec::with_capacity(config.n_records.min(1 << 16));
    let mut facts = Vec::with_capacity(records.capacity());
    let max_attempts = config.n_records * 20 + 100;
    let mut attempts = 0;
    while records.len() < config.n_records {
        attempts += 1;
        if attempts > max_attempts {
            return Err(DatasetError::WorldExhausted { requested: config.n_records, produced: records.len() });
        }
        let assignment: Vec<Vec<usize>> = (0..config.n_objects)
            .map(|o| {
                (0..config.n_attributes)
                    .map(|a| {
                        if rng.random_bool(config.typical_prob) {
                            world.typical[o][a]
                        } else {
                            rng.random_range(0..config.n_values)
                        }
                    })
                    .collect()
            })
            .collect();
        let object = rng.random_range(0..config.n_objects);
        let attribute = rng.random_range(0..config.n_attributes);
        let template = rng.random_range(0..TEMPLATES.len());
        let rephrase = (template + rng.random_range(1..TEMPLATES.len())) % TEMPLATES.len();
        let value = assignment[object][attribute];
        if !seen.insert((assignment.clone(), object, attribute, template)) {
            continue;
        }
        let id = records.len() as u64;
        let image = world.image(id, &assignment, mix_seed(config.seed, id, 0));
        let rephrase_img = world.image(id, &assignment, mix_seed(config.seed, id, 1));
        records.push(EditRecord {
            id,
            image,
            question: encode(&world.question(template, object, attribute)),
            answer: vocab.id(&world.values[attribute][value]).expect("value token"),
            target: TokenId(0),
            rephrase_q: encode(&world.question(rephrase, object, attribute)),
            rephrase_img,
            embedding: world.embedding(template, object, attribute),
            slots: Some(QuestionSlots {
                template,
                object: world.objects[object].clone(),
                attribute: world.attributes[attribute].clone(),
            }),
        });
        facts.push((object, attribute, value));
    }
    // Targets avoid every typical value and every modal answer for the
    // attribute, so no text-only prior already predicts them.
    let mut counts = alloc::vec![alloc::vec![alloc::vec![0usize; config.n_values]; config.n_attributes]; config.n_objects];
    for &(o, a, v) in &facts {
        counts[o][a][v] += 1;
    }
    let forbidden: Vec<BTreeSet<usize>> = (0..config.n_attributes)
        .map(|a| (0..config.n_objects).flat_map(|o| modes(&counts[o][a]).chain([world.typical[o][a]])).collect())
        .collect();
    for (record, &(_, a, v)) in records.iter_mut().zip(&facts) {
        let mut trng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, record.id, 2));
        let target = counterfactual(config.n_values, v, &forbidden[a], &mut trng);
        record.target = vocab.id(&world.values[a][target]).expect("value token");
    }
    let corpus = Corpus::new(vocab, records)?;
    Ok((world, corpus))
}

/// Base-model training set: every record's (image, question) with its answer,
/// plus one text-only example per distinct question whose target is the modal
/// answer over records asking about the same fact (lowest token on ties).
/// Records without slots group by question text.
pub fn training_examples(corpus: &Corpus) -> Vec<TrainingExample> {
    let vocab_size = corpus.vocab().len();
    let fact = |r: &EditRecord| match &r.slots {
        Some(s) => (s.fact_key(), Vec::new()),
        None => (String::new(), r.question.clone()),
    };
    let mut counts: BTreeMap<_, Vec<usize>> = BTreeMap::new();
    let mut questions: BTreeMap<&[TokenId], _> = BTreeMap::new();
    let mut out = Vec::with_capacity(corpus.len() + 64);
    for r in corpus.records() {
        out.push(TrainingExample {
            image: Some(r.image.features.clone()),
            text: r.question.clone(),
            target: Target::Token(r.answer),
        });
        let key = fact(r);
        counts.entry(key.clone()).or_insert_with(|| alloc::vec![0; vocab_size])[r.answer.index()] += 1;
        questions.entry(&r.question).or_insert(key);
    }
    for (question, key) in questions {
        let prior = modes(&counts[&key]).next().expect("every fact has an answer");
        out.push(TrainingExample { image: None, text: question.to_vec(), target: Target::Token(TokenId(prior as u32)) });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> WorldConfig {
        WorldConfig { n_records: n, ..WorldConfig::default() }
    }

    #[test]
    fn generation_is_deterministic() {
        let (_, a) = generate_corpus(&small(50)).unwrap();
        let (_, b) = generate_corpus(&small(50)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn targets_avoid_text_only_labels() {
        let (_, corpus) = generate_corpus(&small(400)).unwrap();
        let examples = training_examples(&corpus);
        let labels: BTreeMap<&[TokenId], TokenId> = examples
            .iter()
            .filter(|e| e.image.is_none())
            .map(|e| match e.target {
                Target::Token(t) => (e.text.as_slice(), t),
                Target::Distribution(_) => panic!("text-only targets are hard"),
            })
            .collect();
        for r in corpus.records() {
            assert_ne!(labels[r.question.as_slice()], r.target, "record {}", r.id);
            assert_ne!(labels[r.rephrase_q.as_slice()], r.target, "record {}", r.id);
        }
    }

    #[test]
    fn targets_avoid_every_typical_value() {
        let (world, corpus) = generate_corpus(&small(400)).unwrap();
        for r in corpus.records() {
            let slots = r.slots.as_ref().unwrap();
            let a = world.attributes.iter().position(|x| *x == slots.attribute).unwrap();
            let target = corpus.vocab().token(r.target).unwrap();
            assert!(world.typical.iter().all(|t| world.values[a][t[a]] != target), "record {}", r.id);
        }
    }

    #[test]
    fn tiny_world_is_exhausted() {
        let cfg = WorldConfig { n_objects: 1, n_attributes: 1, n_values: 2, n_records: 9, ..WorldConfig::default() };
        assert!(matches!(generate_corpus(&cfg), Err(DatasetError::WorldExhausted { .. })));
        let cfg = WorldConfig { n_records: 8, ..cfg };
        assert_eq!(generate_corpus(&cfg).unwrap().1.len(), 8);
    }

    #[test]
    fn features_depend_only_on_attributes_and_seed() {
        let (world, _) = generate_corpus(&small(1)).unwrap();
        let assignment = alloc::vec![alloc::vec![0, 1, 2]; 4];
        assert_eq!(world.features(&assignment, 3), world.features(&assignment, 3));
        assert_ne!(world.features(&assignment, 3), world.features(&assignment, 4));
    }

    #[test]
    fn questions_end_with_a_question_mark() {
        let (_, corpus) = generate_corpus(&small(40)).unwrap();
        let q = corpus.vocab().id("?").unwrap();
        for r in corpus.records() {
            assert_eq!(r.question.last(), Some(&q));
            assert_eq!(r.rephrase_q.last(), Some(&q));
            assert_ne!(r.question, r.rephrase_q);
        }
    }
}
