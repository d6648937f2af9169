use alloc::boxed::Box;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::backward::{backward_from_logits, GradientScope};
use super::forward::{run, ImageInput, ModelInput, TokenId};
use super::{Gradients, ModelConfig, ModelError, Parameters};
use crate::math;

/// What the final position should predict.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Token(TokenId),
    /// Soft target over the whole vocabulary; must sum to one.
    Distribution(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    /// `None` trains the null-image path.
    pub image: Option<Vec<f32>>,
    pub text: Vec<TokenId>,
    pub target: Target,
}

impl TrainingExample {
    pub fn input(&self) -> ModelInput<'_> {
        let image = match &self.image {
            Some(f) => ImageInput::Features(f),
            None => ImageInput::Absent,
        };
        ModelInput::new(image, &self.text)
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default))]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Required exact-match accuracy over hard-target examples.
    pub target_accuracy: f64,
    /// Stop once an epoch's running accuracy reaches this value.
    pub stop_accuracy: f64,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            learning_rate: 3e-3,
            batch_size: 16,
            max_epochs: 40,
            target_accuracy: 0.95,
            stop_accuracy: 0.995,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub params: Parameters,
    pub accuracy: f64,
    pub epochs: usize,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainingFailure {
    #[error("no training examples")]
    EmptyCorpus,
    #[error("training stopped at accuracy {accuracy:.4} after {} epochs", loss_curve.len())]
    DidNotConverge { accuracy: f64, loss_curve: Vec<f64>, params: Box<Parameters> },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Adam over every tensor of a [`Parameters`] snapshot.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Parameters,
    v: Parameters,
    t: i32,
}

impl Adam {
    pub fn new(config: &ModelConfig, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Parameters::zeros(config),
            v: Parameters::zeros(config),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut Parameters, grads: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for id in Parameters::tensor_ids(&params.config) {
            let g = grads.tensor(id).expect("same layout");
            let m = self.m.tensor_mut(id).expect("same layout");
            let v = self.v.tensor_mut(id).expect("same layout");
            let p = params.tensor_mut(id).expect("same layout");
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= self.learning_rate * mh / (libm::sqrt(vh) + self.eps);
            }
        }
    }
}

fn zero_grads(grads: &mut Gradients) {
    for id in Parameters::tensor_ids(&grads.config.clone()) {
        grads.tensor_mut(id).expect("own layout").iter_mut().for_each(|x| *x = 0.0);
    }
}

/// Loss and final-position logit gradient for one example.
fn example_loss(probs: &[f64], target: &Target, dlogits: &mut [f64]) -> f64 {
    dlogits.copy_from_slice(probs);
    match target {
        Target::Token(t) => {
            dlogits[t.index()] -= 1.0;
            math::neg_log(probs[t.index()])
        }
        Target::Distribution(q) => {
            let mut loss = 0.0;
            for ((g, &qi), &pi) in dlogits.iter_mut().zip(q).zip(probs) {
                *g -= qi;
                if qi > 0.0 {
                    loss += qi * math::neg_log(pi);
                }
            }
            loss
        }
    }
}

/// Exact-match accuracy over the hard-target examples.
pub fn accuracy(params: &Parameters, examples: &[TrainingExample]) -> Result<f64, ModelError> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for ex in examples {
        if let Target::Token(t) = ex.target {
            let trace = run(params, &ex.input(), None)?;
            total += 1;
            if math::argmax(trace.answer_distribution()) == t.index() {
                hits += 1;
            }
        }
    }
    Ok(if total == 0 { 1.0 } else { hits as f64 / total as f64 })
}

/// Train a fresh model from `config.seed` with Adam on minibatches.
/// The result is rounded to `f32` precision.
pub fn train_base(
    examples: &[TrainingExample],
    config: &ModelConfig,
    settings: &TrainSettings,
) -> Result<TrainOutcome, TrainingFailure> {
    if examples.is_empty() {
        return Err(TrainingFailure::EmptyCorpus);
    }
    let mut params = Parameters::init(config)?;
    let mut adam = Adam::new(config, settings.learning_rate);
    let mut grads = Gradients::zeros(config);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut dlogits = alloc::vec![0.0; config.vocab_size];
    let scope = GradientScope::all();
    let batch = settings.batch_size.max(1);
    let mut loss_curve = Vec::new();
    let mut epochs = 0;

    for _ in 0..settings.max_epochs {
        epochs += 1;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut hits = 0usize;
        let mut hard = 0usize;
        for chunk in order.chunks(batch) {
            zero_grads(&mut grads);
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let ex = &examples[i];
                let trace = run(&params, &ex.input(), None)?;
                let probs = trace.answer_distribution();
                if let Target::Token(t) = ex.target {
                    hard += 1;
                    if math::argmax(probs) == t.index() {
                        hits += 1;
                    }
                }
                epoch_loss += example_loss(probs, &ex.target, &mut dlogits);
                backward_from_logits(&params, &trace, &dlogits, scale, &scope, &mut grads)?;
            }
            adam.step(&mut params, &grads);
        }
        loss_curve.push(epoch_loss / examples.len() as f64);
        let running = if hard == 0 { 1.0 } else { hits as f64 / hard as f64 };
        if running >= settings.stop_accuracy {
            break;
        }
    }

    params.round_to_f32();
    if !params.is_finite() {
        return Err(ModelError::NumericalOverflow { layer: config.n_layers, position: 0 }.into());
    }
    let acc = accuracy(&params, examples)?;
    if acc < settings.target_accuracy {
        return Err(TrainingFailure::DidNotConverge { accuracy: acc, loss_curve, params: Box::new(params) });
    }
    Ok(TrainOutcome { params, accuracy: acc, epochs, loss_curve })
}
