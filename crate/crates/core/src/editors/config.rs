use alloc::collections::BTreeSet;
#[cfg(feature = "serde")]
use alloc::string::String;
use alloc::string::ToString;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use super::EditError;
use crate::model::{LayerTensor, ModelConfig, TensorId};

/// Which tensors an edit may change.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TargetSpec {
    /// MLP weights and biases of the top three layers.
    D,
    /// The image projection and its bias.
    V,
    /// `D` and `V` together.
    DV,
    Named(Vec<TensorId>),
}

impl TargetSpec {
    pub fn resolve(&self, config: &ModelConfig) -> Result<Vec<TensorId>, EditError> {
        let d = || {
            let start = config.n_layers.saturating_sub(3);
            (start..config.n_layers).flat_map(|l| LayerTensor::MLP.iter().map(move |&t| TensorId::Layer(l, t)))
        };
        let v = [TensorId::ImageProjection, TensorId::ImageBias];
        let ids: Vec<TensorId> = match self {
            TargetSpec::D => d().collect(),
            TargetSpec::V => v.to_vec(),
            TargetSpec::DV => d().chain(v).collect(),
            TargetSpec::Named(ids) => {
                for id in ids {
                    if let TensorId::Layer(l, _) = id {
                        if *l >= config.n_layers {
                            return Err(EditError::UnknownTensor(alloc::format!("{id}")));
                        }
                    }
                }
                ids.clone()
            }
        };
        if ids.is_empty() {
            return Err(EditError::InvalidConfig("target tensor set is empty"));
        }
        let unique: BTreeSet<TensorId> = ids.iter().copied().collect();
        Ok(unique.into_iter().collect())
    }
}

impl fmt::Display for TargetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetSpec::D => f.write_str("D"),
            TargetSpec::V => f.write_str("V"),
            TargetSpec::DV => f.write_str("DV"),
            TargetSpec::Named(ids) => {
                for (i, id) in ids.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{id}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for TargetSpec {
    type Err = EditError;

    /// `D`, `V`, `DV`, or a comma-separated list of tensor names.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "D" => Ok(TargetSpec::D),
            "V" => Ok(TargetSpec::V),
            "DV" => Ok(TargetSpec::DV),
            other => other
                .split(',')
                .map(|name| TensorId::parse(name.trim()).ok_or_else(|| EditError::UnknownTensor(name.trim().to_string())))
                .collect::<Result<Vec<_>, _>>()
                .map(TargetSpec::Named),
        }
    }
}

#[cfg(feature = "serde")]
impl Serialize for TargetSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[cfg(feature = "serde")]
impl<'de> Deserialize<'de> for TargetSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The adversarial sample types of the multimodal locality loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum LocalityKind {
    RI,
    NI,
    CI,
}

impl LocalityKind {
    pub const ALL: [LocalityKind; 3] = [LocalityKind::RI, LocalityKind::NI, LocalityKind::CI];
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct EditorConfig {
    /// Weights of the edit loss, the unrelated-sample locality loss and the
    /// multimodal locality loss.
    pub lambdas: [f64; 3],
    pub learning_rate: f64,
    pub max_steps: usize,
    pub targets: TargetSpec,
    pub loss_combination: BTreeSet<LocalityKind>,
    /// Stop once the edit loss drops below this value.
    pub threshold: f64,
}

impl EditorConfig {
    /// Edit loss plus both locality terms with every adversarial type.
    pub fn composite() -> Self {
        Self {
            lambdas: [0.1, 1.0, 1.0],
            learning_rate: 2.5,
            max_steps: 200,
            targets: TargetSpec::D,
            loss_combination: LocalityKind::ALL.into_iter().collect(),
            threshold: 0.05,
        }
    }

    /// The edit loss alone.
    pub fn edit_only() -> Self {
        Self { lambdas: [1.0, 0.0, 0.0], loss_combination: BTreeSet::new(), ..Self::composite() }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "composite" => Some(Self::composite()),
            "edit-only" => Some(Self::edit_only()),
            _ => None,
        }
    }

    pub fn validate(&self, model: &ModelConfig) -> Result<(), EditError> {
        if self.lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(EditError::InvalidConfig("lambdas must be finite and nonnegative"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(EditError::InvalidConfig("learning rate must be positive"));
        }
        if !(self.threshold.is_finite() && self.threshold > 0.0) {
            return Err(EditError::InvalidConfig("threshold must be positive"));
        }
        self.targets.resolve(model).map(|_| ())
    }
}
