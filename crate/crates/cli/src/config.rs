//! Run configuration (`tb-cfg-1`, TOML). Every section is optional; missing
//! keys take the defaults below and command-line flags override both.
//!
//! ```toml
//! format = "tb-cfg-1"
//!
//! [paths]
//! corpus = "corpus.jsonl"
//! checkpoint = "base.ckpt"
//! output = "runs"
//!
//! [world]          # n_objects, n_attributes, n_values, n_records, typical_prob, noise_std, seed
//! [model]          # n_layers, d_model, n_heads, d_ff, n_image_tokens, seed
//! [train]          # learning_rate, batch_size, max_epochs, target_accuracy, stop_accuracy, seed
//! [editor]         # preset, then optional lambdas, learning_rate, max_steps, targets, loss_combination, threshold
//! [attribution]    # gamma, top_k
//! [run]            # edits, seed, full, consistency, jobs, diagnostics, mode
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tblind_core::attribution::AttributionConfig;
use tblind_core::dataset::{Corpus, WorldConfig};
use tblind_core::editors::{EditorConfig, LocalityKind};
use tblind_core::model::TrainSettings;
use tblind_core::ModelConfig;

use crate::error::CliError;

pub const FORMAT: &str = "tb-cfg-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    pub checkpoint: PathBuf,
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { corpus: "corpus.jsonl".into(), checkpoint: "base.ckpt".into(), output: "runs".into() }
    }
}

/// Model dimensions; vocabulary, feature and text lengths come from the corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelShape {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_image_tokens: usize,
    pub seed: u64,
}

impl Default for ModelShape {
    fn default() -> Self {
        let desk = ModelConfig::desk(1, 1, 1, 1);
        Self {
            n_layers: desk.n_layers,
            d_model: desk.d_model,
            n_heads: desk.n_heads,
            d_ff: desk.d_ff,
            n_image_tokens: desk.n_image_tokens,
            seed: desk.seed,
        }
    }
}

impl ModelShape {
    pub fn for_corpus(&self, corpus: &Corpus) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            vocab_size: corpus.vocab().len(),
            n_image_tokens: self.n_image_tokens,
            max_text_tokens: corpus.max_question_len(),
            image_feature_dim: corpus.feature_dim(),
            seed: self.seed,
        }
    }
}

/// A named preset with optional per-field overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditorSection {
    pub preset: String,
    pub lambdas: Option<[f64; 3]>,
    pub learning_rate: Option<f64>,
    pub max_steps: Option<usize>,
    pub targets: Option<String>,
    pub loss_combination: Option<Vec<LocalityKind>>,
    pub threshold: Option<f64>,
}

impl Default for EditorSection {
    fn default() -> Self {
        Self {
            preset: "composite".into(),
            lambdas: None,
            learning_rate: None,
            max_steps: None,
            targets: None,
            loss_combination: None,
            threshold: None,
        }
    }
}

impl EditorSection {
    pub fn resolve(&self) -> Result<EditorConfig, CliError> {
        let mut cfg = EditorConfig::preset(&self.preset)
            .ok_or_else(|| CliError::Config(format!("unknown editor preset {:?} (edit-only, composite)", self.preset)))?;
        if let Some(l) = self.lambdas {
            cfg.lambdas = l;
        }
        if let Some(lr) = self.learning_rate {
            cfg.learning_rate = lr;
        }
        if let Some(n) = self.max_steps {
            cfg.max_steps = n;
        }
        if let Some(t) = &self.targets {
            cfg.targets = t.parse()?;
        }
        if let Some(c) = &self.loss_combination {
            cfg.loss_combination = c.iter().copied().collect();
        }
        if let Some(t) = self.threshold {
            cfg.threshold = t;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Number of edits drawn from the corpus.
    pub edits: usize,
    /// Seed for edit selection, set sampling and adversarial batches.
    pub seed: u64,
    /// Report every grid cell instead of the canonical nine.
    pub full: bool,
    /// Emit the `post == pre` column next to every per-pair score.
    pub consistency: bool,
    pub jobs: usize,
    /// Per-edit attribution before and after the edit.
    pub diagnostics: bool,
    /// Only `single` is supported.
    pub mode: String,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { edits: 60, seed: 11, full: false, consistency: true, jobs: 1, diagnostics: false, mode: "single".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub format: String,
    pub paths: Paths,
    pub world: WorldConfig,
    pub model: ModelShape,
    pub train: TrainSettings,
    pub editor: EditorSection,
    pub attribution: AttributionConfig,
    pub run: RunSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            format: FORMAT.into(),
            paths: Paths::default(),
            world: WorldConfig::default(),
            model: ModelShape::default(),
            train: TrainSettings::default(),
            editor: EditorSection::default(),
            attribution: AttributionConfig::default(),
            run: RunSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.format != FORMAT {
            return Err(CliError::Config(format!("unsupported config format {:?}", cfg.format)));
        }
        Ok(cfg)
    }

    /// Defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text)
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks that do not touch the filesystem.
    pub fn validate(&self) -> Result<(), CliError> {
        self.editor.resolve()?;
        self.attribution.validate()?;
        if self.run.jobs == 0 {
            return Err(CliError::Config("jobs must be at least 1".into()));
        }
        match self.run.mode.as_str() {
            "single" => Ok(()),
            "sequential" | "batch" => Err(CliError::Config(format!(
                "{} editing is not supported; edits are applied one at a time to a fresh copy of the base model",
                self.run.mode
            ))),
            other => Err(CliError::Config(format!("unknown editing mode {other:?}"))),
        }
    }

    /// SHA-256 over the canonical JSON form, excluding paths and the job count.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let obj = v.as_object_mut().expect("config is a table");
        obj.remove("paths");
        if let Some(run) = obj.get_mut("run").and_then(|r| r.as_object_mut()) {
            run.remove("jobs");
        }
        if let Ok(resolved) = self.editor.resolve() {
            obj.insert("editor".into(), serde_json::to_value(resolved).expect("editor serializes"));
        }
        let bytes = serde_json::to_vec(&v).expect("value serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.editor.learning_rate = Some(0.5);
        cfg.editor.loss_combination = Some(vec![LocalityKind::NI]);
        cfg.run.full = true;
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn hash_ignores_paths_and_jobs() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.paths.output = "elsewhere".into();
        b.run.jobs = 4;
        assert_eq!(a.hash(), b.hash());
        b.run.seed = 12;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn preset_overrides_apply() {
        let section = EditorSection { preset: "edit-only".into(), max_steps: Some(5), ..EditorSection::default() };
        let cfg = section.resolve().unwrap();
        assert_eq!(cfg.max_steps, 5);
        assert_eq!(cfg.lambdas, EditorConfig::edit_only().lambdas);
    }

    #[test]
    fn unsupported_modes_are_config_errors() {
        for mode in ["sequential", "batch", "nope"] {
            let mut cfg = RunConfig::default();
            cfg.run.mode = mode.into();
            assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("[run]\nedit = 3\n").is_err());
    }
}
