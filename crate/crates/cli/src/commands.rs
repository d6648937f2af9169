//! Subcommand bodies. Each validates its paths before doing any work.

use std::path::{Path, PathBuf};

use serde_json::json;
use tblind_core::attribution::{
    default_suffix_lengths, extract_key_tokens, mask_sweep, modality_ratio, AttributionConfig, SweepInput, SweepRow,
};
use tblind_core::dataset::{generate_corpus, training_examples, Corpus};
use tblind_core::math::argmax;
use tblind_core::model::{forward_with_trace, train_base, ImageInput, ModelInput};
use tblind_core::Parameters;

use crate::checkpoint::{self, TrainingInfo};
use crate::config::{sha256_hex, RunConfig};
use crate::corpus_io::{self, CorpusHeader};
use crate::error::CliError;
use crate::pipeline::{self, PipelineResult, Provenance};

/// Smallest stack the pipeline and the masking sweep accept.
pub const MIN_PIPELINE_LAYERS: usize = 4;

fn refuse_overwrite(path: &Path, force: bool) -> Result<(), CliError> {
    if path.exists() && !force {
        return Err(CliError::Config(format!("{} exists; pass --force to overwrite", path.display())));
    }
    Ok(())
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if !path.is_file() {
        return Err(CliError::Config(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

fn file_sha(path: &Path) -> Result<String, CliError> {
    std::fs::read(path).map(|b| sha256_hex(&b)).map_err(|e| CliError::io(path, e))
}

pub fn gen_data(cfg: &RunConfig, force: bool) -> Result<Corpus, CliError> {
    let out = &cfg.paths.corpus;
    refuse_overwrite(out, force)?;
    let (_, corpus) = generate_corpus(&cfg.world)?;
    let header = CorpusHeader {
        format: corpus_io::FORMAT.into(),
        config_hash: Some(cfg.hash()),
        seed: Some(cfg.world.seed),
        world: Some(cfg.world.clone()),
        vocabulary: Vec::new(),
    };
    corpus_io::save(out, &corpus, header)?;
    Ok(corpus)
}

pub fn train(cfg: &RunConfig, force: bool) -> Result<TrainingInfo, CliError> {
    require_file(&cfg.paths.corpus, "corpus")?;
    refuse_overwrite(&cfg.paths.checkpoint, force)?;
    let (corpus, _) = corpus_io::load(&cfg.paths.corpus)?;
    let model = cfg.model.for_corpus(&corpus);
    model.validate()?;
    let outcome = train_base(&training_examples(&corpus), &model, &cfg.train)?;
    let info = TrainingInfo {
        settings: cfg.train.clone(),
        accuracy: outcome.accuracy,
        epochs: outcome.epochs,
        loss_curve: outcome.loss_curve,
        corpus_sha256: file_sha(&cfg.paths.corpus)?,
    };
    checkpoint::save(&cfg.paths.checkpoint, &outcome.params, Some(info.clone()))?;
    Ok(info)
}

/// Corpus and checkpoint, checked against each other.
pub fn load_inputs(cfg: &RunConfig) -> Result<(Corpus, Parameters, Provenance), CliError> {
    require_file(&cfg.paths.corpus, "corpus")?;
    require_file(&cfg.paths.checkpoint, "checkpoint")?;
    let (corpus, _) = corpus_io::load(&cfg.paths.corpus)?;
    let (params, _) = checkpoint::load(&cfg.paths.checkpoint)?;
    let m = &params.config;
    if m.vocab_size != corpus.vocab().len()
        || m.image_feature_dim != corpus.feature_dim()
        || m.max_text_tokens < corpus.max_question_len()
    {
        return Err(CliError::Config("checkpoint was not trained on a corpus of this shape".into()));
    }
    let provenance =
        Provenance { corpus_sha256: file_sha(&cfg.paths.corpus)?, checkpoint_sha256: file_sha(&cfg.paths.checkpoint)? };
    Ok((corpus, params, provenance))
}

fn require_depth(params: &Parameters) -> Result<(), CliError> {
    if params.config.n_layers < MIN_PIPELINE_LAYERS {
        return Err(CliError::Config(format!(
            "model has {} layers; at least {MIN_PIPELINE_LAYERS} are required",
            params.config.n_layers
        )));
    }
    Ok(())
}

/// Result of a pipeline invocation.
#[derive(Debug)]
pub struct PipelineRun {
    pub dir: PathBuf,
    pub result: PipelineResult,
}

pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineRun, CliError> {
    cfg.validate()?;
    let (corpus, base, provenance) = load_inputs(cfg)?;
    require_depth(&base)?;
    let result = pipeline::execute(cfg, &corpus, &base)?;
    let files = pipeline::render(cfg, &corpus, &result);
    let timestamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string();
    let dir = pipeline::create_run_dir(&cfg.paths.output, &cfg.editor.preset, &timestamp)?;
    pipeline::write_run(&dir, cfg, &files, &timestamp, &provenance)?;
    Ok(PipelineRun { dir, result })
}

/// JSON key-token path for one corpus record.
pub fn trace(cfg: &RunConfig, record_id: u64, text_only: bool) -> Result<serde_json::Value, CliError> {
    cfg.attribution.validate()?;
    let (corpus, params, _) = load_inputs(cfg)?;
    let record = corpus.get(record_id).ok_or(tblind_core::dataset::DatasetError::UnknownRecord(record_id))?;
    let image = if text_only { ImageInput::Absent } else { ImageInput::Features(&record.image.features) };
    let input = ModelInput::new(image, &record.question);
    let (probs, trace) = forward_with_trace(&params, &input)?;
    let path = extract_key_tokens(&trace, &cfg.attribution)?;
    let vocab = corpus.vocab();
    let predicted = tblind_core::TokenId(argmax(&probs) as u32);
    Ok(json!({
        "format": "tb-trace-1",
        "config_hash": cfg.hash(),
        "seed": cfg.run.seed,
        "record": record_id,
        "text_only": text_only,
        "question": vocab.decode(&record.question),
        "answer": vocab.token(record.answer),
        "predicted": vocab.token(predicted),
        "path": path,
        "score": modality_ratio(&path, &params.config),
    }))
}

pub const SWEEP_FORMAT: &str = "tb-sweep-1";

pub fn sweep_rows(
    params: &Parameters,
    corpus: &Corpus,
    record_ids: &[u64],
    attribution: &AttributionConfig,
    suffix_lengths: &[usize],
) -> Result<Vec<SweepRow>, CliError> {
    attribution.validate()?;
    let records: Vec<_> = record_ids
        .iter()
        .map(|&id| corpus.get(id).ok_or(tblind_core::dataset::DatasetError::UnknownRecord(id)))
        .collect::<Result<_, _>>()?;
    let paths = records
        .iter()
        .map(|r| {
            let (_, trace) = forward_with_trace(params, &r.input())?;
            Ok(extract_key_tokens(&trace, attribution)?)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let inputs: Vec<SweepInput<'_>> =
        records.iter().zip(&paths).map(|(r, path)| SweepInput { input: r.input(), answer: r.answer, path }).collect();
    Ok(mask_sweep(params, &inputs, suffix_lengths)?)
}

/// CSV with one row per masked range; layers are one-based and inclusive.
pub fn mask_sweep_csv(
    cfg: &RunConfig,
    n_records: usize,
    suffix_lengths: Option<&[usize]>,
) -> Result<String, CliError> {
    cfg.attribution.validate()?;
    let (corpus, params, _) = load_inputs(cfg)?;
    require_depth(&params)?;
    let n_layers = params.config.n_layers;
    let lengths = match suffix_lengths {
        Some(l) if l.iter().any(|&x| x == 0 || x > n_layers) => {
            return Err(CliError::Config(format!("suffix lengths must lie in 1..={n_layers}")))
        }
        Some(l) => l.to_vec(),
        None => default_suffix_lengths(n_layers),
    };
    let ids = pipeline::select_edits(&corpus, n_records.min(corpus.len()), cfg.run.seed)?;
    let rows = sweep_rows(&params, &corpus, &ids, &cfg.attribution, &lengths)?;
    let hash = cfg.hash();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "format", "config_hash", "seed", "first_layer", "last_layer", "n_masked", "n_inputs", "accuracy",
        "unmasked_accuracy", "retained",
    ])
    .expect("in-memory write");
    for r in rows {
        w.write_record([
            SWEEP_FORMAT.to_string(),
            hash.clone(),
            cfg.run.seed.to_string(),
            (r.start + 1).to_string(),
            r.n_layers.to_string(),
            (r.n_layers - r.start).to_string(),
            ids.len().to_string(),
            format!("{}", r.accuracy),
            format!("{}", r.unmasked_accuracy),
            format!("{}", r.retained),
        ])
        .expect("in-memory write");
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8"))
}
