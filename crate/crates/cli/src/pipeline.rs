//! Edit-and-evaluate runs: one edit at a time on a fresh copy of the base
//! model, followed by aggregation and the run-directory files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use tblind_core::attribution::{
    extract_key_tokens, kl_modality_ratio, modality_ratio, AttributionConfig, KlModalityRatio, ModalityRatioSeries,
};
use tblind_core::dataset::{build_grid, sample_sets, Corpus, MetricClass, CANONICAL_NINE};
use tblind_core::editors::{apply_edit, AdversarialBatch, EditError, EditReport, EditorConfig};
use tblind_core::evaluation::{aggregate, cell_input, evaluate_suite, CellResult, MetricReport};
use tblind_core::model::forward_with_trace;
use tblind_core::Parameters;

use crate::config::{sha256_hex, RunConfig};
use crate::error::CliError;

pub const METRICS_FORMAT: &str = "tb-metrics-1";
pub const EDITS_FORMAT: &str = "tb-edits-1";
pub const DIAGNOSTICS_FORMAT: &str = "tb-diag-1";
pub const FAILURES_FORMAT: &str = "tb-failures-1";
pub const PER_PAIR_FORMAT: &str = "tb-pairs-1";
pub const MANIFEST_FORMAT: &str = "tb-run-1";

/// Metric columns in report order.
pub const METRIC_COLUMNS: [(MetricClass, &str); 8] = [
    (MetricClass::Rel, "Rel"),
    (MetricClass::TGen, "T-Gen"),
    (MetricClass::IGen, "I-Gen"),
    (MetricClass::TLoc, "T-Loc"),
    (MetricClass::ILoc, "I-Loc"),
    (MetricClass::RILoc, "RI-Loc"),
    (MetricClass::NILoc, "NI-Loc"),
    (MetricClass::CILoc, "CI-Loc"),
];

/// The grid cells that probe cross-modal confusion.
const CI_CELLS: [(usize, usize); 3] = [(1, 2), (2, 1), (2, 2)];

/// `count` record ids drawn without replacement, in draw order.
pub fn select_edits(corpus: &Corpus, count: usize, seed: u64) -> Result<Vec<u64>, CliError> {
    if count > corpus.len() {
        return Err(CliError::Config(format!("requested {count} edits from a corpus of {}", corpus.len())));
    }
    let mut ids: Vec<u64> = corpus.records().iter().map(|r| r.id).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    ids.truncate(count);
    Ok(ids)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EditDiagnostics {
    /// Image/text score ratio per layer on the edited input.
    pub pre: ModalityRatioSeries,
    pub post: ModalityRatioSeries,
    /// Output-distribution shift on the cross-modal cells.
    pub kl_ci: KlModalityRatio,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EditRun {
    pub edit_id: u64,
    pub report: EditReport,
    pub cells: Vec<CellResult>,
    pub diagnostics: Option<EditDiagnostics>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EditFailure {
    pub edit_id: u64,
    pub exit_code: i32,
    pub message: String,
}

fn diagnose(
    base: &Parameters,
    edited: &Parameters,
    input: &tblind_core::model::ModelInput<'_>,
    ci: &[tblind_core::model::ModelInput<'_>],
    attribution: &AttributionConfig,
) -> Result<EditDiagnostics, CliError> {
    let series = |p: &Parameters| -> Result<ModalityRatioSeries, CliError> {
        let (_, trace) = forward_with_trace(p, input)?;
        Ok(modality_ratio(&extract_key_tokens(&trace, attribution)?, &p.config))
    };
    Ok(EditDiagnostics { pre: series(base)?, post: series(edited)?, kl_ci: kl_modality_ratio(base, edited, ci)? })
}

/// Sample the sets, edit, and evaluate one record. A run that reaches the step
/// budget without converging is kept.
pub fn run_edit(
    base: &Parameters,
    corpus: &Corpus,
    edit_id: u64,
    editor: &EditorConfig,
    attribution: Option<&AttributionConfig>,
    seed: u64,
) -> Result<EditRun, CliError> {
    let edit = corpus.get(edit_id).ok_or(tblind_core::dataset::DatasetError::UnknownRecord(edit_id))?;
    let sets = sample_sets(edit, corpus, seed)?;
    let suite = build_grid(&sets);
    let batch = AdversarialBatch::draw(edit, corpus, &sets, seed)?;
    let outcome = match apply_edit(base, edit, &batch, editor) {
        Ok(o) => o,
        Err(EditError::DidNotConverge(o)) => *o,
        Err(e) => return Err(e.into()),
    };
    let cells = evaluate_suite(base, &outcome.params, &suite)?;
    let diagnostics = match attribution {
        None => None,
        Some(a) => {
            let ci: Vec<_> = CI_CELLS.iter().filter_map(|&(t, i)| suite.cell(t, i)).map(cell_input).collect();
            Some(diagnose(base, &outcome.params, &edit.input(), &ci, a)?)
        }
    };
    Ok(EditRun { edit_id, report: outcome.report, cells, diagnostics })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineResult {
    pub edit_ids: Vec<u64>,
    pub runs: Vec<EditRun>,
    pub failures: Vec<EditFailure>,
    /// `None` when no edit succeeded.
    pub report: Option<MetricReport>,
}

impl PipelineResult {
    /// Exit code of the first failure, or zero.
    pub fn exit_code(&self) -> i32 {
        self.failures.first().map_or(crate::error::exit::OK, |f| f.exit_code)
    }
}

/// Run every selected edit on `jobs` threads. Results keep selection order.
pub fn execute(cfg: &RunConfig, corpus: &Corpus, base: &Parameters) -> Result<PipelineResult, CliError> {
    cfg.validate()?;
    let editor = cfg.editor.resolve()?;
    editor.validate(&base.config)?;
    let edit_ids = select_edits(corpus, cfg.run.edits, cfg.run.seed)?;
    let attribution = cfg.run.diagnostics.then_some(&cfg.attribution);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.jobs)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<EditRun, CliError>> = pool.install(|| {
        edit_ids.par_iter().map(|&id| run_edit(base, corpus, id, &editor, attribution, cfg.run.seed)).collect()
    });
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (&edit_id, outcome) in edit_ids.iter().zip(outcomes) {
        match outcome {
            Ok(run) => runs.push(run),
            Err(e) => failures.push(EditFailure { edit_id, exit_code: e.exit_code(), message: e.to_string() }),
        }
    }
    let report = if runs.is_empty() {
        None
    } else {
        let cells: Vec<Vec<CellResult>> = runs.iter().map(|r| r.cells.clone()).collect();
        Some(aggregate(&cells)?)
    };
    Ok(PipelineResult { edit_ids, runs, failures, report })
}

/// Cell ids reported as columns: the canonical nine, then with `full` every
/// other cell in grid order. The per-pair table puts `Mean` between the two.
pub fn pair_columns(result: &PipelineResult, full: bool) -> Vec<String> {
    let mut cols: Vec<String> = CANONICAL_NINE.iter().map(|(t, i)| format!("T{t}I{i}")).collect();
    if full {
        if let Some(run) = result.runs.first() {
            for c in &run.cells {
                let id = c.cell.id();
                if !cols.contains(&id) {
                    cols.push(id);
                }
            }
        }
    }
    cols
}

/// Everything a run writes, rendered in memory. Only the manifest carries a
/// timestamp, so two runs of the same config agree on every other file.
#[derive(Clone, Debug, PartialEq)]
pub struct RunFiles {
    pub metrics_json: String,
    pub metrics_csv: String,
    pub per_pair_csv: String,
    pub edits_jsonl: String,
    pub diagnostics_jsonl: Option<String>,
    pub failures_jsonl: String,
}

impl RunFiles {
    pub fn named(&self) -> Vec<(&'static str, &str)> {
        let mut out = vec![
            ("metrics.json", self.metrics_json.as_str()),
            ("metrics.csv", self.metrics_csv.as_str()),
            ("per_pair.csv", self.per_pair_csv.as_str()),
            ("edits.jsonl", self.edits_jsonl.as_str()),
        ];
        if let Some(d) = &self.diagnostics_jsonl {
            out.push(("diagnostics.jsonl", d.as_str()));
        }
        out.push(("failures.jsonl", self.failures_jsonl.as_str()));
        out
    }
}

fn csv_row(fields: &[String]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(fields).expect("in-memory write");
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn jsonl_header(format: &str, cfg_hash: &str, seed: u64) -> String {
    let mut s = json!({ "format": format, "config_hash": cfg_hash, "seed": seed }).to_string();
    s.push('\n');
    s
}

pub fn render(cfg: &RunConfig, corpus: &Corpus, result: &PipelineResult) -> RunFiles {
    let hash = cfg.hash();
    let seed = cfg.run.seed;
    let editor = cfg.editor.preset.clone();
    let cols = pair_columns(result, cfg.run.full);

    let metrics_json = {
        let value = json!({
            "format": METRICS_FORMAT,
            "config_hash": hash,
            "seed": seed,
            "editor": editor,
            "status": if result.edit_ids.is_empty() { "no edits" } else if result.report.is_none() { "all edits failed" } else { "ok" },
            "n_selected": result.edit_ids.len(),
            "n_failed": result.failures.len(),
            "report": result.report,
            "adversarial_mean": result.report.as_ref().map(MetricReport::adversarial_mean),
        });
        let mut s = serde_json::to_string_pretty(&value).expect("metrics serialize");
        s.push('\n');
        s
    };

    let metrics_csv = {
        let mut header: Vec<String> =
            ["format", "config_hash", "seed", "editor", "n_edits"].iter().map(|s| s.to_string()).collect();
        header.extend(METRIC_COLUMNS.iter().map(|(_, n)| n.to_string()));
        header.push("Adv-Mean".into());
        let mut out = csv_row(&header);
        if let Some(r) = &result.report {
            let mut row = vec![METRICS_FORMAT.into(), hash.clone(), seed.to_string(), editor.clone(), r.n_edits.to_string()];
            row.extend(METRIC_COLUMNS.iter().map(|(c, _)| num(r.metric(*c))));
            row.push(num(r.adversarial_mean()));
            out.push_str(&csv_row(&row));
        }
        out
    };

    let per_pair_csv = {
        let mut header: Vec<String> =
            ["format", "config_hash", "seed", "editor", "n_edits"].iter().map(|s| s.to_string()).collect();
        header.extend(cols[..CANONICAL_NINE.len()].iter().cloned());
        header.push("Mean".into());
        header.extend(cols[CANONICAL_NINE.len()..].iter().cloned());
        if cfg.run.consistency {
            header.extend(cols.iter().map(|c| format!("consistency:{c}")));
        }
        let mut out = csv_row(&header);
        if let Some(r) = &result.report {
            let get = |m: &std::collections::BTreeMap<String, f64>, c: &str| num(m.get(c).copied().unwrap_or(f64::NAN));
            let mut row = vec![PER_PAIR_FORMAT.into(), hash.clone(), seed.to_string(), editor.clone(), r.n_edits.to_string()];
            row.extend(cols[..CANONICAL_NINE.len()].iter().map(|c| get(&r.per_pair, c)));
            row.push(num(r.mean_nine));
            row.extend(cols[CANONICAL_NINE.len()..].iter().map(|c| get(&r.per_pair, c)));
            if cfg.run.consistency {
                row.extend(cols.iter().map(|c| get(&r.consistency, c)));
            }
            out.push_str(&csv_row(&row));
        }
        out
    };

    let vocab = corpus.vocab();
    let word = |t: tblind_core::TokenId| vocab.token(t).unwrap_or("?").to_string();
    let mut edits_jsonl = jsonl_header(EDITS_FORMAT, &hash, seed);
    for run in &result.runs {
        let cells: Vec<_> = run
            .cells
            .iter()
            .map(|c| {
                json!({
                    "cell": c.cell.id(),
                    "class": c.cell.class.name(),
                    "pre": word(c.pre),
                    "post": word(c.post),
                    "target": word(c.target),
                    "satisfied": c.satisfied,
                    "consistent": c.consistent,
                })
            })
            .collect();
        let line = json!({
            "edit_id": run.edit_id,
            "converged": run.report.converged,
            "steps": run.report.steps,
            "losses": run.report.losses,
            "delta_norms": run.report.delta_norms,
            "cells": cells,
        });
        writeln!(edits_jsonl, "{line}").expect("string write");
    }

    let diagnostics_jsonl = cfg.run.diagnostics.then(|| {
        let mut out = jsonl_header(DIAGNOSTICS_FORMAT, &hash, seed);
        for run in &result.runs {
            if let Some(d) = &run.diagnostics {
                let line = json!({ "edit_id": run.edit_id, "score_pre": d.pre, "score_post": d.post, "kl_ci": d.kl_ci });
                writeln!(out, "{line}").expect("string write");
            }
        }
        out
    });

    let mut failures_jsonl = jsonl_header(FAILURES_FORMAT, &hash, seed);
    for f in &result.failures {
        writeln!(failures_jsonl, "{}", serde_json::to_string(f).expect("failure serializes")).expect("string write");
    }

    RunFiles { metrics_json, metrics_csv, per_pair_csv, edits_jsonl, diagnostics_jsonl, failures_jsonl }
}

/// `<output>/<UTC timestamp>-<editor>`, with a numeric suffix if taken.
pub fn create_run_dir(output: &Path, editor: &str, timestamp: &str) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(output).map_err(|e| CliError::io(output, e))?;
    let stem = format!("{timestamp}-{editor}");
    for n in 0.. {
        let name = if n == 0 { stem.clone() } else { format!("{stem}-{n}") };
        let dir = output.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(CliError::io(&dir, e)),
        }
    }
    unreachable!("unbounded suffix search")
}

/// Inputs recorded in the manifest.
#[derive(Clone, Debug, Default)]
pub struct Provenance {
    pub corpus_sha256: String,
    pub checkpoint_sha256: String,
}

pub fn write_run(
    dir: &Path,
    cfg: &RunConfig,
    files: &RunFiles,
    timestamp: &str,
    provenance: &Provenance,
) -> Result<(), CliError> {
    let config_toml = cfg.to_toml();
    let mut hashes = serde_json::Map::new();
    let mut write = |name: &str, body: &str| -> Result<(), CliError> {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| CliError::io(&path, e))?;
        hashes.insert(name.into(), sha256_hex(body.as_bytes()).into());
        Ok(())
    };
    write("config.toml", &config_toml)?;
    for (name, body) in files.named() {
        write(name, body)?;
    }
    let manifest = json!({
        "format": MANIFEST_FORMAT,
        "timestamp": timestamp,
        "config_hash": cfg.hash(),
        "seed": cfg.run.seed,
        "editor": cfg.editor.preset,
        "inputs": { "corpus_sha256": provenance.corpus_sha256, "checkpoint_sha256": provenance.checkpoint_sha256 },
        "files": hashes,
    });
    let path = dir.join("manifest.json");
    let mut body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    body.push('\n');
    std::fs::write(&path, body).map_err(|e| CliError::io(&path, e))
}
