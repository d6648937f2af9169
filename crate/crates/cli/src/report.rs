//! Merging run directories into comparison tables and plot-ready series.

use std::path::{Path, PathBuf};

use serde_json::Value;
use tblind_core::dataset::CANONICAL_NINE;

use crate::error::CliError;
use crate::pipeline::METRIC_COLUMNS;

pub const COMPARISON_FORMAT: &str = "tb-compare-1";
pub const SERIES_FORMAT: &str = "tb-series-1";

/// One pipeline run directory as read back from disk.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub label: String,
    pub metrics: Value,
    pub diagnostics: Vec<Value>,
}

fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn load_run(dir: &Path) -> Result<RunSummary, CliError> {
    let metrics = read_json(&dir.join("metrics.json"))?;
    if metrics["format"] != crate::pipeline::METRICS_FORMAT {
        return Err(CliError::Data(format!("{}: not a pipeline run", dir.display())));
    }
    let mut diagnostics = Vec::new();
    let diag = dir.join("diagnostics.jsonl");
    if diag.exists() {
        let text = std::fs::read_to_string(&diag).map_err(|e| CliError::io(&diag, e))?;
        for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            diagnostics.push(serde_json::from_str(line).map_err(|e| CliError::Data(format!("{}: {e}", diag.display())))?);
        }
    }
    let label = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
    Ok(RunSummary { label, metrics, diagnostics })
}

/// A JSON number, or NaN for `null` (how non-finite values are serialized).
fn number(v: &Value) -> String {
    match v.as_f64() {
        Some(x) => format!("{x}"),
        None => "NaN".into(),
    }
}

fn text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn metric_key(name: &str) -> String {
    name.to_lowercase().replace('-', "_")
}

pub fn comparison_columns() -> Vec<String> {
    let mut cols: Vec<String> =
        ["format", "run", "editor", "config_hash", "seed", "n_edits"].iter().map(|s| s.to_string()).collect();
    cols.extend(CANONICAL_NINE.iter().map(|(t, i)| format!("T{t}I{i}")));
    cols.push("Mean".into());
    cols.extend(METRIC_COLUMNS.iter().map(|(_, n)| n.to_string()));
    cols.push("Adv-Mean".into());
    cols
}

/// One row per run; columns do not depend on the inputs.
pub fn comparison_csv(runs: &[RunSummary]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(comparison_columns()).expect("in-memory write");
    for run in runs {
        let m = &run.metrics;
        let r = &m["report"];
        let mut row = vec![
            COMPARISON_FORMAT.to_string(),
            run.label.clone(),
            text(&m["editor"]),
            text(&m["config_hash"]),
            text(&m["seed"]),
            if r.is_null() { "0".into() } else { text(&r["n_edits"]) },
        ];
        row.extend(CANONICAL_NINE.iter().map(|(t, i)| number(&r["per_pair"][format!("T{t}I{i}")])));
        row.push(number(&r["mean_nine"]));
        row.extend(METRIC_COLUMNS.iter().map(|(_, n)| number(&r[metric_key(n)])));
        row.push(number(&m["adversarial_mean"]));
        w.write_record(row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
}

/// Long format: one row per (run, edit, phase, layer) of the image/text score
/// ratio. Layers are one-based.
pub fn series_csv(runs: &[RunSummary]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["format", "run", "editor", "edit_id", "phase", "layer", "image_sum", "text_sum", "ratio", "undefined"])
        .expect("in-memory write");
    for run in runs {
        let editor = text(&run.metrics["editor"]);
        for d in &run.diagnostics {
            for phase in ["pre", "post"] {
                let layers = d[format!("score_{phase}")]["layers"].as_array().cloned().unwrap_or_default();
                for (l, layer) in layers.iter().enumerate() {
                    let undefined = layer["undefined"].as_bool().unwrap_or(false);
                    w.write_record([
                        SERIES_FORMAT.to_string(),
                        run.label.clone(),
                        editor.clone(),
                        text(&d["edit_id"]),
                        phase.to_string(),
                        (l + 1).to_string(),
                        number(&layer["image_sum"]),
                        number(&layer["text_sum"]),
                        if undefined { "inf".into() } else { number(&layer["ratio"]) },
                        undefined.to_string(),
                    ])
                    .expect("in-memory write");
                }
            }
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
}

/// Write `comparison.csv` and `score_series.csv` under `out`.
pub fn write_report(runs: &[PathBuf], out: &Path) -> Result<(), CliError> {
    if runs.is_empty() {
        return Err(CliError::Config("report needs at least one run directory".into()));
    }
    let summaries = runs.iter().map(|d| load_run(d)).collect::<Result<Vec<_>, _>>()?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    for (name, body) in [("comparison.csv", comparison_csv(&summaries)), ("score_series.csv", series_csv(&summaries))] {
        let path = out.join(name);
        std::fs::write(&path, body).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}
