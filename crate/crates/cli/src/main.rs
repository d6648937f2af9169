use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tblind::error::exit;
use tblind::{commands, report, CliError, RunConfig};

/// Locality-aware multimodal model editing on a desk-scale subject model.
#[derive(Parser, Debug)]
#[command(name = "tblind", version)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct PathFlags {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct AttributionFlags {
    /// Acceptance threshold on the distance score.
    #[arg(long)]
    gamma: Option<f64>,
    /// Attention sources followed per accepted token.
    #[arg(long)]
    top_k: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus as JSON Lines.
    GenData {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        records: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Train the base model on a corpus.
    Train {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Edit and evaluate a batch of records, one edit at a time.
    Pipeline {
        #[command(flatten)]
        paths: PathFlags,
        #[arg(long)]
        output: Option<PathBuf>,
        /// `edit-only` or `composite`.
        #[arg(long)]
        editor: Option<String>,
        #[arg(long)]
        edits: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        jobs: Option<usize>,
        /// Report every grid cell.
        #[arg(long)]
        full: bool,
        /// Attribution before and after each edit.
        #[arg(long)]
        diagnostics: bool,
        /// Drop the `post == pre` columns.
        #[arg(long)]
        no_consistency: bool,
        /// Editing mode; only `single` is supported.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        targets: Option<String>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[command(flatten)]
        attribution: AttributionFlags,
    },
    /// Key-token path of one record as JSON.
    Trace {
        #[command(flatten)]
        paths: PathFlags,
        #[arg(long)]
        id: u64,
        /// Replace the image with the null image.
        #[arg(long)]
        text_only: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        attribution: AttributionFlags,
    },
    /// Accuracy with non-key tokens masked in the top layers.
    MaskSweep {
        #[command(flatten)]
        paths: PathFlags,
        #[arg(long, default_value_t = 300)]
        records: usize,
        /// Comma-separated masked suffix lengths.
        #[arg(long, value_delimiter = ',')]
        suffix: Option<Vec<usize>>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        attribution: AttributionFlags,
    },
    /// Merge pipeline runs into comparison tables.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn apply_paths(cfg: &mut RunConfig, p: PathFlags) {
    set(&mut cfg.paths.corpus, p.corpus);
    set(&mut cfg.paths.checkpoint, p.checkpoint);
}

fn apply_attribution(cfg: &mut RunConfig, a: AttributionFlags) {
    set(&mut cfg.attribution.gamma, a.gamma);
    set(&mut cfg.attribution.top_k, a.top_k);
}

fn write_or_print(out: Option<PathBuf>, body: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(&path, body).map_err(|e| CliError::io(&path, e)),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<i32, CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::GenData { out, records, seed, force } => {
            set(&mut cfg.paths.corpus, out);
            set(&mut cfg.world.n_records, records);
            set(&mut cfg.world.seed, seed);
            let corpus = commands::gen_data(&cfg, force)?;
            eprintln!("wrote {} records to {}", corpus.len(), cfg.paths.corpus.display());
        }
        Command::Train { corpus, out, epochs, seed, force } => {
            set(&mut cfg.paths.corpus, corpus);
            set(&mut cfg.paths.checkpoint, out);
            set(&mut cfg.train.max_epochs, epochs);
            set(&mut cfg.model.seed, seed);
            let info = commands::train(&cfg, force)?;
            eprintln!(
                "trained {} epochs, accuracy {:.4}; wrote {}",
                info.epochs,
                info.accuracy,
                cfg.paths.checkpoint.display()
            );
        }
        Command::Pipeline {
            paths,
            output,
            editor,
            edits,
            seed,
            jobs,
            full,
            diagnostics,
            no_consistency,
            mode,
            targets,
            learning_rate,
            max_steps,
            attribution,
        } => {
            apply_paths(&mut cfg, paths);
            apply_attribution(&mut cfg, attribution);
            set(&mut cfg.paths.output, output);
            set(&mut cfg.editor.preset, editor);
            set(&mut cfg.run.edits, edits);
            set(&mut cfg.run.seed, seed);
            set(&mut cfg.run.jobs, jobs);
            set(&mut cfg.run.mode, mode);
            cfg.run.full |= full;
            cfg.run.diagnostics |= diagnostics;
            cfg.run.consistency &= !no_consistency;
            if targets.is_some() {
                cfg.editor.targets = targets;
            }
            if learning_rate.is_some() {
                cfg.editor.learning_rate = learning_rate;
            }
            if max_steps.is_some() {
                cfg.editor.max_steps = max_steps;
            }
            let run = commands::run_pipeline(&cfg)?;
            if run.result.edit_ids.is_empty() {
                eprintln!("no edits");
            }
            for f in &run.result.failures {
                eprintln!("edit {} failed: {}", f.edit_id, f.message);
            }
            println!("{}", run.dir.display());
            return Ok(run.result.exit_code());
        }
        Command::Trace { paths, id, text_only, out, attribution } => {
            apply_paths(&mut cfg, paths);
            apply_attribution(&mut cfg, attribution);
            let value = commands::trace(&cfg, id, text_only)?;
            let mut body = serde_json::to_string_pretty(&value).expect("trace serializes");
            body.push('\n');
            write_or_print(out, &body)?;
        }
        Command::MaskSweep { paths, records, suffix, seed, out, attribution } => {
            apply_paths(&mut cfg, paths);
            apply_attribution(&mut cfg, attribution);
            set(&mut cfg.run.seed, seed);
            let body = commands::mask_sweep_csv(&cfg, records, suffix.as_deref())?;
            write_or_print(out, &body)?;
        }
        Command::Report { runs, out } => {
            report::write_report(&runs, &out)?;
            eprintln!("wrote {}/comparison.csv and {}/score_series.csv", out.display(), out.display());
        }
    }
    Ok(exit::OK)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::CONFIG } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
