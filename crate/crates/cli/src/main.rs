//! `prefdiff`: run the preference-alignment pipeline stage by stage.
//!
//! Exit codes: 0 on success, 2 for usage or configuration errors, 3 for
//! failures while running.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use prefdiff::config::RunConfig;
use prefdiff::diffusion::ForwardCoeff;
use prefdiff::evalsuite::EvalReport;
use prefdiff::pipeline::{self, files, EvalOutput};

#[derive(Parser, Debug)]
#[command(name = "prefdiff", version, about = "Preference-aligned diffusion on a synthetic task")]
struct Cli {
    /// Configuration file (`key = value` lines); defaults are used otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the data-parallel loops (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Directory for checkpoints, logs and reports.
    #[arg(long, global = true, default_value = "run")]
    out_dir: PathBuf,
    /// Forward-process noise coefficient: `sqrt` or `as_printed`.
    #[arg(long, global = true)]
    forward_coeff: Option<ForwardCoeff>,
    /// Extra `key=value` configuration overrides, applied last.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the reference denoiser.
    Pretrain,
    /// Generate, score and filter preference pairs.
    BuildPrefs {
        /// Generator checkpoint [default: <out-dir>/reference.ckpt].
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Supervised warm-up then DPO fine-tuning.
    Align {
        /// Reference checkpoint [default: <out-dir>/reference.ckpt].
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Preference pairs [default: <out-dir>/prefs.jsonl].
        #[arg(long)]
        prefs: Option<PathBuf>,
    },
    /// Evaluate a checkpoint, optionally against a baseline.
    Eval {
        /// Checkpoint to evaluate [default: <out-dir>/aligned.ckpt].
        #[arg(long)]
        model: Option<PathBuf>,
        /// Baseline checkpoint; also the reference for preference accuracy.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Preference pairs whose held-out split is used for preference accuracy.
        #[arg(long)]
        prefs: Option<PathBuf>,
    },
    /// Per-strategy statistics of a preference file.
    InspectPrefs {
        /// Preference pairs [default: <out-dir>/prefs.jsonl].
        #[arg(long)]
        prefs: Option<PathBuf>,
    },
}

fn config(cli: &Cli) -> prefdiff::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(c) = cli.forward_coeff {
        cfg.schedule.forward_coeff = c;
    }
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| prefdiff::Error::Config(format!("override {kv:?} is not key=value")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn or_default(p: &Option<PathBuf>, dir: &Path, name: &str) -> PathBuf {
    p.clone().unwrap_or_else(|| dir.join(name))
}

fn comparison_table(model: &EvalReport, baseline: &EvalReport, diff: &EvalReport) -> String {
    let cols = [model.to_table(), baseline.to_table(), diff.to_table()];
    let split: Vec<Vec<&str>> = cols.iter().map(|t| t.lines().collect()).collect();
    let mut s = format!("{:<26}{:>10}{:>10}{:>10}\n", "metric", "model", "baseline", "diff");
    for i in 1..split[0].len() {
        let name = &split[0][i][..26];
        let val = |c: usize| split[c][i][26..].trim().to_string();
        s.push_str(&format!("{}{:>10}{:>10}{:>10}\n", name, val(0), val(1), val(2)));
    }
    s
}

fn run(cli: &Cli) -> prefdiff::Result<()> {
    let cfg = config(cli)?;
    prefdiff::par::init_workers(cli.workers);
    let dir = cli.out_dir.as_path();
    match &cli.command {
        Command::Pretrain => {
            log::info!("phase: pretrain (seed {})", cfg.seed);
            let path = pipeline::cmd_pretrain(&cfg, dir)?;
            println!("reference checkpoint: {}", path.display());
        }
        Command::BuildPrefs { model } => {
            log::info!("phase: build-prefs");
            let report = pipeline::cmd_build_prefs(&cfg, &or_default(model, dir, files::REFERENCE), dir)?;
            print!("{}", report.to_table());
            println!("pairs: {}", dir.join(files::PREFS).display());
        }
        Command::Align { reference, prefs } => {
            log::info!("phase: align");
            let path = pipeline::cmd_align(
                &cfg,
                &or_default(reference, dir, files::REFERENCE),
                &or_default(prefs, dir, files::PREFS),
                dir,
            )?;
            println!("aligned checkpoint: {}", path.display());
        }
        Command::Eval { model, baseline, prefs } => {
            log::info!("phase: eval");
            let out = pipeline::cmd_eval(
                &cfg,
                &or_default(model, dir, files::ALIGNED),
                baseline.as_deref(),
                prefs.as_deref(),
                dir,
            )?;
            match out {
                EvalOutput::Single(r) => print!("{}", r.to_table()),
                EvalOutput::Comparison(c) => print!("{}", comparison_table(&c.model, &c.baseline, &c.diff)),
            }
        }
        Command::InspectPrefs { prefs } => {
            let report = pipeline::inspect_prefs(&cfg, &or_default(prefs, dir, files::PREFS))?;
            print!("{}", report.to_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 3 })
        }
    }
}
