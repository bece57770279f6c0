//! End-to-end stages: pretrain a reference model, build a preference
//! dataset from its generations, align it (SFT then DPO), and evaluate.
//!
//! All randomness comes from the root seed through named sub-streams, so any
//! stage can be rerun on its own and reproduce the same outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ReferenceChoice, RunConfig};
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::evalsuite::{self, EvalInputs, EvalReport};
use crate::preference::{self, Dataset, DatasetReport, Generator, PreferencePair, StrategyTag};
use crate::rng;
use crate::toyworld::{ConditionSpec, Sample, ToyWorld};
use crate::trainer::{self, Checkpoint, CheckpointHeader, MetricsLog, Phase, TrainExample};

/// Seed sub-streams of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub data: u64,
    pub init: u64,
    pub pretrain: u64,
    pub prefs: u64,
    pub split: u64,
    pub sft: u64,
    pub dpo: u64,
    pub eval: u64,
}

impl Seeds {
    pub fn new(root: u64) -> Self {
        Self {
            data: rng::derive(root, "data"),
            init: rng::derive(root, "init"),
            pretrain: rng::derive(root, "pretrain"),
            prefs: rng::derive(root, "prefs"),
            split: rng::derive(root, "split"),
            sft: rng::derive(root, "align/sft"),
            dpo: rng::derive(root, "align/dpo"),
            eval: rng::derive(root, "eval"),
        }
    }
}

pub fn world(cfg: &RunConfig) -> Result<ToyWorld> {
    ToyWorld::new(cfg.world.clone())
}

pub fn header(cfg: &RunConfig, phase: Phase, step_count: usize) -> CheckpointHeader {
    CheckpointHeader {
        arch: cfg.arch(),
        n_steps: cfg.schedule.n_steps,
        beta_start: cfg.schedule.beta_start,
        beta_end: cfg.schedule.beta_end,
        forward_coeff: cfg.schedule.forward_coeff,
        seed: cfg.seed,
        phase,
        step_count,
    }
}

/// Ground-truth training data: random conditions of 1 to `max_events`
/// events, each with one noisy synthesis. Returns `(train, heldout)`.
pub fn pretrain_data(cfg: &RunConfig, world: &ToyWorld) -> Result<(Vec<TrainExample>, Vec<TrainExample>)> {
    let seed = Seeds::new(cfg.seed).data;
    let mut r = rng::rng_from(seed);
    let mut all = Vec::with_capacity(cfg.pretrain.n_samples);
    for i in 0..cfg.pretrain.n_samples {
        let condition = world.random_condition(&mut r, format!("pt{i}"), 1, world.max_events());
        let sample = world.synthesize_ground_truth(&condition, cfg.pretrain.noise_scale, rng::derive_index(seed, i as u64))?;
        all.push(TrainExample { condition, sample });
    }
    let n_held = (cfg.pretrain.n_samples as f64 * cfg.pretrain.heldout_fraction).round() as usize;
    let held = all.split_off(all.len() - n_held.min(all.len()));
    Ok((all, held))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    /// Held-out loss at initialisation and after each epoch.
    pub heldout: Vec<f64>,
}

pub struct PretrainOutput {
    pub model: Denoiser,
    pub log: MetricsLog,
    pub curve: LossCurve,
}

const HELDOUT_DRAWS: usize = 4;

pub fn pretrain(cfg: &RunConfig) -> Result<PretrainOutput> {
    let seeds = Seeds::new(cfg.seed);
    let world = world(cfg)?;
    let process = cfg.process()?;
    let (train, held) = pretrain_data(cfg, &world)?;
    let init = Denoiser::init(cfg.arch(), seeds.init, cfg.model.init_scale)?;
    let curve_seed = rng::derive(seeds.pretrain, "heldout");
    let mut heldout = Vec::new();
    let record = |heldout: &mut Vec<f64>, model: &Denoiser| -> Result<()> {
        if !held.is_empty() {
            heldout.push(trainer::heldout_loss(&process, model, &held, curve_seed, HELDOUT_DRAWS)?);
        }
        Ok(())
    };
    record(&mut heldout, &init)?;
    if cfg.pretrain.epochs == 0 {
        return Ok(PretrainOutput {
            model: init,
            log: MetricsLog::default(),
            curve: LossCurve { heldout },
        });
    }
    let (model, log) = trainer::train_reference_with(
        &cfg.pretrain_config(seeds.pretrain),
        &train,
        &process,
        init,
        &mut |epoch, m| {
            record(&mut heldout, m)?;
            log::info!("pretrain epoch {epoch}: heldout loss {:?}", heldout.last());
            Ok(())
        },
    )?;
    Ok(PretrainOutput {
        model,
        log,
        curve: LossCurve { heldout },
    })
}

/// Conditions the preference candidates are generated for.
pub fn preference_conditions(cfg: &RunConfig, world: &ToyWorld) -> Vec<ConditionSpec> {
    let mut r = rng::rng_from(rng::derive(Seeds::new(cfg.seed).prefs, "conditions"));
    (0..cfg.prefs.n_conditions)
        .map(|i| world.random_condition(&mut r, format!("pc{i}"), 1, world.max_events()))
        .collect()
}

pub fn build_prefs(cfg: &RunConfig, model: &Denoiser) -> Result<Dataset> {
    let world = world(cfg)?;
    let process = cfg.process()?;
    let gen = Generator {
        world: &world,
        process: &process,
        model,
        settings: &cfg.prefs.generation,
    };
    let conditions = preference_conditions(cfg, &world);
    preference::build_dataset(
        &gen,
        &conditions,
        &cfg.prefs.strategies,
        &cfg.threshold_mode(),
        rng::derive(Seeds::new(cfg.seed).prefs, "generate"),
    )
}

/// `(train, heldout)` pairs.
pub fn split_pairs(cfg: &RunConfig, pairs: &[PreferencePair]) -> (Vec<PreferencePair>, Vec<PreferencePair>) {
    preference::split_heldout(pairs, cfg.align.heldout_fraction, Seeds::new(cfg.seed).split)
}

pub struct AlignOutput {
    pub sft: Denoiser,
    pub policy: Denoiser,
    pub log: MetricsLog,
}

/// Supervised fine-tuning on winners, then DPO from the SFT model against
/// the configured frozen reference.
pub fn align(cfg: &RunConfig, pretrained: &Denoiser, train_pairs: &[PreferencePair]) -> Result<AlignOutput> {
    let seeds = Seeds::new(cfg.seed);
    let process = cfg.process()?;
    if pretrained.arch() != &cfg.arch() {
        return Err(Error::Config("checkpoint architecture does not match the configuration".into()));
    }
    log::info!("align: phase sft ({} epochs, {} pairs)", cfg.align.sft_epochs, train_pairs.len());
    let (sft, mut log) = if cfg.align.sft_epochs == 0 {
        (pretrained.clone(), MetricsLog::default())
    } else {
        trainer::train_sft(&cfg.sft_config(seeds.sft), train_pairs, &process, pretrained.clone())?
    };
    let reference = match cfg.align.reference {
        ReferenceChoice::Pretrained => pretrained,
        ReferenceChoice::Sft => &sft,
    };
    log::info!("align: phase dpo ({} epochs, reference = {})", cfg.align.dpo_epochs, cfg.align.reference);
    let policy = if cfg.align.dpo_epochs == 0 {
        sft.clone()
    } else {
        let (policy, dpo_log) = trainer::train_dpo(&cfg.dpo_config(seeds.dpo), train_pairs, &process, sft.clone(), reference)?;
        log.extend(dpo_log);
        policy
    };
    Ok(AlignOutput { sft, policy, log })
}

/// Evaluation conditions (with at least one event) and a noisy ground-truth
/// reference set for the Fréchet distance.
pub fn eval_set(cfg: &RunConfig, world: &ToyWorld) -> Result<(Vec<ConditionSpec>, Vec<Sample>)> {
    let seed = rng::derive(Seeds::new(cfg.seed).eval, "set");
    let mut r = rng::rng_from(seed);
    let conditions: Vec<ConditionSpec> = (0..cfg.eval.n_conditions)
        .map(|i| world.random_condition(&mut r, format!("ev{i}"), 1, world.max_events()))
        .collect();
    let gt = conditions
        .iter()
        .enumerate()
        .map(|(i, c)| world.synthesize_ground_truth(c, cfg.eval.noise_scale, rng::derive_index(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok((conditions, gt))
}

/// Evaluate `model`; preference accuracy is included when a reference model
/// and held-out pairs are given.
pub fn evaluate(
    cfg: &RunConfig,
    model: &Denoiser,
    preference: Option<(&Denoiser, &[PreferencePair])>,
) -> Result<EvalReport> {
    let world = world(cfg)?;
    let process = cfg.process()?;
    let (conditions, gt) = eval_set(cfg, &world)?;
    let inputs = EvalInputs {
        world: &world,
        process: &process,
        guidance: cfg.eval_guidance(),
        conditions: &conditions,
        ground_truth: &gt,
        seed: rng::derive(Seeds::new(cfg.seed).eval, "generate"),
        preference: preference
            .filter(|(_, pairs)| !pairs.is_empty())
            .map(|(r, p)| (r, p, cfg.eval.pref_samples, cfg.align.dpo)),
    };
    evalsuite::evaluate(model, &inputs)
}

/// Field-wise difference `a - b` of two reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalComparison {
    pub model: EvalReport,
    pub baseline: EvalReport,
    pub diff: EvalReport,
}

impl EvalComparison {
    pub fn new(model: EvalReport, baseline: EvalReport) -> Self {
        let d = |a: f64, b: f64| a - b;
        let od = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(a, b)| a - b);
        let diff = EvalReport {
            mean_score1: d(model.mean_score1, baseline.mean_score1),
            mean_score2: d(model.mean_score2, baseline.mean_score2),
            frechet_gaussian: d(model.frechet_gaussian, baseline.frechet_gaussian),
            pref_accuracy: od(model.pref_accuracy, baseline.pref_accuracy),
            pref_zero_fraction: od(model.pref_zero_fraction, baseline.pref_zero_fraction),
            temporal_order_accuracy: d(model.temporal_order_accuracy, baseline.temporal_order_accuracy),
            temporal_chance_level: d(model.temporal_chance_level, baseline.temporal_chance_level),
            n_eval: model.n_eval,
        };
        Self { model, baseline, diff }
    }
}

/// File names written into the output directory.
pub mod files {
    pub const CONFIG: &str = "config.txt";
    pub const REFERENCE: &str = "reference.ckpt";
    pub const PRETRAIN_METRICS: &str = "pretrain_metrics.csv";
    pub const PRETRAIN_CURVE: &str = "pretrain_heldout.json";
    pub const PREFS: &str = "prefs.jsonl";
    pub const PREFS_REPORT: &str = "prefs_report.json";
    pub const SFT: &str = "sft.ckpt";
    pub const ALIGNED: &str = "aligned.ckpt";
    pub const ALIGN_METRICS: &str = "align_metrics.csv";
    pub const EVAL: &str = "eval.json";
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write(path, s)
}

/// Load a checkpoint and check it against the configuration.
pub fn load_model(cfg: &RunConfig, path: &Path) -> Result<Denoiser> {
    let ck = trainer::load_checkpoint(path)?;
    let want = header(cfg, ck.header.phase, ck.header.step_count);
    if ck.header.arch != want.arch
        || ck.header.n_steps != want.n_steps
        || ck.header.beta_start != want.beta_start
        || ck.header.beta_end != want.beta_end
        || ck.header.forward_coeff != want.forward_coeff
    {
        return Err(Error::Config(format!(
            "checkpoint {} was trained with a different model or schedule than the configuration",
            path.display()
        )));
    }
    ck.model()
}

/// Pretrain and write the reference checkpoint, metrics and held-out curve.
pub fn cmd_pretrain(cfg: &RunConfig, out_dir: &Path) -> Result<PathBuf> {
    ensure_dir(out_dir)?;
    write(&out_dir.join(files::CONFIG), cfg.to_text())?;
    let out = pretrain(cfg)?;
    let path = out_dir.join(files::REFERENCE);
    trainer::save_checkpoint(&path, &Checkpoint::new(header(cfg, Phase::Reference, out.log.rows.len()), &out.model))?;
    out.log.write_csv(&out_dir.join(files::PRETRAIN_METRICS))?;
    write_json(&out_dir.join(files::PRETRAIN_CURVE), &out.curve)?;
    Ok(path)
}

/// Generate, filter and write the preference dataset and its report.
pub fn cmd_build_prefs(cfg: &RunConfig, model_ckpt: &Path, out_dir: &Path) -> Result<DatasetReport> {
    ensure_dir(out_dir)?;
    let model = load_model(cfg, model_ckpt)?;
    let ds = build_prefs(cfg, &model)?;
    preference::write_jsonl(&out_dir.join(files::PREFS), &ds.pairs)?;
    write_json(&out_dir.join(files::PREFS_REPORT), &ds.report)?;
    Ok(ds.report)
}

/// SFT then DPO on the training split; writes both checkpoints and the log.
pub fn cmd_align(cfg: &RunConfig, ref_ckpt: &Path, prefs: &Path, out_dir: &Path) -> Result<PathBuf> {
    ensure_dir(out_dir)?;
    let pretrained = load_model(cfg, ref_ckpt)?;
    let pairs = preference::read_jsonl(prefs)?;
    let (train, held) = split_pairs(cfg, &pairs);
    log::info!("align: {} training pairs, {} held out", train.len(), held.len());
    let out = align(cfg, &pretrained, &train)?;
    let sft_steps = out.log.rows.iter().filter(|r| r.phase == Phase::Sft).count();
    trainer::save_checkpoint(&out_dir.join(files::SFT), &Checkpoint::new(header(cfg, Phase::Sft, sft_steps), &out.sft))?;
    let path = out_dir.join(files::ALIGNED);
    trainer::save_checkpoint(&path, &Checkpoint::new(header(cfg, Phase::Dpo, out.log.rows.len()), &out.policy))?;
    out.log.write_csv(&out_dir.join(files::ALIGN_METRICS))?;
    Ok(path)
}

/// Output of `cmd_eval`: one report, or two plus their difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EvalOutput {
    Comparison(EvalComparison),
    Single(EvalReport),
}

/// Evaluate `model`; with a baseline, evaluate both and report the
/// difference. Preference accuracy (baseline as reference) needs both a
/// baseline and the preference file; it is computed on the held-out split.
pub fn cmd_eval(
    cfg: &RunConfig,
    model_ckpt: &Path,
    baseline_ckpt: Option<&Path>,
    prefs: Option<&Path>,
    out_dir: &Path,
) -> Result<EvalOutput> {
    ensure_dir(out_dir)?;
    let model = load_model(cfg, model_ckpt)?;
    let out = match baseline_ckpt {
        None => EvalOutput::Single(evaluate(cfg, &model, None)?),
        Some(b) => {
            let baseline = load_model(cfg, b)?;
            let held = match prefs {
                Some(p) => split_pairs(cfg, &preference::read_jsonl(p)?).1,
                None => Vec::new(),
            };
            let pref = Some((&baseline, held.as_slice()));
            let a = evaluate(cfg, &model, pref)?;
            let b = evaluate(cfg, &baseline, Some((&baseline, held.as_slice())))?;
            EvalOutput::Comparison(EvalComparison::new(a, b))
        }
    };
    write_json(&out_dir.join(files::EVAL), &out)?;
    Ok(out)
}

/// Per-strategy statistics of an existing preference file.
pub fn inspect_prefs(cfg: &RunConfig, prefs: &Path) -> Result<DatasetReport> {
    let pairs = preference::read_jsonl(prefs)?;
    Ok(DatasetReport::build(&pairs, &pairs, cfg.prefs.thresholds))
}

/// Pairs of the given strategies only.
pub fn only_strategies(pairs: &[PreferencePair], keep: &[StrategyTag]) -> Vec<PreferencePair> {
    pairs.iter().filter(|p| keep.contains(&p.strategy)).cloned().collect()
}
