//! Run configuration: flat `key = value` lines, `#` comments, every key
//! optional (defaults pre-filled), unknown keys rejected.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::denoiser::{Arch, Nonlinearity};
use crate::diffusion::{DiffusionProcess, ForwardCoeff, GuidanceConfig};
use crate::dpo::DpoConfig;
use crate::error::{Error, Result};
use crate::preference::{FilterThresholds, GenerationSettings, QuantileSpec, StrategyTag, ThresholdMode};
use crate::schedule::{NoiseSchedule, Weighting};
use crate::toyworld::WorldConfig;
use crate::trainer::{Phase, TrainConfig};

/// Which model serves as the frozen DPO reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceChoice {
    Pretrained,
    Sft,
}

impl FromStr for ReferenceChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrained" => Ok(Self::Pretrained),
            "sft" => Ok(Self::Sft),
            _ => Err(Error::Config(format!("unknown reference model {s:?} (expected pretrained|sft)"))),
        }
    }
}

impl std::fmt::Display for ReferenceChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Pretrained => "pretrained",
            Self::Sft => "sft",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdKind {
    Fixed,
    Quantile,
}

impl FromStr for ThresholdKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "quantile" => Ok(Self::Quantile),
            _ => Err(Error::Config(format!("unknown threshold mode {s:?} (expected fixed|quantile)"))),
        }
    }
}

impl std::fmt::Display for ThresholdKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Fixed => "fixed",
            Self::Quantile => "quantile",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub time_embed_dim: usize,
    pub cond_embed_dim: usize,
    pub nonlinearity: Nonlinearity,
    pub init_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub n_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub forward_coeff: ForwardCoeff,
    pub loss_weighting: Weighting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub n_samples: usize,
    /// Standard deviation of the noise added to clean ground-truth signals.
    pub noise_scale: f64,
    pub heldout_fraction: f64,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub cond_dropout: f64,
    pub augment_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefsConfig {
    pub n_conditions: usize,
    pub strategies: Vec<StrategyTag>,
    pub generation: GenerationSettings,
    pub threshold_mode: ThresholdKind,
    pub thresholds: FilterThresholds,
    pub quantiles: QuantileSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub heldout_fraction: f64,
    pub reference: ReferenceChoice,
    pub sft_epochs: usize,
    pub sft_lr: f64,
    pub dpo_epochs: usize,
    pub dpo_lr: f64,
    pub dpo: DpoConfig,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub cond_dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n_conditions: usize,
    pub guidance_scale: f64,
    pub inference_steps: usize,
    /// Monte Carlo draws per held-out pair for preference accuracy.
    pub pref_samples: usize,
    /// Noise on the ground-truth reference set for the Fréchet distance.
    pub noise_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub world: WorldConfig,
    pub schedule: ScheduleConfig,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub prefs: PrefsConfig,
    pub align: AlignConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            world: WorldConfig::default(),
            schedule: ScheduleConfig {
                n_steps: 50,
                beta_start: 0.002,
                beta_end: 0.4,
                forward_coeff: ForwardCoeff::Sqrt,
                loss_weighting: Weighting::Constant,
            },
            model: ModelConfig {
                hidden: vec![128, 128],
                time_embed_dim: 16,
                cond_embed_dim: 16,
                nonlinearity: Nonlinearity::Silu,
                init_scale: 1.0,
            },
            pretrain: PretrainConfig {
                n_samples: 2400,
                noise_scale: 0.1,
                heldout_fraction: 0.1,
                epochs: 60,
                lr: 1e-3,
                weight_decay: 0.0,
                batch_size: 8,
                grad_accum: 4,
                cond_dropout: 0.1,
                augment_prob: 0.3,
            },
            prefs: PrefsConfig {
                n_conditions: 2000,
                strategies: StrategyTag::ALL.to_vec(),
                generation: GenerationSettings::default(),
                threshold_mode: ThresholdKind::Quantile,
                thresholds: FilterThresholds::default(),
                quantiles: QuantileSpec::default(),
            },
            align: AlignConfig {
                heldout_fraction: 0.2,
                reference: ReferenceChoice::Pretrained,
                sft_epochs: 1,
                sft_lr: 1e-4,
                dpo_epochs: 4,
                dpo_lr: 1e-4,
                dpo: DpoConfig::default(),
                weight_decay: 0.0,
                batch_size: 8,
                grad_accum: 4,
                cond_dropout: 0.1,
            },
            eval: EvalConfig {
                n_conditions: 2000,
                guidance_scale: 3.0,
                inference_steps: 50,
                pref_samples: 16,
                noise_scale: 0.1,
            },
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Parse config text over the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Set one key from its textual value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let c = self;
        match key {
            "seed" => c.seed = parse(key, v)?,
            "world.vocab_size" => c.world.vocab_size = parse(key, v)?,
            "world.sample_dim" => c.world.sample_dim = parse(key, v)?,
            "world.max_events" => c.world.max_events = parse(key, v)?,
            "world.embed_dim" => c.world.embed_dim = parse(key, v)?,
            "world.bump_width" => c.world.bump_width = parse(key, v)?,
            "world.scorer_misalignment" => c.world.scorer_misalignment = parse(key, v)?,
            "world.scorer1_seed" => c.world.scorer_seeds[0] = parse(key, v)?,
            "world.scorer2_seed" => c.world.scorer_seeds[1] = parse(key, v)?,
            "schedule.n_steps" => c.schedule.n_steps = parse(key, v)?,
            "schedule.beta_start" => c.schedule.beta_start = parse(key, v)?,
            "schedule.beta_end" => c.schedule.beta_end = parse(key, v)?,
            "schedule.forward_coeff" => c.schedule.forward_coeff = parse(key, v)?,
            "schedule.loss_weighting" => c.schedule.loss_weighting = parse(key, v)?,
            "model.hidden" => c.model.hidden = parse_list(key, v)?,
            "model.time_embed_dim" => c.model.time_embed_dim = parse(key, v)?,
            "model.cond_embed_dim" => c.model.cond_embed_dim = parse(key, v)?,
            "model.nonlinearity" => c.model.nonlinearity = parse(key, v)?,
            "model.init_scale" => c.model.init_scale = parse(key, v)?,
            "pretrain.n_samples" => c.pretrain.n_samples = parse(key, v)?,
            "pretrain.noise_scale" => c.pretrain.noise_scale = parse(key, v)?,
            "pretrain.heldout_fraction" => c.pretrain.heldout_fraction = parse(key, v)?,
            "pretrain.epochs" => c.pretrain.epochs = parse(key, v)?,
            "pretrain.lr" => c.pretrain.lr = parse(key, v)?,
            "pretrain.weight_decay" => c.pretrain.weight_decay = parse(key, v)?,
            "pretrain.batch_size" => c.pretrain.batch_size = parse(key, v)?,
            "pretrain.grad_accum" => c.pretrain.grad_accum = parse(key, v)?,
            "pretrain.cond_dropout" => c.pretrain.cond_dropout = parse(key, v)?,
            "pretrain.augment_prob" => c.pretrain.augment_prob = parse(key, v)?,
            "prefs.n_conditions" => c.prefs.n_conditions = parse(key, v)?,
            "prefs.strategies" => c.prefs.strategies = parse_list(key, v)?,
            "prefs.guidance_scale" => c.prefs.generation.guidance_scale = parse(key, v)?,
            "prefs.steps" => c.prefs.generation.steps = parse(key, v)?,
            "prefs.perturbations" => c.prefs.generation.perturbations = parse(key, v)?,
            "prefs.s11_steps" => {
                let steps: Vec<usize> = parse_list(key, v)?;
                c.prefs.generation.s11_steps = steps
                    .try_into()
                    .map_err(|_| Error::Config(format!("{key}: expected exactly 4 step counts")))?;
            }
            "prefs.threshold_mode" => c.prefs.threshold_mode = parse(key, v)?,
            "prefs.alpha1" => c.prefs.thresholds.alpha1 = parse(key, v)?,
            "prefs.beta1" => c.prefs.thresholds.beta1 = parse(key, v)?,
            "prefs.delta1_lo" => c.prefs.thresholds.delta1_lo = parse(key, v)?,
            "prefs.delta1_hi" => c.prefs.thresholds.delta1_hi = parse(key, v)?,
            "prefs.alpha2" => c.prefs.thresholds.alpha2 = parse(key, v)?,
            "prefs.beta2" => c.prefs.thresholds.beta2 = parse(key, v)?,
            "prefs.delta2_lo" => c.prefs.thresholds.delta2_lo = parse(key, v)?,
            "prefs.delta2_hi" => c.prefs.thresholds.delta2_hi = parse(key, v)?,
            "prefs.q_alpha" => c.prefs.quantiles.alpha = parse(key, v)?,
            "prefs.q_beta" => c.prefs.quantiles.beta = parse(key, v)?,
            "prefs.q_delta_lo" => c.prefs.quantiles.delta_lo = parse(key, v)?,
            "prefs.q_delta_hi" => c.prefs.quantiles.delta_hi = parse(key, v)?,
            "align.heldout_fraction" => c.align.heldout_fraction = parse(key, v)?,
            "align.reference" => c.align.reference = parse(key, v)?,
            "align.sft_epochs" => c.align.sft_epochs = parse(key, v)?,
            "align.sft_lr" => c.align.sft_lr = parse(key, v)?,
            "align.dpo_epochs" => c.align.dpo_epochs = parse(key, v)?,
            "align.dpo_lr" => c.align.dpo_lr = parse(key, v)?,
            "align.dpo_beta" => c.align.dpo.beta = parse(key, v)?,
            "align.dpo_weighting" => c.align.dpo.weighting = parse(key, v)?,
            "align.weight_decay" => c.align.weight_decay = parse(key, v)?,
            "align.batch_size" => c.align.batch_size = parse(key, v)?,
            "align.grad_accum" => c.align.grad_accum = parse(key, v)?,
            "align.cond_dropout" => c.align.cond_dropout = parse(key, v)?,
            "eval.n_conditions" => c.eval.n_conditions = parse(key, v)?,
            "eval.guidance_scale" => c.eval.guidance_scale = parse(key, v)?,
            "eval.inference_steps" => c.eval.inference_steps = parse(key, v)?,
            "eval.pref_samples" => c.eval.pref_samples = parse(key, v)?,
            "eval.noise_scale" => c.eval.noise_scale = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in the format [`RunConfig::parse`] reads.
    pub fn to_text(&self) -> String {
        let c = self;
        let t = &c.prefs.thresholds;
        let q = &c.prefs.quantiles;
        let rows: Vec<(&str, String)> = vec![
            ("seed", c.seed.to_string()),
            ("world.vocab_size", c.world.vocab_size.to_string()),
            ("world.sample_dim", c.world.sample_dim.to_string()),
            ("world.max_events", c.world.max_events.to_string()),
            ("world.embed_dim", c.world.embed_dim.to_string()),
            ("world.bump_width", c.world.bump_width.to_string()),
            ("world.scorer_misalignment", c.world.scorer_misalignment.to_string()),
            ("world.scorer1_seed", c.world.scorer_seeds[0].to_string()),
            ("world.scorer2_seed", c.world.scorer_seeds[1].to_string()),
            ("schedule.n_steps", c.schedule.n_steps.to_string()),
            ("schedule.beta_start", c.schedule.beta_start.to_string()),
            ("schedule.beta_end", c.schedule.beta_end.to_string()),
            ("schedule.forward_coeff", c.schedule.forward_coeff.to_string()),
            ("schedule.loss_weighting", c.schedule.loss_weighting.to_string()),
            ("model.hidden", join(&c.model.hidden)),
            ("model.time_embed_dim", c.model.time_embed_dim.to_string()),
            ("model.cond_embed_dim", c.model.cond_embed_dim.to_string()),
            ("model.nonlinearity", c.model.nonlinearity.to_string()),
            ("model.init_scale", c.model.init_scale.to_string()),
            ("pretrain.n_samples", c.pretrain.n_samples.to_string()),
            ("pretrain.noise_scale", c.pretrain.noise_scale.to_string()),
            ("pretrain.heldout_fraction", c.pretrain.heldout_fraction.to_string()),
            ("pretrain.epochs", c.pretrain.epochs.to_string()),
            ("pretrain.lr", c.pretrain.lr.to_string()),
            ("pretrain.weight_decay", c.pretrain.weight_decay.to_string()),
            ("pretrain.batch_size", c.pretrain.batch_size.to_string()),
            ("pretrain.grad_accum", c.pretrain.grad_accum.to_string()),
            ("pretrain.cond_dropout", c.pretrain.cond_dropout.to_string()),
            ("pretrain.augment_prob", c.pretrain.augment_prob.to_string()),
            ("prefs.n_conditions", c.prefs.n_conditions.to_string()),
            ("prefs.strategies", join(&c.prefs.strategies)),
            ("prefs.guidance_scale", c.prefs.generation.guidance_scale.to_string()),
            ("prefs.steps", c.prefs.generation.steps.to_string()),
            ("prefs.perturbations", c.prefs.generation.perturbations.to_string()),
            ("prefs.s11_steps", join(&c.prefs.generation.s11_steps)),
            ("prefs.threshold_mode", c.prefs.threshold_mode.to_string()),
            ("prefs.alpha1", t.alpha1.to_string()),
            ("prefs.beta1", t.beta1.to_string()),
            ("prefs.delta1_lo", t.delta1_lo.to_string()),
            ("prefs.delta1_hi", t.delta1_hi.to_string()),
            ("prefs.alpha2", t.alpha2.to_string()),
            ("prefs.beta2", t.beta2.to_string()),
            ("prefs.delta2_lo", t.delta2_lo.to_string()),
            ("prefs.delta2_hi", t.delta2_hi.to_string()),
            ("prefs.q_alpha", q.alpha.to_string()),
            ("prefs.q_beta", q.beta.to_string()),
            ("prefs.q_delta_lo", q.delta_lo.to_string()),
            ("prefs.q_delta_hi", q.delta_hi.to_string()),
            ("align.heldout_fraction", c.align.heldout_fraction.to_string()),
            ("align.reference", c.align.reference.to_string()),
            ("align.sft_epochs", c.align.sft_epochs.to_string()),
            ("align.sft_lr", c.align.sft_lr.to_string()),
            ("align.dpo_epochs", c.align.dpo_epochs.to_string()),
            ("align.dpo_lr", c.align.dpo_lr.to_string()),
            ("align.dpo_beta", c.align.dpo.beta.to_string()),
            ("align.dpo_weighting", c.align.dpo.weighting.to_string()),
            ("align.weight_decay", c.align.weight_decay.to_string()),
            ("align.batch_size", c.align.batch_size.to_string()),
            ("align.grad_accum", c.align.grad_accum.to_string()),
            ("align.cond_dropout", c.align.cond_dropout.to_string()),
            ("eval.n_conditions", c.eval.n_conditions.to_string()),
            ("eval.guidance_scale", c.eval.guidance_scale.to_string()),
            ("eval.inference_steps", c.eval.inference_steps.to_string()),
            ("eval.pref_samples", c.eval.pref_samples.to_string()),
            ("eval.noise_scale", c.eval.noise_scale.to_string()),
        ];
        rows.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule()?;
        self.arch().validate()?;
        for (name, f) in [
            ("pretrain.heldout_fraction", self.pretrain.heldout_fraction),
            ("align.heldout_fraction", self.align.heldout_fraction),
        ] {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {f}")));
            }
        }
        if self.prefs.strategies.is_empty() {
            return Err(Error::Config("prefs.strategies must name at least one strategy".into()));
        }
        if self.prefs.generation.steps == 0 || self.prefs.generation.s11_steps.contains(&0) {
            return Err(Error::Config("generation step counts must be positive".into()));
        }
        if self.eval.inference_steps == 0 || self.eval.pref_samples == 0 {
            return Err(Error::Config("eval.inference_steps and eval.pref_samples must be positive".into()));
        }
        self.prefs.thresholds.validate()?;
        self.pretrain_config(0).validate()?;
        self.sft_config(0).validate()?;
        self.dpo_config(0).validate()
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.schedule.n_steps, self.schedule.beta_start, self.schedule.beta_end)
    }

    pub fn process(&self) -> Result<DiffusionProcess> {
        let mut p = DiffusionProcess::new(self.schedule()?, self.schedule.forward_coeff);
        p.loss_weighting = self.schedule.loss_weighting;
        Ok(p)
    }

    pub fn arch(&self) -> Arch {
        Arch {
            sample_dim: self.world.sample_dim,
            hidden: self.model.hidden.clone(),
            time_embed_dim: self.model.time_embed_dim,
            vocab_size: self.world.vocab_size,
            max_events: self.world.max_events,
            cond_embed_dim: self.model.cond_embed_dim,
            nonlinearity: self.model.nonlinearity,
        }
    }

    pub fn threshold_mode(&self) -> ThresholdMode {
        match self.prefs.threshold_mode {
            ThresholdKind::Fixed => ThresholdMode::Fixed(self.prefs.thresholds),
            ThresholdKind::Quantile => ThresholdMode::Quantile(self.prefs.quantiles),
        }
    }

    pub fn eval_guidance(&self) -> GuidanceConfig {
        GuidanceConfig::new(self.eval.guidance_scale, self.eval.inference_steps)
    }

    pub fn pretrain_config(&self, seed: u64) -> TrainConfig {
        let p = &self.pretrain;
        TrainConfig {
            phase: Phase::Reference,
            epochs: p.epochs,
            lr: p.lr,
            weight_decay: p.weight_decay,
            batch_size: p.batch_size,
            grad_accum: p.grad_accum,
            seed,
            cond_dropout: p.cond_dropout,
            augment_prob: p.augment_prob,
            dpo: self.align.dpo,
        }
    }

    fn align_config(&self, phase: Phase, epochs: usize, lr: f64, seed: u64) -> TrainConfig {
        let a = &self.align;
        TrainConfig {
            phase,
            epochs,
            lr,
            weight_decay: a.weight_decay,
            batch_size: a.batch_size,
            grad_accum: a.grad_accum,
            seed,
            cond_dropout: a.cond_dropout,
            augment_prob: 0.0,
            dpo: a.dpo,
        }
    }

    pub fn sft_config(&self, seed: u64) -> TrainConfig {
        self.align_config(Phase::Sft, self.align.sft_epochs, self.align.sft_lr, seed)
    }

    pub fn dpo_config(&self, seed: u64) -> TrainConfig {
        self.align_config(Phase::Dpo, self.align.dpo_epochs, self.align.dpo_lr, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let d = RunConfig::default();
        d.validate().unwrap();
        assert_eq!(RunConfig::parse(&d.to_text()).unwrap(), d);
        assert_eq!(RunConfig::parse("").unwrap(), d);
    }

    #[test]
    fn every_printed_key_is_settable() {
        let d = RunConfig::default();
        for line in d.to_text().lines() {
            let (k, v) = line.split_once(" = ").unwrap();
            let mut c = RunConfig::default();
            c.set(k, v).unwrap();
        }
    }

    #[test]
    fn comments_and_overrides() {
        let c = RunConfig::parse("# header\nseed = 7 # trailing\n\nmodel.hidden = 32, 16\nprefs.strategies = S2,S3\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.model.hidden, vec![32, 16]);
        assert_eq!(c.prefs.strategies, vec![StrategyTag::S2, StrategyTag::S3]);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "no_such_key = 1",
            "seed",
            "seed = banana",
            "schedule.forward_coeff = cubic",
            "prefs.s11_steps = 1,2,3",
            "align.heldout_fraction = 1.5",
            "pretrain.batch_size = 0",
        ] {
            assert!(matches!(RunConfig::parse(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn paper_anchored_defaults() {
        let c = RunConfig::default();
        assert_eq!(c.align.sft_epochs, 1);
        assert_eq!(c.align.dpo_epochs, 4);
        assert_eq!(c.align.dpo.beta, 2000.0);
        assert_eq!(c.align.batch_size * c.align.grad_accum, 32);
        assert_eq!(c.prefs.thresholds, FilterThresholds::default());
        assert_eq!(c.prefs.generation.guidance_scale, 3.0);
    }
}
