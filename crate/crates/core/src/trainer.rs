//! Optimisation loops (reference pretraining, supervised fine-tuning on
//! winners, DPO) and checkpoint I/O.
//!
//! Every training example draws its randomness (augmentation partner,
//! condition dropout, step, noise) from a stream keyed by `(epoch, position
//! in the shuffled epoch)`, so results do not depend on how examples are
//! grouped into micro-batches or spread over workers.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::augment;
use crate::denoiser::{Arch, Denoiser};
use crate::diffusion::{DiffusionProcess, ForwardCoeff};
use crate::dpo::{self, DpoConfig, DpoDraw};
use crate::error::{Error, Result};
use crate::optim::{linear_decay, AdamW};
use crate::par;
use crate::preference::PreferencePair;
use crate::rng::{self, gaussian_vec, Rng};
use crate::schedule::NoiseSchedule;
use crate::toyworld::{ConditionSpec, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    Reference,
    Sft,
    Dpo,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Init => "init",
            Phase::Reference => "reference",
            Phase::Sft => "sft",
            Phase::Dpo => "dpo",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub phase: Phase,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub seed: u64,
    /// Probability of replacing the condition by the null token.
    pub cond_dropout: f64,
    /// Probability of mixing an example with a random partner (reference only).
    pub augment_prob: f64,
    pub dpo: DpoConfig,
}

impl TrainConfig {
    pub fn new(phase: Phase) -> Self {
        Self {
            phase,
            epochs: 1,
            lr: 1e-3,
            weight_decay: 0.0,
            batch_size: 8,
            grad_accum: 4,
            seed: 0,
            cond_dropout: 0.1,
            augment_prob: 0.0,
            dpo: DpoConfig::default(),
        }
    }

    pub fn effective_batch(&self) -> usize {
        self.batch_size * self.grad_accum
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.grad_accum == 0 {
            return Err(Error::Config("batch_size and grad_accum must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        for (name, p) in [("cond_dropout", self.cond_dropout), ("augment_prob", self.augment_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        self.dpo.validate()
    }

    /// Optimizer steps for `n_examples`: `ceil(n / effective_batch) * epochs`.
    pub fn total_steps(&self, n_examples: usize) -> usize {
        n_examples.div_ceil(self.effective_batch()) * self.epochs
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub phase: Phase,
    pub loss: f64,
    pub lr: f64,
    pub margin: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,phase,loss,lr,margin\n");
        for r in &self.rows {
            let margin = r.margin.map(|m| m.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{},{}\n", r.step, r.phase, r.loss, r.lr, margin));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn extend(&mut self, other: MetricsLog) {
        self.rows.extend(other.rows);
    }
}

/// Loss, gradient and (DPO only) margin of one example.
struct ExampleOut {
    loss: f64,
    grad: Vec<f64>,
    margin: f64,
}

/// Shared optimisation driver: shuffles per epoch, groups examples into
/// optimizer steps of `batch_size * grad_accum`, averages gradients over the
/// step, and applies AdamW with linear decay.
fn optimize<F>(
    model: &mut Denoiser,
    cfg: &TrainConfig,
    n_examples: usize,
    example: F,
    on_epoch: &mut dyn FnMut(usize, &Denoiser) -> Result<()>,
) -> Result<MetricsLog>
where
    F: Fn(&Denoiser, usize, &mut Rng) -> Result<ExampleOut> + Sync + Send,
{
    cfg.validate()?;
    if n_examples == 0 {
        return Err(Error::Argument(format!("{} training needs a non-empty dataset", cfg.phase)));
    }
    let total = cfg.total_steps(n_examples);
    let mut opt = AdamW::new(model.n_params(), cfg.weight_decay);
    let mut log = MetricsLog::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let epoch_seed = rng::derive_index(rng::derive(cfg.seed, "epoch"), epoch as u64);
        let mut order: Vec<usize> = (0..n_examples).collect();
        order.shuffle(&mut rng::rng_from(epoch_seed));
        for (chunk_idx, chunk) in order.chunks(cfg.effective_batch()).enumerate() {
            let base = chunk_idx * cfg.effective_batch();
            let mut grad = vec![0.0; model.n_params()];
            let mut loss = 0.0;
            let mut margin = 0.0;
            for (mb_idx, micro) in chunk.chunks(cfg.batch_size).enumerate() {
                let frozen: &Denoiser = model;
                let outs = par::try_map_range(micro.len(), |k| {
                    let position = base + mb_idx * cfg.batch_size + k;
                    let mut r = rng::rng_from(rng::derive_index(epoch_seed, position as u64));
                    example(frozen, micro[k], &mut r)
                })?;
                for o in outs {
                    loss += o.loss;
                    margin += o.margin;
                    for (g, v) in grad.iter_mut().zip(&o.grad) {
                        *g += v;
                    }
                }
            }
            let m = chunk.len() as f64;
            loss /= m;
            margin /= m;
            grad.iter_mut().for_each(|g| *g /= m);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!(
                    "{} training diverged at step {step} (epoch {epoch}): loss={loss}",
                    cfg.phase
                )));
            }
            let lr = linear_decay(cfg.lr, step, total);
            opt.step(model.params_mut(), &grad, lr);
            log.rows.push(MetricsRow {
                step,
                phase: cfg.phase,
                loss,
                lr,
                margin: (cfg.phase == Phase::Dpo).then_some(margin),
            });
            step += 1;
        }
        on_epoch(epoch, model)?;
    }
    if model.params().iter().any(|p| !p.is_finite()) {
        return Err(Error::Numerical(format!("{} training produced non-finite parameters", cfg.phase)));
    }
    Ok(log)
}

fn draw_step_and_noise(r: &mut Rng, process: &DiffusionProcess, dim: usize) -> (usize, Sample) {
    let n = r.random_range(1..=process.n_steps());
    (n, Sample(gaussian_vec(r, dim)))
}

/// A conditioning example for reference training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub condition: ConditionSpec,
    pub sample: Sample,
}

/// Fit the noise-prediction objective, with level-aware mixing applied with
/// probability `cfg.augment_prob` and condition dropout `cfg.cond_dropout`.
pub fn train_reference(
    cfg: &TrainConfig,
    data: &[TrainExample],
    process: &DiffusionProcess,
    init: Denoiser,
) -> Result<(Denoiser, MetricsLog)> {
    train_reference_with(cfg, data, process, init, &mut |_, _| Ok(()))
}

/// [`train_reference`] with a callback after every epoch.
pub fn train_reference_with(
    cfg: &TrainConfig,
    data: &[TrainExample],
    process: &DiffusionProcess,
    init: Denoiser,
    on_epoch: &mut dyn FnMut(usize, &Denoiser) -> Result<()>,
) -> Result<(Denoiser, MetricsLog)> {
    let mut model = init;
    let max_events = model.arch().max_events;
    let dim = model.arch().sample_dim;
    let log = optimize(&mut model, cfg, data.len(), |m, i, r| {
        let mut ex = data[i].clone();
        if data.len() > 1 && r.random_bool(cfg.augment_prob) {
            let mut j = r.random_range(0..data.len() - 1);
            if j >= i {
                j += 1;
            }
            let mixed = augment::mix(&ex.sample, &data[j].sample, &ex.condition, &data[j].condition, max_events)?;
            ex = TrainExample {
                condition: mixed.merged_condition,
                sample: mixed.mixed,
            };
        }
        let drop = r.random_bool(cfg.cond_dropout);
        let (n, eps) = draw_step_and_noise(r, process, dim);
        let cond = (!drop).then_some(&ex.condition);
        let (loss, grad) = process.ldm_loss(m, &ex.sample, cond, n, &eps)?;
        Ok(ExampleOut { loss, grad, margin: 0.0 })
    }, on_epoch)?;
    Ok((model, log))
}

/// Noise-prediction fine-tuning on `(condition, winner)`; losers are unused.
pub fn train_sft(
    cfg: &TrainConfig,
    pairs: &[PreferencePair],
    process: &DiffusionProcess,
    init: Denoiser,
) -> Result<(Denoiser, MetricsLog)> {
    let mut model = init;
    let dim = model.arch().sample_dim;
    let log = optimize(&mut model, cfg, pairs.len(), |m, i, r| {
        let p = &pairs[i];
        let drop = r.random_bool(cfg.cond_dropout);
        let (n, eps) = draw_step_and_noise(r, process, dim);
        let cond = (!drop).then_some(&p.condition);
        let (loss, grad) = process.ldm_loss(m, &p.winner, cond, n, &eps)?;
        Ok(ExampleOut { loss, grad, margin: 0.0 })
    }, &mut |_, _| Ok(()))?;
    Ok((model, log))
}

/// Minimise the DPO objective against a frozen reference.
pub fn train_dpo(
    cfg: &TrainConfig,
    pairs: &[PreferencePair],
    process: &DiffusionProcess,
    policy_init: Denoiser,
    reference: &Denoiser,
) -> Result<(Denoiser, MetricsLog)> {
    if policy_init.arch() != reference.arch() {
        return Err(Error::Config("policy and reference architectures differ".into()));
    }
    let mut model = policy_init;
    let dim = model.arch().sample_dim;
    let dpo_cfg = cfg.dpo;
    let log = optimize(&mut model, cfg, pairs.len(), |m, i, r| {
        let draw = DpoDraw::random(r, process.n_steps(), dim);
        let out = dpo::dpo_diffusion_loss(process, m, reference, &pairs[i], &draw, &dpo_cfg)?;
        Ok(ExampleOut {
            loss: out.loss,
            grad: out.grad,
            margin: out.inner,
        })
    }, &mut |_, _| Ok(()))?;
    Ok((model, log))
}

/// Mean noise-prediction loss over `data` with fixed draws from `seed`
/// (conditional branch only).
pub fn heldout_loss(
    process: &DiffusionProcess,
    model: &Denoiser,
    data: &[TrainExample],
    seed: u64,
    draws_per_example: usize,
) -> Result<f64> {
    if data.is_empty() || draws_per_example == 0 {
        return Err(Error::Argument("heldout_loss needs data and draws".into()));
    }
    let dim = model.arch().sample_dim;
    let losses = par::try_map_range(data.len(), |i| {
        let mut r = rng::rng_from(rng::derive_index(seed, i as u64));
        let mut total = 0.0;
        for _ in 0..draws_per_example {
            let (n, eps) = draw_step_and_noise(&mut r, process, dim);
            let xn = process.forward_sample(&data[i].sample, n, &eps)?;
            let pred = model.forward(&xn, n, Some(&data[i].condition))?;
            let gamma = process.schedule.snr_weight(n, process.loss_weighting)?;
            total += gamma * pred.0.iter().zip(&eps.0).map(|(p, e)| (p - e) * (p - e)).sum::<f64>();
        }
        Ok::<f64, Error>(total / draws_per_example as f64)
    })?;
    Ok(losses.iter().sum::<f64>() / data.len() as f64)
}

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"PDIFFCKP";

/// Everything needed to rebuild a model and the process it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub arch: Arch,
    pub n_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub forward_coeff: ForwardCoeff,
    pub seed: u64,
    pub phase: Phase,
    pub step_count: usize,
}

impl CheckpointHeader {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.n_steps, self.beta_start, self.beta_end)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(header: CheckpointHeader, model: &Denoiser) -> Self {
        Self {
            header,
            params: model.params().to_vec(),
        }
    }

    pub fn model(&self) -> Result<Denoiser> {
        Denoiser::from_params(self.header.arch.clone(), self.params.clone())
    }

    /// `MAGIC | u32 version | u32 header length | header JSON | u64 count | f64 LE params`.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(24 + header.len() + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        fn take<'a>(b: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
            if b.len() < n {
                return Err(Error::Corrupt(format!("truncated while reading {what}")));
            }
            let (head, rest) = b.split_at(n);
            *b = rest;
            Ok(head)
        }
        let mut b = bytes;
        if take(&mut b, 8, "magic")? != MAGIC {
            return Err(Error::Corrupt("bad magic bytes".into()));
        }
        let version = u32::from_le_bytes(take(&mut b, 4, "version")?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let hlen = u32::from_le_bytes(take(&mut b, 4, "header length")?.try_into().unwrap()) as usize;
        let header: CheckpointHeader = serde_json::from_slice(take(&mut b, hlen, "header")?)
            .map_err(|e| Error::Corrupt(format!("header: {e}")))?;
        let count = u64::from_le_bytes(take(&mut b, 8, "parameter count")?.try_into().unwrap()) as usize;
        if count != header.arch.n_params() {
            return Err(Error::Corrupt(format!(
                "parameter count {count} does not match architecture ({})",
                header.arch.n_params()
            )));
        }
        let raw = take(&mut b, count.checked_mul(8).ok_or_else(|| Error::Corrupt("size overflow".into()))?, "parameters")?;
        if !b.is_empty() {
            return Err(Error::Corrupt(format!("{} trailing bytes", b.len())));
        }
        let params = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { header, params })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
