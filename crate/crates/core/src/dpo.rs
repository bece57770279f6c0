//! Preference-model utilities and the diffusion DPO objective.
//!
//! For a pair `(c, x_w, x_l)`, a step `n` and noises `eps_w`, `eps_l`:
//!
//! ```text
//! inner = -beta * N * w(n) * ((e_pol(x_w) - e_ref(x_w)) - (e_pol(x_l) - e_ref(x_l)))
//! loss  = -log sigmoid(inner)
//! ```
//!
//! where `e_m(x) = |eps - m(x_n, n, c)|^2` is the noise-prediction error of
//! model `m` on the noised sample. The reference model is frozen: its errors
//! are constants and only the policy receives gradient.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::diffusion::DiffusionProcess;
use crate::error::{Error, Result};
use crate::par;
use crate::preference::PreferencePair;
use crate::rng::{gaussian_vec, Rng};
use crate::schedule::Weighting;
use crate::toyworld::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpoConfig {
    pub beta: f64,
    pub weighting: Weighting,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self {
            beta: 2000.0,
            weighting: Weighting::Constant,
        }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::Config(format!("dpo beta must be positive, got {}", self.beta)));
        }
        Ok(())
    }
}

/// `sigmoid(x)` without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(sigmoid(x))` without overflow or cancellation.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Bradley-Terry preference probability `exp(r_w) / (exp(r_w) + exp(r_l))`.
pub fn bt_probability(r_w: f64, r_l: f64) -> f64 {
    sigmoid(r_w - r_l)
}

/// Mean negative log-likelihood of the observed preferences.
pub fn reward_nll(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Argument("reward_nll needs at least one pair".into()));
    }
    let total: f64 = pairs.iter().map(|(w, l)| -log_sigmoid(w - l)).sum();
    Ok(total / pairs.len() as f64)
}

/// Step and noises for one evaluation of the objective on one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DpoDraw {
    pub n: usize,
    pub eps_w: Sample,
    pub eps_l: Sample,
}

impl DpoDraw {
    /// `n ~ U{1..N}`, independent standard-normal noises.
    pub fn random(rng: &mut Rng, n_steps: usize, dim: usize) -> Self {
        let n = rng.random_range(1..=n_steps);
        Self {
            n,
            eps_w: Sample(gaussian_vec(rng, dim)),
            eps_l: Sample(gaussian_vec(rng, dim)),
        }
    }

    /// `n ~ U{1..N}` with one noise shared by winner and loser. Same
    /// expectation as [`DpoDraw::random`], lower variance, and an exactly zero
    /// inner term when winner and loser coincide.
    pub fn shared(rng: &mut Rng, n_steps: usize, dim: usize) -> Self {
        let n = rng.random_range(1..=n_steps);
        let eps = Sample(gaussian_vec(rng, dim));
        Self {
            n,
            eps_w: eps.clone(),
            eps_l: eps,
        }
    }

    pub fn swapped(&self) -> Self {
        Self {
            n: self.n,
            eps_w: self.eps_l.clone(),
            eps_l: self.eps_w.clone(),
        }
    }
}

/// Reference-model errors on the noised winner and loser.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceErrors {
    pub winner: f64,
    pub loser: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpoPairResult {
    pub loss: f64,
    pub inner: f64,
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpoBatchResult {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Mean of the sigmoid arguments.
    pub margin: f64,
    pub per_pair_inner: Vec<f64>,
}

fn squared_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn noised(
    process: &DiffusionProcess,
    pair: &PreferencePair,
    draw: &DpoDraw,
) -> Result<(Sample, Sample)> {
    if pair.winner.dim() != pair.loser.dim() {
        return Err(Error::Shape {
            what: "loser sample",
            expected: pair.winner.dim(),
            got: pair.loser.dim(),
        });
    }
    Ok((
        process.forward_sample(&pair.winner, draw.n, &draw.eps_w)?,
        process.forward_sample(&pair.loser, draw.n, &draw.eps_l)?,
    ))
}

pub fn reference_errors(
    process: &DiffusionProcess,
    reference: &Denoiser,
    pair: &PreferencePair,
    draw: &DpoDraw,
) -> Result<ReferenceErrors> {
    let (xw, xl) = noised(process, pair, draw)?;
    let c = Some(&pair.condition);
    Ok(ReferenceErrors {
        winner: squared_error(&reference.forward(&xw, draw.n, c)?.0, &draw.eps_w.0),
        loser: squared_error(&reference.forward(&xl, draw.n, c)?.0, &draw.eps_l.0),
    })
}

/// Coefficient `beta * N * w(n)` in front of the error differences.
pub fn scale(process: &DiffusionProcess, n: usize, config: &DpoConfig) -> Result<f64> {
    Ok(config.beta * process.n_steps() as f64 * process.schedule.snr_weight(n, config.weighting)?)
}

/// Objective for one pair with precomputed reference errors.
pub fn dpo_loss_with_reference(
    process: &DiffusionProcess,
    policy: &Denoiser,
    pair: &PreferencePair,
    draw: &DpoDraw,
    reference: ReferenceErrors,
    config: &DpoConfig,
) -> Result<DpoPairResult> {
    let k = scale(process, draw.n, config)?;
    let (xw, xl) = noised(process, pair, draw)?;
    let c = Some(&pair.condition);
    let tw = policy.forward_trace(&xw, draw.n, c)?;
    let tl = policy.forward_trace(&xl, draw.n, c)?;
    let pol_w = squared_error(tw.output(), &draw.eps_w.0);
    let pol_l = squared_error(tl.output(), &draw.eps_l.0);
    let inner = -k * ((pol_w - reference.winner) - (pol_l - reference.loser));
    let loss = -log_sigmoid(inner);
    if !loss.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite DPO loss on {}: inner={inner}, step={}, policy errors ({pol_w}, {pol_l}), \
             reference errors ({}, {})",
            pair.id, draw.n, reference.winner, reference.loser
        )));
    }
    // d loss / d theta = sigmoid(-inner) * k * (grad e_pol(x_w) - grad e_pol(x_l))
    let coef = sigmoid(-inner) * k;
    let mut grad = vec![0.0; policy.n_params()];
    if coef != 0.0 {
        let up_w: Vec<f64> = tw.output().iter().zip(&draw.eps_w.0).map(|(p, e)| 2.0 * (p - e)).collect();
        let up_l: Vec<f64> = tl.output().iter().zip(&draw.eps_l.0).map(|(p, e)| 2.0 * (p - e)).collect();
        policy.backward_trace_into(&tw, &up_w, coef, &mut grad)?;
        policy.backward_trace_into(&tl, &up_l, -coef, &mut grad)?;
    }
    Ok(DpoPairResult { loss, inner, grad })
}

/// Objective and policy gradient for one pair and one draw.
pub fn dpo_diffusion_loss(
    process: &DiffusionProcess,
    policy: &Denoiser,
    reference: &Denoiser,
    pair: &PreferencePair,
    draw: &DpoDraw,
    config: &DpoConfig,
) -> Result<DpoPairResult> {
    let r = reference_errors(process, reference, pair, draw)?;
    dpo_loss_with_reference(process, policy, pair, draw, r, config)
}

/// Sigmoid argument only, without gradients.
pub fn inner_term(
    process: &DiffusionProcess,
    policy: &Denoiser,
    reference: &Denoiser,
    pair: &PreferencePair,
    draw: &DpoDraw,
    config: &DpoConfig,
) -> Result<f64> {
    let k = scale(process, draw.n, config)?;
    let (xw, xl) = noised(process, pair, draw)?;
    let c = Some(&pair.condition);
    let n = draw.n;
    let pol_w = squared_error(&policy.forward(&xw, n, c)?.0, &draw.eps_w.0);
    let pol_l = squared_error(&policy.forward(&xl, n, c)?.0, &draw.eps_l.0);
    let r = reference_errors(process, reference, pair, draw)?;
    Ok(-k * ((pol_w - r.winner) - (pol_l - r.loser)))
}

/// Mean loss and gradient over `pairs[i]` evaluated at `draws[i]`.
pub fn dpo_batch(
    process: &DiffusionProcess,
    policy: &Denoiser,
    reference: &Denoiser,
    pairs: &[&PreferencePair],
    draws: &[DpoDraw],
    config: &DpoConfig,
) -> Result<DpoBatchResult> {
    if pairs.is_empty() || pairs.len() != draws.len() {
        return Err(Error::Argument(format!(
            "dpo batch needs matching non-empty pairs and draws ({} vs {})",
            pairs.len(),
            draws.len()
        )));
    }
    let results = par::try_map_range(pairs.len(), |i| {
        dpo_diffusion_loss(process, policy, reference, pairs[i], &draws[i], config)
    })?;
    let m = pairs.len() as f64;
    let grads: Vec<Vec<f64>> = results.iter().map(|r| r.grad.clone()).collect();
    let mut grad = par::sum_vectors(&grads, policy.n_params());
    grad.iter_mut().for_each(|g| *g /= m);
    let per_pair_inner: Vec<f64> = results.iter().map(|r| r.inner).collect();
    Ok(DpoBatchResult {
        loss: results.iter().map(|r| r.loss).sum::<f64>() / m,
        grad,
        margin: per_pair_inner.iter().sum::<f64>() / m,
        per_pair_inner,
    })
}

/// Monte-Carlo estimate of the expected sigmoid argument.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n_samples: usize,
}

/// Estimate `E_{n, eps}[inner]`; positive when the policy, relative to the
/// reference, favours the winner. Winner and loser share each noise draw.
pub fn implicit_reward_margin(
    process: &DiffusionProcess,
    policy: &Denoiser,
    reference: &Denoiser,
    pair: &PreferencePair,
    n_samples: usize,
    config: &DpoConfig,
    rng: &mut Rng,
) -> Result<MarginEstimate> {
    if n_samples == 0 {
        return Err(Error::Argument("implicit_reward_margin needs n_samples > 0".into()));
    }
    let dim = pair.winner.dim();
    let mut values = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let draw = DpoDraw::shared(rng, process.n_steps(), dim);
        values.push(inner_term(process, policy, reference, pair, &draw, config)?);
    }
    let n = n_samples as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std_err = if n_samples > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(MarginEstimate {
        mean,
        std_err,
        n_samples,
    })
}
