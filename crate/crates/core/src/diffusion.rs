//! Forward noising, the noise-prediction loss, and ancestral sampling with
//! classifier-free guidance.

use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::rng::{gaussian_vec, Rng};
use crate::schedule::{NoiseSchedule, Weighting};
use crate::toyworld::{ConditionSpec, Sample};

/// Coefficient on the noise term when jumping straight from `x_0` to `x_n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardCoeff {
    /// `sqrt(1 - alpha_bar_n)`: matches the marginal variance of the chain.
    #[default]
    Sqrt,
    /// `1 - alpha_bar_n`, the linear coefficient.
    AsPrinted,
}

impl std::str::FromStr for ForwardCoeff {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sqrt" => Ok(ForwardCoeff::Sqrt),
            "as_printed" => Ok(ForwardCoeff::AsPrinted),
            other => Err(Error::Config(format!(
                "unknown forward_coeff {other:?} (expected sqrt or as_printed)"
            ))),
        }
    }
}

impl std::fmt::Display for ForwardCoeff {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ForwardCoeff::Sqrt => "sqrt",
            ForwardCoeff::AsPrinted => "as_printed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub scale: f64,
    pub n_inference_steps: usize,
}

impl GuidanceConfig {
    pub fn new(scale: f64, n_inference_steps: usize) -> Self {
        Self {
            scale,
            n_inference_steps,
        }
    }
}

/// Schedule plus the conventions that go with it.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionProcess {
    pub schedule: NoiseSchedule,
    pub coeff: ForwardCoeff,
    /// Per-step weight of the noise-prediction loss.
    pub loss_weighting: Weighting,
}

fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

impl DiffusionProcess {
    pub fn new(schedule: NoiseSchedule, coeff: ForwardCoeff) -> Self {
        Self {
            schedule,
            coeff,
            loss_weighting: Weighting::Constant,
        }
    }

    pub fn n_steps(&self) -> usize {
        self.schedule.n_steps()
    }

    pub fn noise_coeff(&self, n: usize) -> f64 {
        let ab = self.schedule.alpha_bar(n);
        match self.coeff {
            ForwardCoeff::Sqrt => (1.0 - ab).sqrt(),
            ForwardCoeff::AsPrinted => 1.0 - ab,
        }
    }

    /// `x_n = sqrt(alpha_bar_n) x_0 + c_n eps`.
    pub fn forward_sample(&self, x0: &Sample, n: usize, eps: &Sample) -> Result<Sample> {
        self.schedule.check_step(n)?;
        check_dim("noise", x0.dim(), eps.dim())?;
        let s = self.schedule.alpha_bar(n).sqrt();
        let c = self.noise_coeff(n);
        Ok(Sample(
            x0.0.iter().zip(&eps.0).map(|(x, e)| s * x + c * e).collect(),
        ))
    }

    /// Solve the forward relation for `x_0` given the noise that produced `x_n`.
    pub fn recover_x0(&self, xn: &Sample, n: usize, eps: &Sample) -> Result<Sample> {
        self.schedule.check_step(n)?;
        check_dim("noise", xn.dim(), eps.dim())?;
        let s = self.schedule.alpha_bar(n).sqrt();
        let c = self.noise_coeff(n);
        Ok(Sample(
            xn.0.iter().zip(&eps.0).map(|(x, e)| (x - c * e) / s).collect(),
        ))
    }

    /// Weighted squared noise-prediction error and its parameter gradient.
    pub fn ldm_loss(
        &self,
        model: &Denoiser,
        x0: &Sample,
        cond: Option<&ConditionSpec>,
        n: usize,
        eps: &Sample,
    ) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; model.n_params()];
        let loss = self.ldm_loss_into(model, x0, cond, n, eps, 1.0, &mut grad)?;
        Ok((loss, grad))
    }

    /// Like [`Self::ldm_loss`] but adds `scale * grad` into `grad`.
    #[allow(clippy::too_many_arguments)]
    pub fn ldm_loss_into(
        &self,
        model: &Denoiser,
        x0: &Sample,
        cond: Option<&ConditionSpec>,
        n: usize,
        eps: &Sample,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        let gamma = self.schedule.snr_weight(n, self.loss_weighting)?;
        let xn = self.forward_sample(x0, n, eps)?;
        let trace = model.forward_trace(&xn, n, cond)?;
        let diff: Vec<f64> = trace.output().iter().zip(&eps.0).map(|(p, e)| p - e).collect();
        let loss = gamma * diff.iter().map(|d| d * d).sum::<f64>();
        let upstream: Vec<f64> = diff.iter().map(|d| 2.0 * gamma * d).collect();
        model.backward_trace_into(&trace, &upstream, scale, grad)?;
        Ok(loss)
    }

    /// `eps(null) + w (eps(cond) - eps(null))`. `w = 1` evaluates only the
    /// conditional branch and `w = 0` only the unconditional one.
    pub fn guided_noise(
        &self,
        model: &Denoiser,
        x: &Sample,
        n: usize,
        cond: &ConditionSpec,
        scale: f64,
    ) -> Result<Sample> {
        if scale == 1.0 {
            return model.forward(x, n, Some(cond));
        }
        let uncond = model.forward(x, n, None)?;
        if scale == 0.0 {
            return Ok(uncond);
        }
        let c = model.forward(x, n, Some(cond))?;
        Ok(Sample(
            uncond.0.iter().zip(&c.0).map(|(u, c)| u + scale * (c - u)).collect(),
        ))
    }

    /// Mean of `p(x_prev | x_t)` given a noise estimate, for a possibly
    /// strided jump `t -> prev` (`prev < t`). With `prev = t - 1` this is
    /// `(x_t - (1 - alpha_t) / sqrt(1 - alpha_bar_t) * eps) / sqrt(alpha_t)`.
    pub fn posterior_mean(&self, x: &Sample, t: usize, prev: usize, eps_hat: &Sample) -> Sample {
        let ab_t = self.schedule.alpha_bar(t);
        let alpha = ab_t / self.schedule.alpha_bar(prev);
        let k = (1.0 - alpha) / (1.0 - ab_t).sqrt();
        let inv = 1.0 / alpha.sqrt();
        Sample(
            x.0.iter().zip(&eps_hat.0).map(|(x, e)| inv * (x - k * e)).collect(),
        )
    }

    /// Variance of `p(x_prev | x_t)`; zero when `prev = 0`.
    pub fn posterior_variance(&self, t: usize, prev: usize) -> f64 {
        if prev + 1 == t {
            return self.schedule.posterior_var(t);
        }
        let ab_t = self.schedule.alpha_bar(t);
        let ab_p = self.schedule.alpha_bar(prev);
        (1.0 - ab_p) / (1.0 - ab_t) * (1.0 - ab_t / ab_p)
    }

    /// One ancestral jump from step `t` to step `prev`.
    #[allow(clippy::too_many_arguments)]
    pub fn reverse_jump(
        &self,
        model: &Denoiser,
        x: &Sample,
        t: usize,
        prev: usize,
        cond: &ConditionSpec,
        scale: f64,
        rng: &mut Rng,
    ) -> Result<Sample> {
        self.schedule.check_step(t)?;
        if prev >= t {
            return Err(Error::Argument(format!("reverse jump {t} -> {prev} is not backwards")));
        }
        let eps = self.guided_noise(model, x, t, cond, scale)?;
        let mut mean = self.posterior_mean(x, t, prev, &eps);
        let var = self.posterior_variance(t, prev);
        if var > 0.0 {
            let sd = var.sqrt();
            for (m, z) in mean.0.iter_mut().zip(gaussian_vec(rng, x.dim())) {
                *m += sd * z;
            }
        }
        Ok(mean)
    }

    /// Draw `x_{n-1}` from `x_n`.
    pub fn reverse_step(
        &self,
        model: &Denoiser,
        x: &Sample,
        n: usize,
        cond: &ConditionSpec,
        guidance: &GuidanceConfig,
        rng: &mut Rng,
    ) -> Result<Sample> {
        self.reverse_jump(model, x, n, n - 1, cond, guidance.scale, rng)
    }

    /// Evenly spaced steps `t_1 < .. < t_S = N` visited by the sampler.
    pub fn inference_steps(&self, n_inference_steps: usize) -> Result<Vec<usize>> {
        let n = self.n_steps();
        if n_inference_steps == 0 || n_inference_steps > n {
            return Err(Error::Config(format!(
                "n_inference_steps must be in 1..={n}, got {n_inference_steps}"
            )));
        }
        Ok((1..=n_inference_steps).map(|j| j * n / n_inference_steps).collect())
    }

    /// Ancestral sampling from `x_N ~ N(0, I)`.
    pub fn sample(
        &self,
        model: &Denoiser,
        cond: &ConditionSpec,
        guidance: &GuidanceConfig,
        rng: &mut Rng,
    ) -> Result<Sample> {
        let steps = self.inference_steps(guidance.n_inference_steps)?;
        let mut x = Sample(gaussian_vec(rng, model.arch().sample_dim));
        for j in (0..steps.len()).rev() {
            let prev = if j == 0 { 0 } else { steps[j - 1] };
            x = self.reverse_jump(model, &x, steps[j], prev, cond, guidance.scale, rng)?;
        }
        if !x.is_finite() {
            return Err(Error::Numerical(format!("sample for {} diverged", cond.id)));
        }
        Ok(x)
    }
}
