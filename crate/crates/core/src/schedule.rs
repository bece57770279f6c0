//! Diffusion noise schedule and the per-step quantities derived from it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weighting applied per step, both to the denoising loss and inside the
/// preference objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// `w(n) = 1`.
    #[default]
    Constant,
    /// `w(n) = snr(n)`.
    Snr,
}

impl std::str::FromStr for Weighting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Weighting::Constant),
            "snr" => Ok(Weighting::Snr),
            other => Err(Error::Config(format!("unknown weighting {other:?}"))),
        }
    }
}

impl std::fmt::Display for Weighting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Weighting::Constant => "constant",
            Weighting::Snr => "snr",
        })
    }
}

/// Linear beta schedule with all derived tables. Tables are stored 0-based:
/// entry `n - 1` belongs to step `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta_start: f64,
    beta_end: f64,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    posterior_vars: Vec<f64>,
    snrs: Vec<f64>,
}

impl NoiseSchedule {
    /// Linearly spaced betas from `beta_start` to `beta_end` inclusive. With a
    /// single step only `beta_start` is used.
    pub fn linear(n_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::Config("n_steps must be at least 1".into()));
        }
        let ordered = if n_steps == 1 {
            beta_start <= beta_end
        } else {
            beta_start < beta_end
        };
        if !(beta_start > 0.0 && beta_end < 1.0 && ordered) {
            return Err(Error::Config(format!(
                "need 0 < beta_start < beta_end < 1, got {beta_start} .. {beta_end}"
            )));
        }
        let betas: Vec<f64> = if n_steps == 1 {
            vec![beta_start]
        } else {
            let span = (n_steps - 1) as f64;
            (0..n_steps)
                .map(|i| beta_start + (beta_end - beta_start) * i as f64 / span)
                .collect()
        };
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(n_steps);
        let mut running = 1.0;
        for a in &alphas {
            running *= a;
            alpha_bars.push(running);
        }
        let posterior_vars = (0..n_steps)
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bars[i - 1] };
                (1.0 - prev) / (1.0 - alpha_bars[i]) * betas[i]
            })
            .collect();
        let snrs = alpha_bars.iter().map(|ab| ab / (1.0 - ab)).collect();
        Ok(Self {
            beta_start,
            beta_end,
            betas,
            alphas,
            alpha_bars,
            posterior_vars,
            snrs,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta_start(&self) -> f64 {
        self.beta_start
    }

    pub fn beta_end(&self) -> f64 {
        self.beta_end
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn posterior_vars(&self) -> &[f64] {
        &self.posterior_vars
    }

    pub fn snrs(&self) -> &[f64] {
        &self.snrs
    }

    pub fn check_step(&self, n: usize) -> Result<()> {
        if n == 0 || n > self.n_steps() {
            Err(Error::Index {
                index: n,
                max: self.n_steps(),
            })
        } else {
            Ok(())
        }
    }

    pub fn beta(&self, n: usize) -> f64 {
        self.betas[n - 1]
    }

    pub fn alpha(&self, n: usize) -> f64 {
        self.alphas[n - 1]
    }

    /// Cumulative product of alphas; step 0 maps to 1.
    pub fn alpha_bar(&self, n: usize) -> f64 {
        if n == 0 {
            1.0
        } else {
            self.alpha_bars[n - 1]
        }
    }

    pub fn posterior_var(&self, n: usize) -> f64 {
        self.posterior_vars[n - 1]
    }

    pub fn snr(&self, n: usize) -> f64 {
        self.snrs[n - 1]
    }

    /// Step weight under `weighting`.
    pub fn snr_weight(&self, n: usize, weighting: Weighting) -> Result<f64> {
        self.check_step(n)?;
        Ok(match weighting {
            Weighting::Constant => 1.0,
            Weighting::Snr => self.snr(n),
        })
    }
}
