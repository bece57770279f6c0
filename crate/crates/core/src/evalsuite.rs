//! Objective metrics: alignment scores, a Fréchet distance between fitted
//! Gaussians, temporal-order accuracy and held-out preference accuracy.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::diffusion::{DiffusionProcess, GuidanceConfig};
use crate::dpo::{self, DpoConfig};
use crate::error::{Error, Result};
use crate::par;
use crate::preference::PreferencePair;
use crate::rng;
use crate::toyworld::{distinct_permutations, ConditionSpec, Sample, ScorerId, ToyWorld};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_score1: f64,
    pub mean_score2: f64,
    pub frechet_gaussian: f64,
    /// Only present when held-out pairs and a reference model were supplied.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pref_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pref_zero_fraction: Option<f64>,
    pub temporal_order_accuracy: f64,
    pub temporal_chance_level: f64,
    pub n_eval: usize,
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        let mut s = String::new();
        s.push_str(&format!("{:<26}{:>10}\n", "metric", "value"));
        s.push_str(&format!("{:<26}{:>10.4}\n", "mean_score1", self.mean_score1));
        s.push_str(&format!("{:<26}{:>10.4}\n", "mean_score2", self.mean_score2));
        s.push_str(&format!("{:<26}{:>10.4}\n", "frechet_gaussian", self.frechet_gaussian));
        s.push_str(&format!("{:<26}{:>10}\n", "pref_accuracy", opt(self.pref_accuracy)));
        s.push_str(&format!("{:<26}{:>10}\n", "pref_zero_fraction", opt(self.pref_zero_fraction)));
        s.push_str(&format!("{:<26}{:>10.4}\n", "temporal_order_accuracy", self.temporal_order_accuracy));
        s.push_str(&format!("{:<26}{:>10.4}\n", "temporal_chance_level", self.temporal_chance_level));
        s.push_str(&format!("{:<26}{:>10}\n", "n_eval", self.n_eval));
        s
    }
}

fn moments(set: &[Sample], what: &'static str) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if set.len() < 2 {
        return Err(Error::Argument(format!("{what} needs at least 2 samples, got {}", set.len())));
    }
    let d = set[0].dim();
    if let Some(bad) = set.iter().find(|s| s.dim() != d) {
        return Err(Error::Shape { what, expected: d, got: bad.dim() });
    }
    let n = set.len() as f64;
    let mut mu = DVector::zeros(d);
    for s in set {
        mu += DVector::from_column_slice(&s.0);
    }
    mu /= n;
    let mut cov = DMatrix::zeros(d, d);
    for s in set {
        let c = DVector::from_column_slice(&s.0) - &mu;
        cov += &c * c.transpose();
    }
    cov /= n - 1.0;
    Ok((mu, cov))
}

fn sym_sqrt(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = SymmetricEigen::try_new(m.clone(), 1e-12, 10_000)?;
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Some(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose())
}

fn diagonal_distance(mu_a: &DVector<f64>, cov_a: &DMatrix<f64>, mu_b: &DVector<f64>, cov_b: &DMatrix<f64>) -> f64 {
    let mean = (mu_a - mu_b).norm_squared();
    let cov: f64 = (0..mu_a.len())
        .map(|i| (cov_a[(i, i)].max(0.0).sqrt() - cov_b[(i, i)].max(0.0).sqrt()).powi(2))
        .sum();
    mean + cov
}

fn full_distance(mu_a: &DVector<f64>, cov_a: &DMatrix<f64>, mu_b: &DVector<f64>, cov_b: &DMatrix<f64>) -> Option<f64> {
    // Tr((AB)^{1/2}) = Tr((A^{1/2} B A^{1/2})^{1/2}), which keeps everything symmetric.
    let ra = sym_sqrt(cov_a)?;
    let inner = &ra * cov_b * &ra;
    let inner = (&inner + inner.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(inner, 1e-12, 10_000)?;
    let tr_sqrt: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    Some((mu_a - mu_b).norm_squared() + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt)
}

/// Fréchet distance between two Gaussians given by their moments.
pub fn frechet_from_moments(
    mu_a: &DVector<f64>,
    cov_a: &DMatrix<f64>,
    mu_b: &DVector<f64>,
    cov_b: &DMatrix<f64>,
) -> f64 {
    full_distance(mu_a, cov_a, mu_b, cov_b)
        .unwrap_or_else(|| {
            log::warn!("matrix square root failed; using diagonal covariances");
            diagonal_distance(mu_a, cov_a, mu_b, cov_b)
        })
        .max(0.0)
}

fn frechet_unclamped(set_a: &[Sample], set_b: &[Sample]) -> Result<f64> {
    let (mu_a, cov_a) = moments(set_a, "frechet set_a")?;
    let (mu_b, cov_b) = moments(set_b, "frechet set_b")?;
    if mu_a.len() != mu_b.len() {
        return Err(Error::Shape { what: "frechet set_b", expected: mu_a.len(), got: mu_b.len() });
    }
    let d = mu_a.len();
    if set_a.len() <= d || set_b.len() <= d {
        log::warn!(
            "frechet distance on {} and {} samples of dim {d}: covariance is rank deficient, using diagonal",
            set_a.len(),
            set_b.len()
        );
        return Ok(diagonal_distance(&mu_a, &cov_a, &mu_b, &cov_b));
    }
    Ok(full_distance(&mu_a, &cov_a, &mu_b, &cov_b).unwrap_or_else(|| {
        log::warn!("matrix square root failed; using diagonal covariances");
        diagonal_distance(&mu_a, &cov_a, &mu_b, &cov_b)
    }))
}

/// `|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2})` for Gaussians fitted
/// to the two sets. Falls back to diagonal covariances when either set has
/// at most `D` samples.
pub fn frechet_gaussian_distance(set_a: &[Sample], set_b: &[Sample]) -> Result<f64> {
    Ok(frechet_unclamped(set_a, set_b)?.max(0.0))
}

/// One guided generation per condition. The noise stream is keyed by the
/// condition id, so the result does not depend on list order.
pub fn generate(
    process: &DiffusionProcess,
    model: &Denoiser,
    conditions: &[ConditionSpec],
    guidance: &GuidanceConfig,
    seed: u64,
) -> Result<Vec<Sample>> {
    par::try_map_range(conditions.len(), |i| {
        let mut r = rng::rng_from(rng::derive(seed, &conditions[i].id));
        process.sample(model, &conditions[i], guidance, &mut r)
    })
}

fn check_paired(conditions: &[ConditionSpec], samples: &[Sample]) -> Result<()> {
    if conditions.is_empty() {
        return Err(Error::Argument("evaluation needs at least one condition".into()));
    }
    if conditions.len() != samples.len() {
        return Err(Error::Shape { what: "evaluation samples", expected: conditions.len(), got: samples.len() });
    }
    Ok(())
}

/// Mean score of `samples[i]` against `conditions[i]`.
pub fn mean_alignment_score(
    world: &ToyWorld,
    scorer: ScorerId,
    conditions: &[ConditionSpec],
    samples: &[Sample],
) -> Result<f64> {
    check_paired(conditions, samples)?;
    let scores = par::try_map_range(conditions.len(), |i| world.score(scorer, &conditions[i], &samples[i]))?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Fraction of samples whose decoded event order equals their condition's
/// order, over conditions that have an order to get wrong.
pub fn temporal_order_accuracy(world: &ToyWorld, conditions: &[ConditionSpec], samples: &[Sample]) -> Result<f64> {
    check_paired(conditions, samples)?;
    let idx: Vec<usize> = (0..conditions.len()).filter(|&i| conditions[i].has_order()).collect();
    if idx.is_empty() {
        return Err(Error::Argument("temporal order accuracy needs conditions with two distinct events".into()));
    }
    let hits = par::try_map_range(idx.len(), |k| {
        let i = idx[k];
        Ok::<bool, Error>(world.decode_order(&conditions[i], &samples[i])? == conditions[i].events)
    })?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / idx.len() as f64)
}

/// Accuracy of a decoder that picks a uniformly random distinct ordering.
pub fn temporal_chance_level(conditions: &[ConditionSpec]) -> Result<f64> {
    let ordered: Vec<&ConditionSpec> = conditions.iter().filter(|c| c.has_order()).collect();
    if ordered.is_empty() {
        return Err(Error::Argument("chance level needs conditions with two distinct events".into()));
    }
    Ok(ordered
        .iter()
        .map(|c| 1.0 / distinct_permutations(&c.events).len() as f64)
        .sum::<f64>()
        / ordered.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrefAccuracy {
    /// Fraction of pairs with a strictly positive margin.
    pub accuracy: f64,
    /// Fraction of pairs whose margin is exactly zero.
    pub zero_fraction: f64,
    pub n_pairs: usize,
}

/// Held-out preference accuracy of the implicit reward. Each pair's Monte
/// Carlo draws are keyed by its id, so the result is invariant to pair order.
pub fn preference_accuracy(
    process: &DiffusionProcess,
    policy: &Denoiser,
    reference: &Denoiser,
    pairs: &[PreferencePair],
    n_samples: usize,
    config: &DpoConfig,
    seed: u64,
) -> Result<PrefAccuracy> {
    if pairs.is_empty() {
        return Err(Error::Argument("preference accuracy needs held-out pairs".into()));
    }
    let margins = par::try_map_range(pairs.len(), |i| {
        let mut r = rng::rng_from(rng::derive(seed, &pairs[i].id));
        dpo::implicit_reward_margin(process, policy, reference, &pairs[i], n_samples, config, &mut r)
    })?;
    let n = pairs.len() as f64;
    Ok(PrefAccuracy {
        accuracy: margins.iter().filter(|m| m.mean > 0.0).count() as f64 / n,
        zero_fraction: margins.iter().filter(|m| m.mean == 0.0).count() as f64 / n,
        n_pairs: pairs.len(),
    })
}

/// Inputs for a full evaluation pass.
pub struct EvalInputs<'a> {
    pub world: &'a ToyWorld,
    pub process: &'a DiffusionProcess,
    pub guidance: GuidanceConfig,
    pub conditions: &'a [ConditionSpec],
    /// Reference distribution for the Fréchet distance.
    pub ground_truth: &'a [Sample],
    pub seed: u64,
    /// Reference model and held-out pairs for preference accuracy.
    pub preference: Option<(&'a Denoiser, &'a [PreferencePair], usize, DpoConfig)>,
}

pub fn evaluate(model: &Denoiser, inputs: &EvalInputs<'_>) -> Result<EvalReport> {
    let samples = generate(inputs.process, model, inputs.conditions, &inputs.guidance, inputs.seed)?;
    let pref = match inputs.preference {
        Some((reference, pairs, n_samples, cfg)) => Some(preference_accuracy(
            inputs.process,
            model,
            reference,
            pairs,
            n_samples,
            &cfg,
            rng::derive(inputs.seed, "pref"),
        )?),
        None => None,
    };
    let report = EvalReport {
        mean_score1: mean_alignment_score(inputs.world, ScorerId::First, inputs.conditions, &samples)?,
        mean_score2: mean_alignment_score(inputs.world, ScorerId::Second, inputs.conditions, &samples)?,
        frechet_gaussian: frechet_gaussian_distance(&samples, inputs.ground_truth)?,
        pref_accuracy: pref.map(|p| p.accuracy),
        pref_zero_fraction: pref.map(|p| p.zero_fraction),
        temporal_order_accuracy: temporal_order_accuracy(inputs.world, inputs.conditions, &samples)?,
        temporal_chance_level: temporal_chance_level(inputs.conditions)?,
        n_eval: inputs.conditions.len(),
    };
    let finite = [report.mean_score1, report.mean_score2, report.frechet_gaussian, report.temporal_order_accuracy]
        .iter()
        .all(|v| v.is_finite());
    if !finite {
        return Err(Error::Numerical(format!("evaluation produced non-finite metrics: {report:?}")));
    }
    Ok(report)
}
