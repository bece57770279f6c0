//! The synthetic generation task: structured conditions (ordered event
//! lists), their ground-truth signals, programmatic condition perturbations,
//! and a pair of fixed projection scorers that play the role of two
//! independently trained text/signal alignment models.
//!
//! A sample of dimension `D` is split into `max_events` equal time slots. Event
//! `k` placed at position `i` contributes a Gaussian bump template to slot `i`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Ordered list of event ids; the toy stand-in for a text prompt.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConditionSpec {
    pub id: String,
    pub events: Vec<usize>,
}

impl ConditionSpec {
    pub fn new(id: impl Into<String>, events: Vec<usize>) -> Self {
        Self {
            id: id.into(),
            events,
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn validate(&self, vocab_size: usize, max_events: usize) -> Result<()> {
        if self.events.is_empty() || self.events.len() > max_events {
            return Err(Error::InvalidCondition(format!(
                "{}: {} events, need 1..={max_events}",
                self.id,
                self.events.len()
            )));
        }
        if let Some(bad) = self.events.iter().find(|&&e| e >= vocab_size) {
            return Err(Error::InvalidCondition(format!(
                "{}: event {bad} outside vocabulary of {vocab_size}",
                self.id
            )));
        }
        Ok(())
    }

    /// True when at least two events differ, i.e. reordering can change it.
    pub fn has_order(&self) -> bool {
        self.events.windows(2).any(|w| w[0] != w[1])
    }
}

/// A signal vector; the toy analogue of an audio latent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Sample(pub Vec<f64>);

impl Sample {
    pub fn zeros(dim: usize) -> Self {
        Sample(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub vocab_size: usize,
    pub sample_dim: usize,
    pub max_events: usize,
    pub embed_dim: usize,
    /// Bump standard deviation, in units of the event spacing inside a slot.
    pub bump_width: f64,
    /// How far each scorer's condition embedding departs from a perfect
    /// match of the ground-truth signal embedding.
    pub scorer_misalignment: f64,
    pub scorer_seeds: [u64; 2],
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            vocab_size: 8,
            sample_dim: 32,
            max_events: 4,
            embed_dim: 16,
            bump_width: 0.75,
            scorer_misalignment: 0.5,
            scorer_seeds: [0x5c0_4e01, 0x5c0_4e02],
        }
    }
}

/// Which of the two scorers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScorerId {
    First,
    Second,
}

impl ScorerId {
    pub const BOTH: [ScorerId; 2] = [ScorerId::First, ScorerId::Second];

    fn index(self) -> usize {
        match self {
            ScorerId::First => 0,
            ScorerId::Second => 1,
        }
    }
}

/// One fixed linear scorer. Samples are embedded by `sample_proj` (E x D);
/// a condition embeds as `sum_i position[i] * event_emb[event_i]`, each
/// `position[i]` an E x W matrix and each event embedding a W-vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Scorer {
    embed_dim: usize,
    sample_dim: usize,
    slot_width: usize,
    sample_proj: Vec<f64>,
    position: Vec<Vec<f64>>,
    event_emb: Vec<Vec<f64>>,
}

impl Scorer {
    fn new(cfg: &WorldConfig, templates: &[Vec<f64>], seed: u64) -> Self {
        let (e, d) = (cfg.embed_dim, cfg.sample_dim);
        let w = d / cfg.max_events;
        let mut r = rng::rng_from(seed);
        let scale = 1.0 / (d as f64).sqrt();
        let sample_proj: Vec<f64> = rng::gaussian_vec(&mut r, e * d)
            .into_iter()
            .map(|v| v * scale)
            .collect();
        let mis = cfg.scorer_misalignment;
        let position = (0..cfg.max_events)
            .map(|slot| {
                let noise = rng::gaussian_vec(&mut r, e * w);
                let mut m = vec![0.0; e * w];
                for row in 0..e {
                    for col in 0..w {
                        let aligned = sample_proj[row * d + slot * w + col];
                        m[row * w + col] = aligned + mis * scale * noise[row * w + col];
                    }
                }
                m
            })
            .collect();
        let event_emb = templates
            .iter()
            .map(|t| {
                let tn = (t.iter().map(|v| v * v).sum::<f64>() / w as f64).sqrt();
                let noise = rng::gaussian_vec(&mut r, w);
                t.iter()
                    .zip(noise)
                    .map(|(tv, n)| tv + mis * tn * n)
                    .collect()
            })
            .collect();
        Self {
            embed_dim: e,
            sample_dim: d,
            slot_width: w,
            sample_proj,
            position,
            event_emb,
        }
    }

    pub fn embed_sample(&self, sample: &Sample) -> Result<Vec<f64>> {
        if sample.dim() != self.sample_dim {
            return Err(Error::Shape {
                what: "sample",
                expected: self.sample_dim,
                got: sample.dim(),
            });
        }
        let d = self.sample_dim;
        Ok((0..self.embed_dim)
            .map(|r| {
                self.sample_proj[r * d..(r + 1) * d]
                    .iter()
                    .zip(&sample.0)
                    .map(|(a, x)| a * x)
                    .sum()
            })
            .collect())
    }

    pub fn embed_condition(&self, cond: &ConditionSpec) -> Result<Vec<f64>> {
        cond.validate(self.event_emb.len(), self.position.len())?;
        let w = self.slot_width;
        let mut out = vec![0.0; self.embed_dim];
        for (slot, &ev) in cond.events.iter().enumerate() {
            let p = &self.position[slot];
            let emb = &self.event_emb[ev];
            for (r, o) in out.iter_mut().enumerate() {
                *o += p[r * w..(r + 1) * w]
                    .iter()
                    .zip(emb)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            }
        }
        Ok(out)
    }

    /// Row-major E x D sample projection.
    pub fn sample_projection(&self) -> &[f64] {
        &self.sample_proj
    }

    /// Row-major E x W matrix for time slot `slot`.
    pub fn position_matrix(&self, slot: usize) -> &[f64] {
        &self.position[slot]
    }

    pub fn event_embedding(&self, event: usize) -> &[f64] {
        &self.event_emb[event]
    }

    /// Cosine similarity between the condition and sample embeddings.
    pub fn score(&self, cond: &ConditionSpec, sample: &Sample) -> Result<f64> {
        let c = self.embed_condition(cond)?;
        let s = self.embed_sample(sample)?;
        cosine(&c, &s)
    }
}

pub(crate) fn cosine(c: &[f64], s: &[f64]) -> Result<f64> {
    let nc = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ns = s.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nc == 0.0 {
        return Err(Error::Scoring("condition"));
    }
    if ns == 0.0 {
        return Err(Error::Scoring("sample"));
    }
    let dot: f64 = c.iter().zip(s).map(|(a, b)| a * b).sum();
    Ok((dot / (nc * ns)).clamp(-1.0, 1.0))
}

/// Templates, scorers and the world's sizes. Immutable once built.
#[derive(Debug, Clone)]
pub struct ToyWorld {
    config: WorldConfig,
    templates: Vec<Vec<f64>>,
    scorers: [Scorer; 2],
}

impl ToyWorld {
    pub fn new(config: WorldConfig) -> Result<Self> {
        if config.vocab_size < 2 {
            return Err(Error::Config("vocab_size must be at least 2".into()));
        }
        if config.max_events == 0 || config.sample_dim % config.max_events != 0 {
            return Err(Error::Config(format!(
                "sample_dim {} must be a positive multiple of max_events {}",
                config.sample_dim, config.max_events
            )));
        }
        if config.embed_dim == 0 || !(config.bump_width > 0.0) {
            return Err(Error::Config("embed_dim and bump_width must be positive".into()));
        }
        let w = config.sample_dim / config.max_events;
        let k = config.vocab_size;
        let spacing = w as f64 / k as f64;
        let sigma = config.bump_width * spacing;
        let templates = (0..k)
            .map(|ev| {
                let centre = (ev as f64 + 0.5) * spacing - 0.5;
                (0..w)
                    .map(|j| {
                        let z = (j as f64 - centre) / sigma;
                        (-0.5 * z * z).exp()
                    })
                    .collect()
            })
            .collect::<Vec<Vec<f64>>>();
        let scorers = [
            Scorer::new(&config, &templates, config.scorer_seeds[0]),
            Scorer::new(&config, &templates, config.scorer_seeds[1]),
        ];
        Ok(Self {
            config,
            templates,
            scorers,
        })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn sample_dim(&self) -> usize {
        self.config.sample_dim
    }

    pub fn max_events(&self) -> usize {
        self.config.max_events
    }

    pub fn slot_width(&self) -> usize {
        self.config.sample_dim / self.config.max_events
    }

    pub fn template(&self, event: usize) -> &[f64] {
        &self.templates[event]
    }

    pub fn scorer(&self, id: ScorerId) -> &Scorer {
        &self.scorers[id.index()]
    }

    pub fn validate(&self, cond: &ConditionSpec) -> Result<()> {
        cond.validate(self.config.vocab_size, self.config.max_events)
    }

    pub fn score(&self, id: ScorerId, cond: &ConditionSpec, sample: &Sample) -> Result<f64> {
        self.scorer(id).score(cond, sample)
    }

    /// Noise-free signal: each event's template in its time slot.
    pub fn clean_signal(&self, cond: &ConditionSpec) -> Result<Sample> {
        self.validate(cond)?;
        let w = self.slot_width();
        let mut x = vec![0.0; self.sample_dim()];
        for (slot, &ev) in cond.events.iter().enumerate() {
            for (dst, t) in x[slot * w..(slot + 1) * w].iter_mut().zip(&self.templates[ev]) {
                *dst += t;
            }
        }
        Ok(Sample(x))
    }

    /// Clean signal plus isotropic Gaussian noise of standard deviation
    /// `noise_scale`.
    pub fn synthesize_ground_truth(
        &self,
        cond: &ConditionSpec,
        noise_scale: f64,
        seed: u64,
    ) -> Result<Sample> {
        let mut x = self.clean_signal(cond)?;
        if noise_scale != 0.0 {
            let mut r = rng::rng_from(seed);
            for (v, n) in x.0.iter_mut().zip(rng::gaussian_vec(&mut r, self.sample_dim())) {
                *v += noise_scale * n;
            }
        }
        Ok(x)
    }

    /// Uniform random condition with a length in `min_len..=max_len`.
    pub fn random_condition(
        &self,
        rng: &mut Rng,
        id: impl Into<String>,
        min_len: usize,
        max_len: usize,
    ) -> ConditionSpec {
        let len = rng.random_range(min_len..=max_len.min(self.max_events()));
        let events = (0..len)
            .map(|_| rng.random_range(0..self.vocab_size()))
            .collect();
        ConditionSpec::new(id, events)
    }

    /// Random condition with at least two distinct events, so its order can
    /// be perturbed and decoded.
    pub fn random_ordered_condition(&self, rng: &mut Rng, id: impl Into<String>) -> ConditionSpec {
        let id = id.into();
        loop {
            let c = self.random_condition(rng, id.clone(), 2, self.max_events());
            if c.has_order() {
                return c;
            }
        }
    }

    /// Replace exactly one event with a different vocabulary id.
    pub fn perturb_events(&self, cond: &ConditionSpec, seed: u64) -> Result<ConditionSpec> {
        self.validate(cond)?;
        let mut r = rng::rng_from(seed);
        let pos = r.random_range(0..cond.len());
        let old = cond.events[pos];
        let mut new = r.random_range(0..self.vocab_size() - 1);
        if new >= old {
            new += 1;
        }
        let mut events = cond.events.clone();
        events[pos] = new;
        Ok(ConditionSpec::new(format!("{}~ev", cond.id), events))
    }

    /// Reorder the events into a uniformly chosen different sequence.
    pub fn perturb_temporal(&self, cond: &ConditionSpec, seed: u64) -> Result<ConditionSpec> {
        self.validate(cond)?;
        if cond.len() < 2 {
            return Err(Error::Precondition(format!(
                "temporal perturbation needs at least 2 events, {} has {}",
                cond.id,
                cond.len()
            )));
        }
        let options: Vec<Vec<usize>> = distinct_permutations(&cond.events)
            .into_iter()
            .filter(|p| *p != cond.events)
            .collect();
        if options.is_empty() {
            return Err(Error::Precondition(format!(
                "all events of {} are identical; no reordering exists",
                cond.id
            )));
        }
        let mut r = rng::rng_from(seed);
        let pick = r.random_range(0..options.len());
        Ok(ConditionSpec::new(
            format!("{}~tm", cond.id),
            options[pick].clone(),
        ))
    }

    /// Event order read back from a sample: the ordering of the condition's
    /// events whose clean signal correlates best with the sample. Ties go to
    /// the first ordering enumerated.
    pub fn decode_order(&self, cond: &ConditionSpec, sample: &Sample) -> Result<Vec<usize>> {
        self.validate(cond)?;
        if sample.dim() != self.sample_dim() {
            return Err(Error::Shape {
                what: "sample",
                expected: self.sample_dim(),
                got: sample.dim(),
            });
        }
        let w = self.slot_width();
        // slot_match[slot][event]
        let slot_match: Vec<Vec<f64>> = (0..cond.len())
            .map(|slot| {
                let seg = &sample.0[slot * w..(slot + 1) * w];
                self.templates
                    .iter()
                    .map(|t| t.iter().zip(seg).map(|(a, b)| a * b).sum())
                    .collect()
            })
            .collect();
        let mut best: Option<(f64, Vec<usize>)> = None;
        for perm in distinct_permutations(&cond.events) {
            let total: f64 = perm
                .iter()
                .enumerate()
                .map(|(slot, &ev)| slot_match[slot][ev])
                .sum();
            if best.as_ref().is_none_or(|(b, _)| total > *b) {
                best = Some((total, perm));
            }
        }
        Ok(best.map(|(_, p)| p).unwrap_or_default())
    }
}

/// Distinct orderings of `events`, starting with `events` itself.
pub fn distinct_permutations(events: &[usize]) -> Vec<Vec<usize>> {
    fn rec(rest: &mut Vec<usize>, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest.is_empty() {
            if !out.contains(cur) {
                out.push(cur.clone());
            }
            return;
        }
        for i in 0..rest.len() {
            let v = rest.remove(i);
            cur.push(v);
            rec(rest, cur, out);
            cur.pop();
            rest.insert(i, v);
        }
    }
    let mut out = Vec::new();
    rec(&mut events.to_vec(), &mut Vec::new(), &mut out);
    out
}

/// Slot-by-event one-hot encoding (`max_events * vocab_size` values).
pub fn condition_features(cond: &ConditionSpec, vocab_size: usize, max_events: usize) -> Vec<f64> {
    let mut f = vec![0.0; vocab_size * max_events];
    for (slot, &ev) in cond.events.iter().enumerate().take(max_events) {
        if ev < vocab_size {
            f[slot * vocab_size + ev] = 1.0;
        }
    }
    f
}

/// Frozen condition encoder for the denoiser: `sum_i P_i e(event_i)` with
/// fixed random position matrices `P_i` (entries `N(0, 1/dim)`) and event
/// vectors `e(k)` (entries `N(0, 1)`). Order is encoded, but entangled with
/// event identity in a `dim`-dimensional code. `dim = 0` selects the exact
/// slot-by-event one-hot instead.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionEncoder {
    vocab_size: usize,
    max_events: usize,
    dim: usize,
    /// `table[(slot * vocab_size + event) * dim..][..dim] = P_slot e(event)`.
    table: Vec<f64>,
}

const ENCODER_SEED: u64 = 0x7e47_e1c0_de00_0001;

impl ConditionEncoder {
    pub fn new(vocab_size: usize, max_events: usize, dim: usize) -> Self {
        let mut table = Vec::new();
        if dim > 0 {
            let mut r = rng::rng_from(ENCODER_SEED);
            let events: Vec<Vec<f64>> = (0..vocab_size).map(|_| rng::gaussian_vec(&mut r, dim)).collect();
            let scale = 1.0 / (dim as f64).sqrt();
            table.reserve(max_events * vocab_size * dim);
            for _ in 0..max_events {
                let p: Vec<f64> = rng::gaussian_vec(&mut r, dim * dim).iter().map(|v| v * scale).collect();
                for e in &events {
                    for row in 0..dim {
                        table.push(p[row * dim..(row + 1) * dim].iter().zip(e).map(|(a, b)| a * b).sum());
                    }
                }
            }
        }
        Self {
            vocab_size,
            max_events,
            dim,
            table,
        }
    }

    /// Length of the code.
    pub fn output_dim(&self) -> usize {
        if self.dim == 0 {
            self.vocab_size * self.max_events
        } else {
            self.dim
        }
    }

    pub fn encode(&self, cond: &ConditionSpec) -> Vec<f64> {
        if self.dim == 0 {
            return condition_features(cond, self.vocab_size, self.max_events);
        }
        let mut out = vec![0.0; self.dim];
        for (slot, &ev) in cond.events.iter().enumerate().take(self.max_events) {
            if ev < self.vocab_size {
                let at = (slot * self.vocab_size + ev) * self.dim;
                for (o, v) in out.iter_mut().zip(&self.table[at..at + self.dim]) {
                    *o += v;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    #[test]
    fn encoder_is_a_sum_over_slots() {
        let enc = ConditionEncoder::new(8, 4, 12);
        let a = enc.encode(&ConditionSpec::new("a", vec![3]));
        let b = enc.encode(&ConditionSpec::new("b", vec![3, 5]));
        let c = enc.encode(&ConditionSpec::new("c", vec![5, 3]));
        assert_eq!(a.len(), 12);
        assert_ne!(b, c, "order must change the code");
        // slot 0 of [3, 5] contributes exactly the code of [3]
        let five_at_1: Vec<f64> = b.iter().zip(&a).map(|(x, y)| x - y).collect();
        let d = enc.encode(&ConditionSpec::new("d", vec![1, 5]));
        let one = enc.encode(&ConditionSpec::new("e", vec![1]));
        for i in 0..12 {
            assert_relative_eq!(d[i] - one[i], five_at_1[i], epsilon = 1e-12);
        }
        assert_eq!(ConditionEncoder::new(8, 4, 12), enc);
        let onehot = ConditionEncoder::new(8, 4, 0);
        assert_eq!(onehot.output_dim(), 32);
        assert_eq!(onehot.encode(&ConditionSpec::new("a", vec![3])), condition_features(&ConditionSpec::new("a", vec![3]), 8, 4));
    }

    fn world() -> ToyWorld {
        ToyWorld::new(WorldConfig::default()).unwrap()
    }

    fn c(events: &[usize]) -> ConditionSpec {
        ConditionSpec::new("t", events.to_vec())
    }

    #[test]
    fn zero_noise_single_event_is_template() {
        let w = world();
        let x = w.synthesize_ground_truth(&c(&[3]), 0.0, 1).unwrap();
        assert_eq!(&x.0[..8], w.template(3));
        assert!(x.0[8..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn order_matters_and_seed_determinism() {
        let w = world();
        let a = w.synthesize_ground_truth(&c(&[3, 5]), 0.0, 1).unwrap();
        let b = w.synthesize_ground_truth(&c(&[5, 3]), 0.0, 1).unwrap();
        assert_ne!(a, b);
        let n1 = w.synthesize_ground_truth(&c(&[3, 5]), 0.1, 9).unwrap();
        let n2 = w.synthesize_ground_truth(&c(&[3, 5]), 0.1, 9).unwrap();
        assert_eq!(n1, n2);
    }

    #[test]
    fn invalid_conditions() {
        let w = world();
        assert!(w.synthesize_ground_truth(&c(&[]), 0.0, 0).is_err());
        assert!(w.synthesize_ground_truth(&c(&[1, 2, 3, 4, 5]), 0.0, 0).is_err());
        assert!(w.synthesize_ground_truth(&c(&[8]), 0.0, 0).is_err());
    }

    fn pinv_solution(s: &Scorer, target: &[f64], d: usize) -> Sample {
        let e = target.len();
        let a = DMatrix::from_row_slice(e, d, s.sample_projection());
        let t = DVector::from_column_slice(target);
        let aat = &a * a.transpose();
        let y = aat.lu().solve(&t).unwrap();
        Sample((a.transpose() * y).as_slice().to_vec())
    }

    #[test]
    fn cosine_extremes() {
        let w = world();
        let cond = c(&[1, 6, 2]);
        let s = w.scorer(ScorerId::First);
        let ce = s.embed_condition(&cond).unwrap();
        let x = pinv_solution(s, &ce, 32);
        assert_relative_eq!(s.score(&cond, &x).unwrap(), 1.0, epsilon = 1e-9);
        let neg: Vec<f64> = ce.iter().map(|v| -v).collect();
        let xn = pinv_solution(s, &neg, 32);
        assert_relative_eq!(s.score(&cond, &xn).unwrap(), -1.0, epsilon = 1e-9);
    }

    #[test]
    fn zero_sample_is_a_scoring_error() {
        let w = world();
        let r = w.score(ScorerId::First, &c(&[1]), &Sample::zeros(32));
        assert!(matches!(r, Err(Error::Scoring("sample"))));
    }

    #[test]
    fn ground_truth_score_matches_direct_projection() {
        let w = world();
        let cond = c(&[4, 0, 7]);
        let x = w.synthesize_ground_truth(&cond, 0.0, 0).unwrap();
        for id in ScorerId::BOTH {
            let s = w.scorer(id);
            // Rebuild the signal and both embeddings with dense matrices.
            let mut sig = DVector::<f64>::zeros(32);
            for (slot, &ev) in cond.events.iter().enumerate() {
                for j in 0..8 {
                    sig[slot * 8 + j] = w.template(ev)[j];
                }
            }
            let a = DMatrix::from_row_slice(16, 32, s.sample_projection());
            let se = &a * &sig;
            let mut ce = DVector::<f64>::zeros(16);
            for (slot, &ev) in cond.events.iter().enumerate() {
                let p = DMatrix::from_row_slice(16, 8, s.position_matrix(slot));
                ce += p * DVector::from_column_slice(s.event_embedding(ev));
            }
            let expected = se.dot(&ce) / (se.norm() * ce.norm());
            assert_relative_eq!(s.score(&cond, &x).unwrap(), expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn perturb_events_contract() {
        let w = world();
        for seed in 0..50 {
            let p = w.perturb_events(&c(&[2]), seed).unwrap();
            assert_eq!(p.len(), 1);
            assert_ne!(p.events[0], 2);
            let q = w.perturb_events(&c(&[1, 4, 6]), seed).unwrap();
            let diffs = q.events.iter().zip([1, 4, 6]).filter(|(a, b)| **a != *b).count();
            assert_eq!(diffs, 1);
        }
    }

    #[test]
    fn perturb_events_is_uniform() {
        let w = world();
        let mut counts = [0usize; 8];
        let trials = 10_000;
        for seed in 0..trials {
            counts[w.perturb_events(&c(&[0]), seed).unwrap().events[0]] += 1;
        }
        assert_eq!(counts[0], 0);
        for &n in &counts[1..] {
            let f = n as f64 / trials as f64;
            assert!((f - 1.0 / 7.0).abs() <= 0.02, "frequency {f}");
        }
    }

    #[test]
    fn perturb_temporal_contract() {
        let w = world();
        assert_eq!(w.perturb_temporal(&c(&[1, 2]), 3).unwrap().events, vec![2, 1]);
        let base = vec![1, 2, 3];
        let mut seen = std::collections::HashSet::new();
        for seed in 0..1000 {
            let p = w.perturb_temporal(&c(&base), seed).unwrap().events;
            assert_ne!(p, base);
            let mut sorted = p.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, base);
            seen.insert(p);
        }
        assert_eq!(seen.len(), 5);
        assert!(matches!(w.perturb_temporal(&c(&[4]), 0), Err(Error::Precondition(_))));
        assert!(matches!(w.perturb_temporal(&c(&[4, 4]), 0), Err(Error::Precondition(_))));
    }

    #[test]
    fn multiset_preserved_over_random_conditions() {
        let w = world();
        let mut r = rng::rng_from(11);
        for seed in 0..1000 {
            let cond = w.random_ordered_condition(&mut r, "x");
            let p = w.perturb_temporal(&cond, seed).unwrap();
            let (mut a, mut b) = (cond.events.clone(), p.events.clone());
            a.sort_unstable();
            b.sort_unstable();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn ground_truth_prefers_true_order() {
        let w = world();
        let mut r = rng::rng_from(5);
        let mut wins = 0;
        for i in 0..1000u64 {
            let cond = w.random_ordered_condition(&mut r, "x");
            let x = w.synthesize_ground_truth(&cond, 0.05, i).unwrap();
            let p = w.perturb_temporal(&cond, i).unwrap();
            let own = w.score(ScorerId::First, &cond, &x).unwrap();
            let other = w.score(ScorerId::First, &p, &x).unwrap();
            if own > other {
                wins += 1;
            }
        }
        assert!(wins >= 900, "order-sensitive wins {wins}/1000");
    }

    #[test]
    fn decoder_inverts_synthesizer_exhaustively() {
        let w = world();
        for len in 2..=4u32 {
            for code in 0..8usize.pow(len) {
                let events: Vec<usize> = (0..len).map(|i| code / 8usize.pow(i) % 8).collect();
                let cond = c(&events);
                let x = w.clean_signal(&cond).unwrap();
                assert_eq!(w.decode_order(&cond, &x).unwrap(), events);
            }
        }
    }

    #[test]
    fn permutations_enumeration() {
        assert_eq!(distinct_permutations(&[1, 2, 3]).len(), 6);
        assert_eq!(distinct_permutations(&[1, 1, 2]).len(), 3);
        assert_eq!(distinct_permutations(&[5, 5]), vec![vec![5, 5]]);
        assert_eq!(distinct_permutations(&[3, 1])[0], vec![3, 1]);
    }

    proptest! {
        #[test]
        fn score_is_scale_invariant(events in proptest::collection::vec(0usize..8, 1..=4),
                                    seed in 0u64..1000, k in 1e-3f64..1e3) {
            let w = world();
            let cond = c(&events);
            let x = w.synthesize_ground_truth(&cond, 0.3, seed).unwrap();
            let scaled = Sample(x.0.iter().map(|v| v * k).collect());
            for id in ScorerId::BOTH {
                let a = w.score(id, &cond, &x).unwrap();
                let b = w.score(id, &cond, &scaled).unwrap();
                prop_assert!((a - b).abs() <= 1e-9);
                prop_assert!((-1.0..=1.0).contains(&a));
            }
        }
    }
}
