//! Preference-pair synthesis, ranking, and ensemble score filtering.
//!
//! Four candidate generators feed one pool:
//! * `S1.1`: four generations at different step counts; best vs the rest.
//! * `S1.2`: four generations at the same step count; best vs the rest.
//! * `S2`: a generation for the condition vs one for a condition with one
//!   event swapped out.
//! * `S3`: a generation for the condition vs one for a reordered condition.
//!
//! Winners are picked with the first scorer alone. The pool is then filtered
//! with thresholds applied to both scorers.

use std::fmt;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::diffusion::{DiffusionProcess, GuidanceConfig};
use crate::error::{Error, Result};
use crate::par;
use crate::rng;
use crate::toyworld::{ConditionSpec, Sample, ScorerId, ToyWorld};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyTag {
    #[serde(rename = "S1.1")]
    S11,
    #[serde(rename = "S1.2")]
    S12,
    #[serde(rename = "S2")]
    S2,
    #[serde(rename = "S3")]
    S3,
}

impl StrategyTag {
    pub const ALL: [StrategyTag; 4] = [StrategyTag::S11, StrategyTag::S12, StrategyTag::S2, StrategyTag::S3];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyTag::S11 => "S1.1",
            StrategyTag::S12 => "S1.2",
            StrategyTag::S2 => "S2",
            StrategyTag::S3 => "S3",
        }
    }
}

impl fmt::Display for StrategyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for StrategyTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "S1.1" => Ok(StrategyTag::S11),
            "S1.2" => Ok(StrategyTag::S12),
            "S2" => Ok(StrategyTag::S2),
            "S3" => Ok(StrategyTag::S3),
            other => Err(Error::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

/// First/second scorer on winner/loser.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub w1: f64,
    pub l1: f64,
    pub w2: f64,
    pub l2: f64,
}

impl Scores {
    pub fn delta1(&self) -> f64 {
        self.w1 - self.l1
    }

    pub fn delta2(&self) -> f64 {
        self.w2 - self.l2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub id: String,
    pub strategy: StrategyTag,
    pub condition: ConditionSpec,
    pub winner: Sample,
    pub loser: Sample,
    pub scores: Scores,
    /// First-scorer scores of all candidates the winner was chosen from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub siblings: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterThresholds {
    pub alpha1: f64,
    pub beta1: f64,
    pub delta1_lo: f64,
    pub delta1_hi: f64,
    pub alpha2: f64,
    pub beta2: f64,
    pub delta2_lo: f64,
    pub delta2_hi: f64,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self {
            alpha1: 0.45,
            beta1: 0.40,
            delta1_lo: 0.05,
            delta1_hi: 0.35,
            alpha2: 0.60,
            beta2: 0.0,
            delta2_lo: 0.08,
            delta2_hi: 0.70,
        }
    }
}

impl FilterThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta1_lo < self.delta1_hi && self.delta2_lo < self.delta2_hi) {
            return Err(Error::Config("delta lower bounds must be below upper bounds".into()));
        }
        Ok(())
    }

    /// All four conditions under both scorers.
    pub fn accepts(&self, s: &Scores) -> bool {
        let one = |w: f64, l: f64, alpha: f64, beta: f64, lo: f64, hi: f64| {
            let d = w - l;
            w >= alpha && l >= beta && w > l && lo <= d && d <= hi
        };
        one(s.w1, s.l1, self.alpha1, self.beta1, self.delta1_lo, self.delta1_hi)
            && one(s.w2, s.l2, self.alpha2, self.beta2, self.delta2_lo, self.delta2_hi)
    }
}

pub fn apply_filter(pairs: Vec<PreferencePair>, thresholds: &FilterThresholds) -> Vec<PreferencePair> {
    pairs.into_iter().filter(|p| thresholds.accepts(&p.scores)).collect()
}

/// Quantiles of the unfiltered pool used to place the thresholds when the
/// fixed values do not suit the score distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileSpec {
    pub alpha: f64,
    pub beta: f64,
    pub delta_lo: f64,
    pub delta_hi: f64,
}

impl Default for QuantileSpec {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            beta: 0.05,
            delta_lo: 0.25,
            delta_hi: 0.98,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ThresholdMode {
    Fixed(FilterThresholds),
    Quantile(QuantileSpec),
}

/// Linear-interpolated empirical quantile; `values` need not be sorted.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Thresholds at the given quantiles of a candidate pool. Only pairs with a
/// positive delta under a scorer inform that scorer's delta bounds.
pub fn calibrate_thresholds(pool: &[PreferencePair], q: &QuantileSpec) -> FilterThresholds {
    let col = |f: &dyn Fn(&Scores) -> f64| pool.iter().map(|p| f(&p.scores)).collect::<Vec<f64>>();
    let pos = |v: Vec<f64>| v.into_iter().filter(|d| *d > 0.0).collect::<Vec<f64>>();
    let d1 = pos(col(&|s| s.delta1()));
    let d2 = pos(col(&|s| s.delta2()));
    let bounds = |d: &[f64]| {
        let lo = quantile(d, q.delta_lo);
        let hi = quantile(d, q.delta_hi);
        if hi > lo {
            (lo, hi)
        } else {
            (lo, lo + f64::EPSILON.max(lo.abs() * 1e-12))
        }
    };
    let (d1lo, d1hi) = bounds(&d1);
    let (d2lo, d2hi) = bounds(&d2);
    FilterThresholds {
        alpha1: quantile(&col(&|s| s.w1), q.alpha),
        beta1: quantile(&col(&|s| s.l1), q.beta),
        delta1_lo: d1lo,
        delta1_hi: d1hi,
        alpha2: quantile(&col(&|s| s.w2), q.alpha),
        beta2: quantile(&col(&|s| s.l2), q.beta),
        delta2_lo: d2lo,
        delta2_hi: d2hi,
    }
}

/// Step counts and guidance used to generate candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSettings {
    pub guidance_scale: f64,
    /// Step counts of the four `S1.1` generations.
    pub s11_steps: [usize; 4],
    /// Step count for `S1.2`, `S2` and `S3` generations.
    pub steps: usize,
    /// Distinct perturbed conditions per condition for `S2` and `S3`
    /// (fewer when the condition admits fewer).
    pub perturbations: usize,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self {
            guidance_scale: 3.0,
            s11_steps: [5, 10, 25, 50],
            steps: 50,
            perturbations: 5,
        }
    }
}

/// Index of the best candidate (lowest index among ties) and the others.
pub fn rank_candidates(scores: &[f64]) -> (usize, Vec<usize>) {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    (best, (0..scores.len()).filter(|&i| i != best).collect())
}

/// Whether a perturbed-condition pair is kept: the original generation must
/// score strictly higher against the original condition.
pub fn keep_perturbed_pair(original_score: f64, perturbed_score: f64) -> bool {
    original_score > perturbed_score
}

/// Shared context for candidate generation.
#[derive(Clone, Copy)]
pub struct Generator<'a> {
    pub world: &'a ToyWorld,
    pub process: &'a DiffusionProcess,
    pub model: &'a Denoiser,
    pub settings: &'a GenerationSettings,
}

impl Generator<'_> {
    fn generate(&self, cond: &ConditionSpec, steps: usize, seed: u64) -> Result<Sample> {
        let g = GuidanceConfig::new(self.settings.guidance_scale, steps.min(self.process.n_steps()));
        self.process.sample(self.model, cond, &g, &mut rng::rng_from(seed))
    }

    fn scores(&self, cond: &ConditionSpec, x: &Sample) -> Result<(f64, f64)> {
        Ok((
            self.world.score(ScorerId::First, cond, x)?,
            self.world.score(ScorerId::Second, cond, x)?,
        ))
    }

    /// Four generations, best under the first scorer against each of the rest.
    pub fn strategy1(&self, cond: &ConditionSpec, variant: StrategyTag, seed: u64) -> Result<Vec<PreferencePair>> {
        let steps: [usize; 4] = match variant {
            StrategyTag::S11 => self.settings.s11_steps,
            StrategyTag::S12 => [self.settings.steps; 4],
            other => {
                return Err(Error::Argument(format!("{other} is not a multiple-inference strategy")))
            }
        };
        let mut samples = Vec::with_capacity(4);
        let mut scores = Vec::with_capacity(4);
        for (j, &s) in steps.iter().enumerate() {
            let x = self.generate(cond, s, rng::derive_index(seed, j as u64))?;
            scores.push(self.scores(cond, &x)?);
            samples.push(x);
        }
        Ok(pairs_from_candidates(cond, variant, &samples, &scores))
    }

    /// Up to `settings.perturbations` distinct perturbed conditions.
    fn perturbations(&self, cond: &ConditionSpec, kind: StrategyTag, seed: u64) -> Result<Vec<ConditionSpec>> {
        let want = self.settings.perturbations;
        let mut out: Vec<ConditionSpec> = Vec::with_capacity(want);
        for attempt in 0..want * 8 {
            if out.len() == want {
                break;
            }
            let s = rng::derive_index(seed, attempt as u64);
            let p = match kind {
                StrategyTag::S2 => self.world.perturb_events(cond, s)?,
                StrategyTag::S3 => self.world.perturb_temporal(cond, s)?,
                other => return Err(Error::Argument(format!("{other} is not a perturbation strategy"))),
            };
            if !out.iter().any(|q| q.events == p.events) {
                out.push(p);
            }
        }
        Ok(out)
    }

    /// One generation for `cond` against one generation per perturbed
    /// condition, all scored against `cond`. Pairs where the perturbed
    /// generation scores at least as high are dropped.
    pub fn strategy23(&self, cond: &ConditionSpec, kind: StrategyTag, seed: u64) -> Result<Vec<PreferencePair>> {
        let perturbed = self.perturbations(cond, kind, rng::derive(seed, "perturb"))?;
        let steps = self.settings.steps;
        let x = self.generate(cond, steps, rng::derive(seed, "original"))?;
        let (w1, w2) = self.scores(cond, &x)?;
        let mut out = Vec::new();
        for (j, p) in perturbed.iter().enumerate() {
            let xp = self.generate(p, steps, rng::derive_index(rng::derive(seed, "perturbed"), j as u64))?;
            let (l1, l2) = self.scores(cond, &xp)?;
            if !keep_perturbed_pair(w1, l1) {
                continue;
            }
            out.push(PreferencePair {
                id: format!("{}/{}/{}", cond.id, kind, j),
                strategy: kind,
                condition: cond.clone(),
                winner: x.clone(),
                loser: xp,
                scores: Scores { w1, l1, w2, l2 },
                siblings: None,
            });
        }
        Ok(out)
    }

    /// Every enabled strategy on one condition. Conditions that cannot be
    /// reordered skip `S3`.
    pub fn candidates_for(&self, cond: &ConditionSpec, strategies: &[StrategyTag], seed: u64) -> Result<Vec<PreferencePair>> {
        let mut out = Vec::new();
        for &tag in strategies {
            let s = rng::derive(seed, tag.as_str());
            match tag {
                StrategyTag::S11 | StrategyTag::S12 => out.extend(self.strategy1(cond, tag, s)?),
                StrategyTag::S2 => out.extend(self.strategy23(cond, tag, s)?),
                StrategyTag::S3 => {
                    if cond.has_order() {
                        out.extend(self.strategy23(cond, tag, s)?);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// The three best-vs-rest pairs from a set of scored candidates.
pub fn pairs_from_candidates(
    cond: &ConditionSpec,
    variant: StrategyTag,
    samples: &[Sample],
    scores: &[(f64, f64)],
) -> Vec<PreferencePair> {
    let first: Vec<f64> = scores.iter().map(|s| s.0).collect();
    let (best, rest) = rank_candidates(&first);
    rest.into_iter()
        .map(|j| PreferencePair {
            id: format!("{}/{}/{}v{}", cond.id, variant, best, j),
            strategy: variant,
            condition: cond.clone(),
            winner: samples[best].clone(),
            loser: samples[j].clone(),
            scores: Scores {
                w1: scores[best].0,
                l1: scores[j].0,
                w2: scores[best].1,
                l2: scores[j].1,
            },
            siblings: Some(first.clone()),
        })
        .collect()
}

/// One row of the per-strategy statistics (first-scorer scores).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub strategy: String,
    pub n: usize,
    pub avg_winner: f64,
    pub avg_loser: f64,
    pub avg_delta: f64,
    /// Pool size before filtering.
    pub candidates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub rows: Vec<ReportRow>,
    pub overall: ReportRow,
    pub thresholds: FilterThresholds,
}

impl DatasetReport {
    pub fn build(pool: &[PreferencePair], kept: &[PreferencePair], thresholds: FilterThresholds) -> Self {
        let row = |name: &str, pool_n: usize, sel: &[&PreferencePair]| {
            let n = sel.len();
            let mean = |f: &dyn Fn(&Scores) -> f64| {
                if n == 0 {
                    0.0
                } else {
                    sel.iter().map(|p| f(&p.scores)).sum::<f64>() / n as f64
                }
            };
            ReportRow {
                strategy: name.to_string(),
                n,
                avg_winner: mean(&|s| s.w1),
                avg_loser: mean(&|s| s.l1),
                avg_delta: mean(&|s| s.delta1()),
                candidates: pool_n,
            }
        };
        let rows = StrategyTag::ALL
            .iter()
            .map(|&t| {
                let sel: Vec<&PreferencePair> = kept.iter().filter(|p| p.strategy == t).collect();
                row(t.as_str(), pool.iter().filter(|p| p.strategy == t).count(), &sel)
            })
            .collect();
        let all: Vec<&PreferencePair> = kept.iter().collect();
        Self {
            rows,
            overall: row("Overall", pool.len(), &all),
            thresholds,
        }
    }

    /// Fixed-width table in the column order of the JSON rows.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<10} {:>8} {:>10} {:>10} {:>10} {:>10}\n",
            "strategy", "n", "avg_winner", "avg_loser", "avg_delta", "candidates"
        );
        for r in self.rows.iter().chain(std::iter::once(&self.overall)) {
            s.push_str(&format!(
                "{:<10} {:>8} {:>10.3} {:>10.3} {:>10.3} {:>10}\n",
                r.strategy, r.n, r.avg_winner, r.avg_loser, r.avg_delta, r.candidates
            ));
        }
        s
    }
}

/// Filtered pairs plus statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub pairs: Vec<PreferencePair>,
    pub report: DatasetReport,
}

/// Run the enabled strategies over `conditions` (in parallel, one seed
/// stream per condition), then resolve thresholds and filter.
pub fn build_dataset(
    gen: &Generator<'_>,
    conditions: &[ConditionSpec],
    strategies: &[StrategyTag],
    mode: &ThresholdMode,
    seed: u64,
) -> Result<Dataset> {
    for c in conditions {
        gen.world.validate(c)?;
    }
    let per_condition = par::try_map_range(conditions.len(), |i| {
        gen.candidates_for(&conditions[i], strategies, rng::derive_index(seed, i as u64))
    })?;
    let pool: Vec<PreferencePair> = per_condition.into_iter().flatten().collect();
    let thresholds = match mode {
        ThresholdMode::Fixed(t) => *t,
        ThresholdMode::Quantile(q) => calibrate_thresholds(&pool, q),
    };
    thresholds.validate()?;
    let pairs = apply_filter(pool.clone(), &thresholds);
    let report = DatasetReport::build(&pool, &pairs, thresholds);
    Ok(Dataset { pairs, report })
}

pub fn write_jsonl(path: &Path, pairs: &[PreferencePair]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in pairs {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<PreferencePair>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Deterministic held-out split: a pair goes to the held-out side when a hash
/// of its condition id under `seed` falls below `fraction`, so all pairs of a
/// condition land on the same side. Independent of file order.
pub fn split_heldout(
    pairs: &[PreferencePair],
    fraction: f64,
    seed: u64,
) -> (Vec<PreferencePair>, Vec<PreferencePair>) {
    let mut train = Vec::new();
    let mut held = Vec::new();
    for p in pairs {
        let h = rng::derive(seed, &p.condition.id);
        let u = (h >> 11) as f64 / (1u64 << 53) as f64;
        if u < fraction {
            held.push(p.clone());
        } else {
            train.push(p.clone());
        }
    }
    (train, held)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scores(w1: f64, l1: f64, w2: f64, l2: f64) -> Scores {
        Scores { w1, l1, w2, l2 }
    }

    fn pair_with(s: Scores) -> PreferencePair {
        PreferencePair {
            id: "x".into(),
            strategy: StrategyTag::S2,
            condition: ConditionSpec::new("c", vec![1]),
            winner: Sample(vec![1.0]),
            loser: Sample(vec![0.0]),
            scores: s,
            siblings: None,
        }
    }

    #[test]
    fn table_average_record_is_accepted() {
        let t = FilterThresholds::default();
        assert!(t.accepts(&scores(0.645, 0.452, 0.645, 0.452)));
        assert!(!t.accepts(&scores(0.645, 0.452, 0.59, 0.40)));
        assert!(!t.accepts(&scores(0.5, 0.5, 0.7, 0.3)));
        assert!(!t.accepts(&scores(0.7, 0.3, 0.65, 0.65)));
        assert!(!t.accepts(&scores(0.645, 0.39, 0.645, 0.452)));
    }

    #[test]
    fn ranking_and_ties() {
        let (best, rest) = rank_candidates(&[0.7, 0.5, 0.6, 0.2]);
        assert_eq!(best, 0);
        assert_eq!(rest, vec![1, 2, 3]);
        let (best, _) = rank_candidates(&[0.1, 0.9, 0.9, 0.2]);
        assert_eq!(best, 1);
        let cond = ConditionSpec::new("c", vec![2]);
        let samples: Vec<Sample> = (0..4).map(|i| Sample(vec![i as f64])).collect();
        let sc = [(0.7, 0.1), (0.5, 0.2), (0.6, 0.3), (0.2, 0.4)];
        let pairs = pairs_from_candidates(&cond, StrategyTag::S12, &samples, &sc);
        assert_eq!(pairs.len(), 3);
        assert!(pairs.iter().all(|p| p.scores.w1 == 0.7 && p.scores.w2 == 0.1));
        assert!(pairs.iter().all(|p| p.winner == samples[0]));
    }

    #[test]
    fn perturbed_pair_rule() {
        assert!(keep_perturbed_pair(0.6, 0.4));
        assert!(!keep_perturbed_pair(0.4, 0.6));
        assert!(!keep_perturbed_pair(0.5, 0.5));
    }

    #[test]
    fn perturbation_sets_are_distinct_and_capped() {
        use crate::denoiser::{Arch, Denoiser, Nonlinearity};
        use crate::diffusion::{DiffusionProcess, ForwardCoeff};
        use crate::schedule::NoiseSchedule;
        use crate::toyworld::{ToyWorld, WorldConfig};
        let world = ToyWorld::new(WorldConfig::default()).unwrap();
        let process = DiffusionProcess::new(NoiseSchedule::linear(10, 0.01, 0.3).unwrap(), ForwardCoeff::Sqrt);
        let arch = Arch {
            sample_dim: 32,
            hidden: vec![8],
            time_embed_dim: 4,
            vocab_size: 8,
            max_events: 4,
            cond_embed_dim: 0,
            nonlinearity: Nonlinearity::Silu,
        };
        let model = Denoiser::init(arch, 1, 1.0).unwrap();
        let settings = GenerationSettings {
            steps: 10,
            ..GenerationSettings::default()
        };
        let gen = Generator { world: &world, process: &process, model: &model, settings: &settings };
        let four = ConditionSpec::new("c4", vec![0, 1, 2, 3]);
        for kind in [StrategyTag::S2, StrategyTag::S3] {
            let ps = gen.perturbations(&four, kind, 9).unwrap();
            assert_eq!(ps.len(), 5);
            for i in 0..ps.len() {
                assert_ne!(ps[i].events, four.events);
                for j in i + 1..ps.len() {
                    assert_ne!(ps[i].events, ps[j].events);
                }
            }
        }
        // only one other ordering exists
        let two = ConditionSpec::new("c2", vec![4, 6]);
        assert_eq!(gen.perturbations(&two, StrategyTag::S3, 9).unwrap().len(), 1);
        let pairs = gen.strategy23(&four, StrategyTag::S3, 5).unwrap();
        assert!(pairs.len() <= 5);
        assert!(pairs.iter().all(|p| p.scores.w1 > p.scores.l1 && p.winner == pairs[0].winner));
    }

    #[test]
    fn quantiles() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), 2.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.25), 1.25);
        assert_eq!(quantile(&[], 0.5), 0.0);
    }

    #[test]
    fn jsonl_record_shape() {
        let p = pair_with(scores(0.6, 0.5, 0.7, 0.4));
        let line = serde_json::to_string(&p).unwrap();
        assert_eq!(
            line,
            r#"{"id":"x","strategy":"S2","condition":{"id":"c","events":[1]},"winner":[1.0],"loser":[0.0],"scores":{"w1":0.6,"l1":0.5,"w2":0.7,"l2":0.4}}"#
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        write_jsonl(&path, &[p.clone(), p.clone()]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.ends_with('\n'));
        assert_eq!(read_jsonl(&path).unwrap(), vec![p.clone(), p]);
    }

    #[test]
    fn report_on_empty_input() {
        let r = DatasetReport::build(&[], &[], FilterThresholds::default());
        assert_eq!(r.overall.n, 0);
        assert_eq!(r.rows.len(), 4);
        assert!(r.rows.iter().all(|row| row.n == 0 && row.avg_winner == 0.0));
    }

    #[test]
    fn heldout_split_ignores_order() {
        let mut pairs: Vec<PreferencePair> = (0..200)
            .map(|i| {
                let mut p = pair_with(scores(0.6, 0.5, 0.7, 0.4));
                p.condition.id = format!("c{i}");
                p
            })
            .collect();
        let (_, held_a) = split_heldout(&pairs, 0.2, 3);
        pairs.reverse();
        let (train_b, mut held_b) = split_heldout(&pairs, 0.2, 3);
        held_b.reverse();
        assert_eq!(held_a, held_b);
        assert_eq!(train_b.len() + held_b.len(), 200);
        assert!(held_a.len() > 20 && held_a.len() < 60);
    }

    fn arb_scores() -> impl Strategy<Value = Scores> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0).prop_map(|(a, b, c, d)| scores(a, b, c, d))
    }

    proptest! {
        #[test]
        fn tightening_never_adds_pairs(pool in proptest::collection::vec(arb_scores(), 1..60),
                                       bumps in proptest::collection::vec(0.0f64..0.2, 8)) {
            let base = FilterThresholds::default();
            let tight = FilterThresholds {
                alpha1: base.alpha1 + bumps[0],
                beta1: base.beta1 + bumps[1],
                delta1_lo: base.delta1_lo + bumps[2],
                delta1_hi: base.delta1_hi - bumps[3],
                alpha2: base.alpha2 + bumps[4],
                beta2: base.beta2 + bumps[5],
                delta2_lo: base.delta2_lo + bumps[6],
                delta2_hi: base.delta2_hi - bumps[7],
            };
            for s in &pool {
                if tight.accepts(s) {
                    prop_assert!(base.accepts(s));
                }
            }
        }
    }
}
