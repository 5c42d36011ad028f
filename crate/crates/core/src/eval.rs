//! Evaluation bookkeeping: grouped drift counts, precision/recall/F1,
//! label-drift tables and N-way K-shot episodes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapt::{nearest_prototype, Prototype};
use crate::drift::Verdict;
use crate::error::{FarmError, Result};
use crate::matrix::{mean_of, Matrix};

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Samples of one family split by drift decision and classification correctness.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyDriftCounts {
    pub correct_not_drifted: usize,
    pub wrong_not_drifted: usize,
    pub correct_drifted: usize,
    pub wrong_drifted: usize,
}

impl FamilyDriftCounts {
    pub fn new(correct_not_drifted: usize, wrong_not_drifted: usize, correct_drifted: usize, wrong_drifted: usize) -> Self {
        Self {
            correct_not_drifted,
            wrong_not_drifted,
            correct_drifted,
            wrong_drifted,
        }
    }

    pub fn total(&self) -> usize {
        self.correct_not_drifted + self.wrong_not_drifted + self.correct_drifted + self.wrong_drifted
    }

    fn add(&mut self, o: &FamilyDriftCounts) {
        self.correct_not_drifted += o.correct_not_drifted;
        self.wrong_not_drifted += o.wrong_not_drifted;
        self.correct_drifted += o.correct_drifted;
        self.wrong_drifted += o.wrong_drifted;
    }

    /// Drift rate over all samples, error rate over non-drifted samples (0 when
    /// none), accuracy over all samples.
    pub fn rates(&self) -> Result<DriftRates> {
        let total = self.total();
        if total == 0 {
            return Err(FarmError::Eval("grouped drift counts sum to zero".into()));
        }
        let kept = self.correct_not_drifted + self.wrong_not_drifted;
        Ok(DriftRates {
            samples: total,
            drift_rate: ratio(self.correct_drifted + self.wrong_drifted, total),
            error_rate: ratio(self.wrong_not_drifted, kept),
            accuracy: ratio(self.correct_not_drifted + self.correct_drifted, total),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftRates {
    pub samples: usize,
    pub drift_rate: f64,
    pub error_rate: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupedDriftCounts {
    pub families: BTreeMap<String, FamilyDriftCounts>,
}

impl GroupedDriftCounts {
    /// Tallies verdicts against true families. A drifted sample counts as
    /// correct when its nearest cluster belongs to the true family.
    pub fn from_verdicts(truth: &[String], verdicts: &[Verdict]) -> Result<Self> {
        if truth.len() != verdicts.len() {
            return Err(FarmError::DimensionMismatch {
                context: "verdicts vs labels",
                expected: truth.len(),
                actual: verdicts.len(),
            });
        }
        let mut families: BTreeMap<String, FamilyDriftCounts> = BTreeMap::new();
        for (t, v) in truth.iter().zip(verdicts) {
            let c = families.entry(t.clone()).or_default();
            let correct = v.nearest_family == *t;
            match (v.is_drifted(), correct) {
                (false, true) => c.correct_not_drifted += 1,
                (false, false) => c.wrong_not_drifted += 1,
                (true, true) => c.correct_drifted += 1,
                (true, false) => c.wrong_drifted += 1,
            }
        }
        Ok(Self { families })
    }

    pub fn total(&self) -> FamilyDriftCounts {
        let mut t = FamilyDriftCounts::default();
        self.families.values().for_each(|c| t.add(c));
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedDriftReport {
    pub counts: GroupedDriftCounts,
    pub per_family: BTreeMap<String, DriftRates>,
    pub total: DriftRates,
}

pub fn grouped_drift_metrics(counts: &GroupedDriftCounts) -> Result<GroupedDriftReport> {
    let per_family = counts
        .families
        .iter()
        .map(|(f, c)| {
            c.rates()
                .map(|r| (f.clone(), r))
                .map_err(|_| FarmError::Eval(format!("family '{f}' has no samples")))
        })
        .collect::<Result<_>>()?;
    Ok(GroupedDriftReport {
        counts: counts.clone(),
        per_family,
        total: counts.total().rates()?,
    })
}

impl GroupedDriftReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<16} {:>8} {:>8} {:>8} {:>8} {:>8} {:>7} {:>7} {:>7}",
            "family", "samples", "ok", "wrong", "ok/drf", "wr/drf", "drift", "error", "acc"
        );
        let mut row = |name: &str, c: &FamilyDriftCounts, r: &DriftRates| {
            let _ = writeln!(
                s,
                "{:<16} {:>8} {:>8} {:>8} {:>8} {:>8} {:>7.2} {:>7.2} {:>7.2}",
                name,
                c.total(),
                c.correct_not_drifted,
                c.wrong_not_drifted,
                c.correct_drifted,
                c.wrong_drifted,
                r.drift_rate,
                r.error_rate,
                r.accuracy
            );
        };
        for (f, r) in &self.per_family {
            row(f, &self.counts.families[f], r);
        }
        row("total", &self.counts.total(), &self.total);
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prf1Report {
    pub per_family: BTreeMap<String, Prf1>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

/// One-vs-rest precision, recall and F1 per family plus unweighted macro
/// averages. `None` predictions (drifted) are a miss for the true family and a
/// false positive for nobody.
pub fn prf1(predictions: &[(String, Option<String>)]) -> Result<Prf1Report> {
    if predictions.is_empty() {
        return Err(FarmError::Eval("no predictions to score".into()));
    }
    let mut families: BTreeSet<&str> = BTreeSet::new();
    for (t, p) in predictions {
        families.insert(t);
        if let Some(p) = p {
            families.insert(p);
        }
    }
    let mut tp: BTreeMap<&str, usize> = BTreeMap::new();
    let mut fp: BTreeMap<&str, usize> = BTreeMap::new();
    let mut support: BTreeMap<&str, usize> = BTreeMap::new();
    for (t, p) in predictions {
        *support.entry(t).or_default() += 1;
        match p {
            Some(p) if p == t => *tp.entry(t).or_default() += 1,
            Some(p) => *fp.entry(p).or_default() += 1,
            None => {}
        }
    }
    let per_family: BTreeMap<String, Prf1> = families
        .iter()
        .map(|&f| {
            let tp = tp.get(f).copied().unwrap_or(0);
            let fp = fp.get(f).copied().unwrap_or(0);
            let sup = support.get(f).copied().unwrap_or(0);
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, sup);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            (
                f.to_string(),
                Prf1 {
                    precision,
                    recall,
                    f1,
                    support: sup,
                },
            )
        })
        .collect();
    let n = per_family.len() as f64;
    let avg = |g: fn(&Prf1) -> f64| per_family.values().map(g).sum::<f64>() / n;
    Ok(Prf1Report {
        macro_precision: avg(|p| p.precision),
        macro_recall: avg(|p| p.recall),
        macro_f1: avg(|p| p.f1),
        per_family,
    })
}

impl Prf1Report {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<16} {:>9} {:>9} {:>9} {:>8}", "family", "precision", "recall", "f1", "support");
        for (f, p) in &self.per_family {
            let _ = writeln!(
                s,
                "{:<16} {:>9.2} {:>9.2} {:>9.2} {:>8}",
                f, p.precision, p.recall, p.f1, p.support
            );
        }
        let _ = writeln!(
            s,
            "{:<16} {:>9.2} {:>9.2} {:>9.2}",
            "macro", self.macro_precision, self.macro_recall, self.macro_f1
        );
        s
    }
}

/// Pairs of (true family, predicted family or `None` when drifted).
pub fn predictions_from_verdicts(truth: &[String], verdicts: &[Verdict]) -> Vec<(String, Option<String>)> {
    truth.iter().cloned().zip(verdicts.iter().map(|v| v.family.clone())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelDriftRow {
    pub samples: usize,
    pub inliers: usize,
    pub drifted: usize,
    pub drift_rate: f64,
}

impl LabelDriftRow {
    pub fn from_counts(inliers: usize, drifted: usize) -> Self {
        let samples = inliers + drifted;
        Self {
            samples,
            inliers,
            drifted,
            drift_rate: ratio(drifted, samples),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDriftTable {
    pub rows: BTreeMap<String, LabelDriftRow>,
    pub total: LabelDriftRow,
}

/// Per-family (inliers, drifted) counts to a table with an aggregated total row.
pub fn label_drift_table_from_counts(counts: &BTreeMap<String, (usize, usize)>) -> Result<LabelDriftTable> {
    let mut rows = BTreeMap::new();
    let (mut ti, mut td) = (0, 0);
    for (f, &(i, d)) in counts {
        if i + d == 0 {
            return Err(FarmError::Eval(format!("family '{f}' has no verdicts")));
        }
        ti += i;
        td += d;
        rows.insert(f.clone(), LabelDriftRow::from_counts(i, d));
    }
    Ok(LabelDriftTable {
        rows,
        total: LabelDriftRow::from_counts(ti, td),
    })
}

pub fn label_drift_table(verdicts: &BTreeMap<String, Vec<Verdict>>) -> Result<LabelDriftTable> {
    let counts = verdicts
        .iter()
        .map(|(f, vs)| {
            let d = vs.iter().filter(|v| v.is_drifted()).count();
            (f.clone(), (vs.len() - d, d))
        })
        .collect();
    label_drift_table_from_counts(&counts)
}

impl LabelDriftTable {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<16} {:>8} {:>8} {:>8} {:>7}", "family", "samples", "inliers", "drifted", "rate");
        let mut row = |n: &str, r: &LabelDriftRow| {
            let _ = writeln!(
                s,
                "{:<16} {:>8} {:>8} {:>8} {:>7.2}",
                n, r.samples, r.inliers, r.drifted, r.drift_rate
            );
        };
        for (f, r) in &self.rows {
            row(f, r);
        }
        row("total", &self.total);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeSpec {
    pub n_way: usize,
    pub k_shot: usize,
    pub query_per_class: usize,
    pub episodes: usize,
    pub seed: u64,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        Self {
            n_way: 5,
            k_shot: 5,
            query_per_class: 15,
            episodes: 600,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub n_way: usize,
    pub k_shot: usize,
    pub mean_accuracy: f64,
    /// `1.96 · s / sqrt(episodes)` with the `n - 1` sample standard deviation.
    pub ci95_halfwidth: f64,
    pub per_episode_accuracies: Vec<f64>,
}

fn run_episode(families: &[(&String, &Matrix)], spec: &EpisodeSpec, episode: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(episode);
    let chosen = index::sample(&mut rng, families.len(), spec.n_way).into_vec();
    let mut prototypes = Vec::with_capacity(spec.n_way);
    let mut queries: Vec<(usize, &[f64])> = Vec::new();
    for (slot, &fi) in chosen.iter().enumerate() {
        let (name, m) = families[fi];
        let rows = index::sample(&mut rng, m.rows(), spec.k_shot + spec.query_per_class).into_vec();
        let (support, query) = rows.split_at(spec.k_shot);
        prototypes.push(Prototype {
            family: name.clone(),
            vector: mean_of(support.iter().map(|&r| m.row(r)), m.cols()),
            support_ids: Vec::new(),
            created_at: 0,
        });
        queries.extend(query.iter().map(|&r| (slot, m.row(r))));
    }
    let correct = queries
        .iter()
        .filter(|(slot, z)| nearest_prototype(&prototypes, z) == Some(*slot))
        .count();
    correct as f64 / queries.len() as f64
}

/// N-way K-shot nearest-prototype accuracy over `spec.episodes` episodes.
/// Families are keyed by name, so the result does not depend on map insertion
/// order; each episode draws from its own rng stream.
pub fn run_episodes(embeddings: &BTreeMap<String, Matrix>, spec: &EpisodeSpec) -> Result<EpisodeResult> {
    if spec.n_way < 2 {
        return Err(FarmError::Eval(format!("n_way must be >= 2, got {}", spec.n_way)));
    }
    if spec.k_shot == 0 || spec.query_per_class == 0 || spec.episodes == 0 {
        return Err(FarmError::Eval("k_shot, query_per_class and episodes must be positive".into()));
    }
    if spec.n_way > embeddings.len() {
        return Err(FarmError::Eval(format!(
            "n_way = {} exceeds the {} available families",
            spec.n_way,
            embeddings.len()
        )));
    }
    let need = spec.k_shot + spec.query_per_class;
    if let Some((f, m)) = embeddings.iter().find(|(_, m)| m.rows() < need) {
        return Err(FarmError::Eval(format!(
            "family '{f}' has {} samples; {need} needed per episode",
            m.rows()
        )));
    }
    let families: Vec<(&String, &Matrix)> = embeddings.iter().collect();
    let accs: Vec<f64> = (0..spec.episodes as u64)
        .into_par_iter()
        .map(|e| run_episode(&families, spec, e))
        .collect();
    let n = accs.len() as f64;
    let mean = accs.iter().sum::<f64>() / n;
    let ci = if accs.len() > 1 {
        let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0);
        1.96 * var.sqrt() / n.sqrt()
    } else {
        0.0
    };
    Ok(EpisodeResult {
        n_way: spec.n_way,
        k_shot: spec.k_shot,
        mean_accuracy: mean,
        ci95_halfwidth: ci,
        per_episode_accuracies: accs,
    })
}
