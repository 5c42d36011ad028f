//! Density clustering of embeddings and the per-cluster acceptance model.
//!
//! DBSCAN neighborhoods use plain Euclidean distance against `ε`; cluster
//! thresholds and assignment use squared Euclidean distance to the centroid.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FarmError, Result};
use crate::matrix::{mean_of, sq_dist, Matrix};

pub const NOISE: i64 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbscanParams {
    pub epsilon: f64,
    pub min_pts: usize,
}

impl DbscanParams {
    pub fn new(epsilon: f64, min_pts: usize) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(FarmError::InvalidArgument(format!("epsilon {epsilon} must be finite and > 0")));
        }
        if min_pts == 0 {
            return Err(FarmError::InvalidArgument("min_pts must be positive".into()));
        }
        Ok(Self { epsilon, min_pts })
    }
}

/// Per-sample cluster ids: `-1` for noise, `0..k` for clusters in discovery order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<i64>,
}

impl ClusterAssignment {
    pub fn n_clusters(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize)
    }

    /// Row indices of each cluster, indexed by cluster id.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_clusters()];
        for (i, &l) in self.labels.iter().enumerate() {
            if l >= 0 {
                out[l as usize].push(i);
            }
        }
        out
    }

    pub fn noise(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == NOISE).collect()
    }
}

fn neighbors(points: &Matrix, eps: f64) -> Vec<Vec<usize>> {
    let n = points.rows();
    let mut out = vec![Vec::new(); n];
    for i in 0..n {
        out[i].push(i);
        for j in i + 1..n {
            if sq_dist(points.row(i), points.row(j)).sqrt() <= eps {
                out[i].push(j);
                out[j].push(i);
            }
        }
    }
    out.iter_mut().for_each(|v| v.sort_unstable());
    out
}

/// Classical DBSCAN. A point is core when at least `min_pts` points (itself
/// included) lie within `ε`. Clusters are seeded in index order; a border point
/// belongs to the first cluster that reaches it.
pub fn dbscan(points: &Matrix, params: &DbscanParams) -> ClusterAssignment {
    const UNSEEN: i64 = -2;
    let n = points.rows();
    let nb = neighbors(points, params.epsilon);
    let core: Vec<bool> = nb.iter().map(|v| v.len() >= params.min_pts).collect();
    let mut labels = vec![UNSEEN; n];
    let mut next = 0i64;
    let mut stack = Vec::new();
    for i in 0..n {
        if labels[i] != UNSEEN {
            continue;
        }
        if !core[i] {
            labels[i] = NOISE;
            continue;
        }
        let c = next;
        next += 1;
        labels[i] = c;
        stack.extend_from_slice(&nb[i]);
        while let Some(j) = stack.pop() {
            match labels[j] {
                NOISE => labels[j] = c,
                UNSEEN => {
                    labels[j] = c;
                    if core[j] {
                        stack.extend_from_slice(&nb[j]);
                    }
                }
                _ => {}
            }
        }
    }
    ClusterAssignment { labels }
}

/// Sorted distances from every point to its `k`-th nearest neighbor, the point
/// itself counted as the first neighbor (so `k = min_pts` matches DBSCAN's
/// inclusive core rule).
pub fn k_distances(points: &Matrix, k: usize) -> Result<Vec<f64>> {
    let n = points.rows();
    if k == 0 || n < k {
        return Err(FarmError::InvalidArgument(format!(
            "k-distance needs 1 <= k <= n_points, got k = {k}, n = {n}"
        )));
    }
    let mut out: Vec<f64> = (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n).map(|j| sq_dist(points.row(i), points.row(j)).sqrt()).collect();
            d.select_nth_unstable_by(k - 1, f64::total_cmp);
            d[k - 1]
        })
        .collect();
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Index of the knee of an ascending curve: the point farthest from the chord
/// joining its endpoints. Ties resolve to the lowest index.
pub fn knee_index(curve: &[f64]) -> usize {
    let n = curve.len();
    if n < 3 {
        return 0;
    }
    let (y0, y1) = (curve[0], curve[n - 1]);
    let span = y1 - y0;
    if span <= 0.0 {
        return 0;
    }
    let mut best = 0;
    let mut best_d = f64::NEG_INFINITY;
    for (i, &y) in curve.iter().enumerate() {
        let x = i as f64 / (n - 1) as f64;
        let d = (x - (y - y0) / span).abs();
        if d > best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// `ε` at the knee of the k-distance curve, never below `floor`.
pub fn select_epsilon(points: &Matrix, k: usize, floor: f64) -> Result<f64> {
    let curve = k_distances(points, k)?;
    Ok(curve[knee_index(&curve)].max(floor))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterOrigin {
    Trained,
    Prototype,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub family: String,
    pub centroid: Vec<f64>,
    /// Maximum accepted squared distance to the centroid.
    pub threshold: f64,
    pub member_count: usize,
    pub origin: ClusterOrigin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThresholdPolicy {
    /// Largest member distance.
    MaxDistance,
    /// Mean member distance plus `std_multiplier` population standard deviations.
    MeanPlusStd { std_multiplier: f64 },
    /// Linearly interpolated percentile (0-100) of member distances.
    Percentile { percentile: f64 },
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy::MeanPlusStd { std_multiplier: 3.0 }
    }
}

impl ThresholdPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ThresholdPolicy::MaxDistance => Ok(()),
            ThresholdPolicy::MeanPlusStd { std_multiplier: k } if k > 0.0 && k.is_finite() => Ok(()),
            ThresholdPolicy::Percentile { percentile: p } if (0.0..=100.0).contains(&p) => Ok(()),
            other => Err(FarmError::InvalidArgument(format!("invalid threshold policy {other:?}"))),
        }
    }

    /// Threshold over the members' squared centroid distances.
    pub fn threshold(&self, sq_dists: &[f64]) -> f64 {
        if sq_dists.is_empty() {
            return 0.0;
        }
        match *self {
            ThresholdPolicy::MaxDistance => sq_dists.iter().copied().fold(0.0, f64::max),
            ThresholdPolicy::MeanPlusStd { std_multiplier } => {
                let n = sq_dists.len() as f64;
                let mean = sq_dists.iter().sum::<f64>() / n;
                let var = sq_dists.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
                mean + std_multiplier * var.sqrt()
            }
            ThresholdPolicy::Percentile { percentile } => {
                let mut s = sq_dists.to_vec();
                s.sort_by(f64::total_cmp);
                let pos = percentile / 100.0 * (s.len() - 1) as f64;
                let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
                s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
            }
        }
    }
}

/// Centroid and threshold of one group of embeddings.
pub fn summarize(points: &Matrix, members: &[usize], policy: &ThresholdPolicy) -> (Vec<f64>, f64) {
    let centroid = mean_of(members.iter().map(|&i| points.row(i)), points.cols());
    let d: Vec<f64> = members.iter().map(|&i| sq_dist(points.row(i), &centroid)).collect();
    (centroid, policy.threshold(&d))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilyOverride {
    pub epsilon: Option<f64>,
    pub min_pts: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub policy: ThresholdPolicy,
    /// Lower bound on the knee-selected `ε` (flat k-distance curves).
    pub epsilon_floor: f64,
    /// Overrides the `2 × latent_dim` default for every family.
    pub min_pts: Option<usize>,
    pub overrides: BTreeMap<String, FamilyOverride>,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            policy: ThresholdPolicy::default(),
            epsilon_floor: 1e-6,
            min_pts: None,
            overrides: BTreeMap::new(),
        }
    }
}

impl ClusterConfig {
    pub fn params_for(&self, family: &str, points: &Matrix) -> Result<DbscanParams> {
        let ov = self.overrides.get(family).cloned().unwrap_or_default();
        let min_pts = ov.min_pts.or(self.min_pts).unwrap_or(2 * points.cols());
        if points.rows() < min_pts {
            return Err(FarmError::Cluster(format!(
                "family '{family}' has {} samples, fewer than min_pts = {min_pts}",
                points.rows()
            )));
        }
        let epsilon = match ov.epsilon {
            Some(e) => e,
            None => select_epsilon(points, min_pts, self.epsilon_floor)?,
        };
        DbscanParams::new(epsilon, min_pts)
    }
}

/// Clusters every family independently and summarizes each cluster. Output is
/// ordered by family name, then discovery order.
pub fn build_cluster_model(embeddings: &Matrix, labels: &[String], cfg: &ClusterConfig) -> Result<Vec<Cluster>> {
    if labels.len() != embeddings.rows() {
        return Err(FarmError::DimensionMismatch {
            context: "cluster labels",
            expected: embeddings.rows(),
            actual: labels.len(),
        });
    }
    cfg.policy.validate()?;
    let mut by_family: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_family.entry(l.as_str()).or_default().push(i);
    }
    let per_family: Vec<Result<Vec<Cluster>>> = by_family
        .par_iter()
        .map(|(family, rows)| {
            let points = embeddings.select_rows(rows);
            let params = cfg.params_for(family, &points)?;
            let assignment = dbscan(&points, &params);
            let groups = assignment.members();
            if groups.is_empty() {
                return Err(FarmError::Cluster(format!(
                    "family '{family}' produced only noise (epsilon = {:.4e}, min_pts = {})",
                    params.epsilon, params.min_pts
                )));
            }
            Ok(groups
                .iter()
                .map(|m| {
                    let (centroid, threshold) = summarize(&points, m, &cfg.policy);
                    Cluster {
                        family: family.to_string(),
                        centroid,
                        threshold,
                        member_count: m.len(),
                        origin: ClusterOrigin::Trained,
                    }
                })
                .collect())
        })
        .collect();
    let mut out = Vec::new();
    for r in per_family {
        out.extend(r?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Assignment {
    Accepted { family: String, cluster: usize, distance: f64 },
    Drifted { nearest: usize, distance: f64 },
}

/// Index and squared distance of the nearest centroid; ties go to the lower index.
pub fn nearest_cluster(z: &[f64], clusters: &[Cluster]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in clusters.iter().enumerate() {
        let d = sq_dist(z, &c.centroid);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best
}

/// Accepts `z` into its nearest cluster when within that cluster's threshold.
pub fn assign(z: &[f64], clusters: &[Cluster]) -> Result<Assignment> {
    let (idx, distance) =
        nearest_cluster(z, clusters).ok_or_else(|| FarmError::Cluster("cannot assign against an empty cluster list".into()))?;
    let c = &clusters[idx];
    Ok(if distance <= c.threshold {
        Assignment::Accepted {
            family: c.family.clone(),
            cluster: idx,
            distance,
        }
    } else {
        Assignment::Drifted { nearest: idx, distance }
    })
}
