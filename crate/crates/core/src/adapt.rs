//! Buffer clustering, prototype promotion, few-shot inference and retraining.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cluster::{dbscan, select_epsilon, summarize, Cluster, ClusterOrigin, DbscanParams};
use crate::drift::{AccumulatedSample, DetectorState};
use crate::error::{FarmError, Result};
use crate::features::{apply_preprocess, FeatureMatrix};
use crate::matrix::{mean_of, sq_dist, Matrix};
use crate::net::{self, AutoencoderModel};
use crate::pipeline;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Promoted groups become new families.
    LabelDrift,
    /// Promoted groups extend an existing family.
    CovariateDrift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    /// Minimum size of a buffered group before it is promoted (also DBSCAN min_pts on the buffer).
    pub buffer_min_cluster: usize,
    /// Accumulated samples of a novel family that trigger a retrain.
    pub retrain_trigger: usize,
    pub label_mode: LabelMode,
    /// Maps operator-supplied labels onto known family names (covariate mode).
    pub known_family_link: BTreeMap<String, String>,
    /// Prefix for synthetic novel family names, e.g. `novel-` gives `novel-1`.
    pub naming_scheme: String,
    /// Continue from the current weights instead of a fresh initialization.
    pub warm_start: bool,
    /// Upper bound on the buffer DBSCAN epsilon, as a multiple of the median
    /// trained-cluster radius (square root of its threshold). `inf` leaves the
    /// knee estimate alone.
    pub buffer_epsilon_cap: f64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            buffer_min_cluster: 10,
            retrain_trigger: 100,
            label_mode: LabelMode::LabelDrift,
            known_family_link: BTreeMap::new(),
            naming_scheme: "novel-".into(),
            warm_start: false,
            buffer_epsilon_cap: 1.0,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.buffer_min_cluster < 2 {
            return Err(FarmError::InvalidArgument("buffer_min_cluster must be >= 2".into()));
        }
        if self.retrain_trigger < self.buffer_min_cluster {
            return Err(FarmError::InvalidArgument(
                "retrain_trigger must be >= buffer_min_cluster".into(),
            ));
        }
        if self.buffer_epsilon_cap.is_nan() || self.buffer_epsilon_cap <= 0.0 {
            return Err(FarmError::InvalidArgument("buffer_epsilon_cap must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub family: String,
    /// Mean latent vector of the founding members.
    pub vector: Vec<f64>,
    pub support_ids: Vec<String>,
    /// Stream position at which the prototype was promoted.
    pub created_at: u64,
}

/// A prototype together with the raw founding samples, so it can be re-embedded
/// after the encoder changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeRecord {
    pub prototype: Prototype,
    pub support_raw: Vec<Vec<f64>>,
    pub support_latent: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptEventKind {
    PrototypePromoted,
    RetrainTriggered,
    RetrainCompleted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptEvent {
    pub kind: AdaptEventKind,
    pub family: String,
    /// Stream position (1-based count of observed samples) at which the event fired.
    pub position: u64,
    /// Founding members (promotion) or training rows added (retrain).
    pub samples: usize,
    /// Index of the cluster created by a promotion.
    pub cluster_index: Option<usize>,
    pub buffer_size: usize,
    pub n_clusters: usize,
}

/// Most common label among `labels`; ties go to the lexicographically smallest.
fn majority_label<'a>(labels: impl Iterator<Item = Option<&'a str>>) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels.flatten() {
        *counts.entry(l).or_default() += 1;
    }
    let max = counts.values().copied().max()?;
    counts.into_iter().find(|(_, c)| *c == max).map(|(l, _)| l.to_string())
}

/// Re-clusters the drift buffer and promotes the largest qualifying group.
///
/// DBSCAN runs with `min_pts = buffer_min_cluster` and `ε` from the knee of the
/// buffer's k-distance curve (`k = buffer_min_cluster`). At most one group is
/// promoted per call.
pub fn on_buffer_update(state: &mut DetectorState) -> Result<Vec<AdaptEvent>> {
    let min = state.config.buffer_min_cluster;
    if state.buffer.len() < min {
        return Ok(Vec::new());
    }
    let latents = Matrix::from_rows(&state.buffer.iter().map(|b| b.latent.as_slice()).collect::<Vec<_>>())?;
    let mut eps = select_epsilon(&latents, min, state.cluster_config.epsilon_floor)?;
    if let Some(radius) = median_trained_radius(&state.clusters) {
        eps = eps.min((state.config.buffer_epsilon_cap * radius).max(state.cluster_config.epsilon_floor));
    }
    let assignment = dbscan(&latents, &DbscanParams::new(eps, min)?);
    let Some(members) = assignment
        .members()
        .into_iter()
        .filter(|m| m.len() >= min)
        .reduce(|best, m| if m.len() > best.len() { m } else { best })
    else {
        return Ok(Vec::new());
    };
    let operator_label = majority_label(members.iter().map(|&i| state.buffer[i].label.as_deref()));
    let mode = state.config.label_mode;
    let proto = match promote(state, &members, mode, operator_label.as_deref()) {
        Ok(p) => p,
        Err(e) => {
            log::warn!("buffered group of {} left unpromoted: {e}", members.len());
            return Ok(Vec::new());
        }
    };
    let mut events = vec![AdaptEvent {
        kind: AdaptEventKind::PrototypePromoted,
        family: proto.family.clone(),
        position: state.position,
        samples: members.len(),
        cluster_index: Some(state.clusters.len() - 1),
        buffer_size: state.buffer.len(),
        n_clusters: state.clusters.len(),
    }];
    events.extend(maybe_retrain(state)?);
    Ok(events)
}

/// Turns buffered rows `members` into a prototype cluster and removes them from
/// the buffer.
///
/// In label-drift mode the family is `operator_label` or the next synthetic
/// name. In covariate mode `operator_label` (optionally mapped through
/// `known_family_link`) must name a known family. Founding members of a novel
/// family seed its retraining accumulator.
pub fn promote(
    state: &mut DetectorState,
    members: &[usize],
    label_mode: LabelMode,
    operator_label: Option<&str>,
) -> Result<Prototype> {
    if members.len() < state.config.buffer_min_cluster {
        return Err(FarmError::Adapt(format!(
            "{} members is below buffer_min_cluster = {}",
            members.len(),
            state.config.buffer_min_cluster
        )));
    }
    if members.iter().any(|&i| i >= state.buffer.len()) {
        return Err(FarmError::Adapt("member index outside the buffer".into()));
    }
    let known = state.known_families();
    let family = match label_mode {
        LabelMode::LabelDrift => match operator_label {
            Some(l) => l.to_string(),
            None => {
                state.novel_counter += 1;
                format!("{}{}", state.config.naming_scheme, state.novel_counter)
            }
        },
        LabelMode::CovariateDrift => {
            let label = operator_label
                .ok_or_else(|| FarmError::Adapt("covariate promotion needs an operator label".into()))?;
            let linked = state
                .config
                .known_family_link
                .get(label)
                .map_or(label, String::as_str);
            if !known.contains(linked) {
                return Err(FarmError::Adapt(format!(
                    "label '{label}' does not resolve to a known family"
                )));
            }
            linked.to_string()
        }
    };

    let latents = Matrix::from_rows(&members.iter().map(|&i| state.buffer[i].latent.as_slice()).collect::<Vec<_>>())?;
    let all: Vec<usize> = (0..members.len()).collect();
    let (vector, threshold) = summarize(&latents, &all, &state.cluster_config.policy);
    let prototype = Prototype {
        family: family.clone(),
        vector: vector.clone(),
        support_ids: members.iter().map(|&i| state.buffer[i].id.clone()).collect(),
        created_at: state.position,
    };
    let record = PrototypeRecord {
        prototype: prototype.clone(),
        support_raw: members.iter().map(|&i| state.buffer[i].raw.clone()).collect(),
        support_latent: members.iter().map(|&i| state.buffer[i].latent.clone()).collect(),
    };
    state.clusters.push(Cluster {
        family: family.clone(),
        centroid: vector,
        threshold,
        member_count: members.len(),
        origin: ClusterOrigin::Prototype,
    });
    if !known.contains(&family) {
        state
            .accumulators
            .entry(family)
            .or_default()
            .extend(record.support_raw.iter().zip(&prototype.support_ids).map(|(raw, id)| AccumulatedSample {
                id: id.clone(),
                raw: raw.clone(),
            }));
    }
    state.prototypes.push(record);
    let mut keep = vec![true; state.buffer.len()];
    members.iter().for_each(|&i| keep[i] = false);
    let mut k = keep.into_iter();
    state.buffer.retain(|_| k.next().unwrap());
    Ok(prototype)
}

/// Index of the prototype nearest to `z` by squared distance; ties go to the
/// lower index.
pub fn nearest_prototype(prototypes: &[Prototype], z: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in prototypes.iter().enumerate() {
        let d = sq_dist(z, &p.vector);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// Family of the prototype nearest to the embedded raw `query`. No thresholds.
pub fn classify_fewshot(model: &AutoencoderModel, prototypes: &[Prototype], query: &[f64]) -> Result<String> {
    if prototypes.is_empty() {
        return Err(FarmError::Adapt("few-shot classification needs at least one prototype".into()));
    }
    let z = model.embed_row(query)?;
    Ok(prototypes[nearest_prototype(prototypes, &z).unwrap()].family.clone())
}

/// Prototype from labeled support embeddings (mean per family).
/// Median of `sqrt(threshold)` over trained-origin clusters.
fn median_trained_radius(clusters: &[Cluster]) -> Option<f64> {
    let mut r: Vec<f64> = clusters
        .iter()
        .filter(|c| c.origin == ClusterOrigin::Trained)
        .map(|c| c.threshold.sqrt())
        .collect();
    if r.is_empty() {
        return None;
    }
    r.sort_by(f64::total_cmp);
    let mid = r.len() / 2;
    Some(if r.len() % 2 == 0 { 0.5 * (r[mid - 1] + r[mid]) } else { r[mid] })
}

pub fn prototypes_from_support(support: &BTreeMap<String, Matrix>) -> Vec<Prototype> {
    support
        .iter()
        .map(|(family, m)| Prototype {
            family: family.clone(),
            vector: mean_of(m.iter_rows(), m.cols()),
            support_ids: Vec::new(),
            created_at: 0,
        })
        .collect()
}

/// Retrains when a novel family's accumulator reaches `retrain_trigger`.
///
/// The encoder is retrained on the original rows plus the accumulated ones,
/// every family is re-clustered, remaining prototypes and the buffer are
/// re-embedded, and the result replaces the live model in one assignment.
/// On error the state is unchanged.
pub fn maybe_retrain(state: &mut DetectorState) -> Result<Vec<AdaptEvent>> {
    let trigger = state.config.retrain_trigger;
    let Some(family) = state
        .accumulators
        .iter()
        .find(|(_, v)| v.len() >= trigger)
        .map(|(k, _)| k.clone())
    else {
        return Ok(Vec::new());
    };
    let Some(ctx) = state.retrain.as_ref() else {
        log::debug!("family '{family}' reached the retrain trigger but retraining is not configured");
        return Ok(Vec::new());
    };
    let triggered = AdaptEvent {
        kind: AdaptEventKind::RetrainTriggered,
        family: family.clone(),
        position: state.position,
        samples: state.accumulators[&family].len(),
        cluster_index: None,
        buffer_size: state.buffer.len(),
        n_clusters: state.clusters.len(),
    };

    let acc = &state.accumulators[&family];
    let added = FeatureMatrix::new(
        Matrix::from_rows(&acc.iter().map(|a| a.raw.as_slice()).collect::<Vec<_>>())?,
        Some(vec![family.clone(); acc.len()]),
        Some(acc.iter().map(|a| a.id.clone()).collect()),
    )?;
    let mut base = ctx.train_raw.clone();
    if base.ids.is_none() {
        base.ids = Some((0..base.n_samples()).map(|i| i.to_string()).collect());
    }
    let combined = FeatureMatrix::concat(&[&base, &added])?;
    let preprocess = state
        .model
        .preprocess
        .clone()
        .ok_or_else(|| FarmError::Adapt("model has no preprocess state".into()))?;
    let pre = apply_preprocess(&preprocess, &combined)?;
    let outcome = if state.config.warm_start {
        net::train_with_init(state.model.clone(), &pre, &ctx.train)?
    } else {
        net::train(&pre, &state.model.architecture(), &ctx.train)?
    };
    let model = outcome.model.with_preprocess(preprocess)?;
    let trained = pipeline::cluster_training_set(&model, &pre, &state.cluster_config)?;

    let mut prototypes = Vec::new();
    let mut proto_clusters = Vec::new();
    for rec in state.prototypes.iter().filter(|p| p.prototype.family != family) {
        let raw = FeatureMatrix::new(Matrix::from_rows(&rec.support_raw)?, None, None)?;
        let z = model.embed(&raw)?;
        let all: Vec<usize> = (0..z.rows()).collect();
        let (vector, threshold) = summarize(&z, &all, &state.cluster_config.policy);
        let mut rec = rec.clone();
        rec.prototype.vector = vector.clone();
        rec.support_latent = z.iter_rows().map(<[f64]>::to_vec).collect();
        proto_clusters.push(Cluster {
            family: rec.prototype.family.clone(),
            centroid: vector,
            threshold,
            member_count: z.rows(),
            origin: ClusterOrigin::Prototype,
        });
        prototypes.push(rec);
    }
    let mut buffer = state.buffer.clone();
    for b in &mut buffer {
        b.latent = model.embed_row(&b.raw)?;
    }
    let mut clusters = trained;
    clusters.extend(proto_clusters);

    // commit
    state.model = model;
    state.clusters = clusters;
    state.prototypes = prototypes;
    state.buffer = buffer;
    state.accumulators.remove(&family);
    if let Some(ctx) = state.retrain.as_mut() {
        ctx.train_raw = combined;
    }
    let completed = AdaptEvent {
        kind: AdaptEventKind::RetrainCompleted,
        family,
        position: state.position,
        samples: added.n_samples(),
        cluster_index: None,
        buffer_size: state.buffer.len(),
        n_clusters: state.clusters.len(),
    };
    Ok(vec![triggered, completed])
}
