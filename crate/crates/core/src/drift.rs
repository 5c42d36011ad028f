//! Online classification and drift flagging over a sample stream.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::adapt::{self, AdaptConfig, AdaptEvent, PrototypeRecord};
use crate::cluster::{assign, Assignment, Cluster, ClusterConfig, ClusterOrigin};
use crate::error::{FarmError, Result};
use crate::features::FeatureMatrix;
use crate::net::{AutoencoderModel, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictKind {
    Classified,
    Drifted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub kind: VerdictKind,
    /// Present iff `kind == Classified`.
    pub family: Option<String>,
    pub nearest_cluster: usize,
    /// Family of the nearest cluster, whether or not the sample was accepted.
    pub nearest_family: String,
    /// Squared latent distance to the nearest centroid.
    pub distance: f64,
}

impl Verdict {
    pub fn is_drifted(&self) -> bool {
        self.kind == VerdictKind::Drifted
    }
}

/// A drifted sample awaiting promotion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferEntry {
    pub id: String,
    pub raw: Vec<f64>,
    pub latent: Vec<f64>,
    /// Operator-supplied label, used only to name a prototype at promotion.
    pub label: Option<String>,
    pub position: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccumulatedSample {
    pub id: String,
    pub raw: Vec<f64>,
}

/// What a retrain needs besides the live model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainContext {
    /// Raw, labeled training rows; grows with every retrained family.
    pub train_raw: FeatureMatrix,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorState {
    pub(crate) model: AutoencoderModel,
    /// Trained clusters first, then prototype clusters in promotion order.
    pub(crate) clusters: Vec<Cluster>,
    pub(crate) prototypes: Vec<PrototypeRecord>,
    pub(crate) buffer: Vec<BufferEntry>,
    pub(crate) accumulators: BTreeMap<String, Vec<AccumulatedSample>>,
    pub(crate) config: AdaptConfig,
    pub(crate) cluster_config: ClusterConfig,
    pub(crate) retrain: Option<RetrainContext>,
    pub(crate) position: u64,
    pub(crate) novel_counter: u64,
}

impl DetectorState {
    /// Starts a detector with an empty buffer and no accumulators.
    pub fn init(
        model: AutoencoderModel,
        clusters: Vec<Cluster>,
        config: AdaptConfig,
        cluster_config: ClusterConfig,
    ) -> Result<Self> {
        config.validate()?;
        cluster_config.policy.validate()?;
        if clusters.is_empty() {
            return Err(FarmError::InvalidArgument("detector needs at least one cluster".into()));
        }
        if model.preprocess.is_none() {
            return Err(FarmError::InvalidArgument("detector model has no preprocess state".into()));
        }
        if let Some(c) = clusters.iter().find(|c| c.centroid.len() != model.latent_dim()) {
            return Err(FarmError::DimensionMismatch {
                context: "cluster centroid width",
                expected: model.latent_dim(),
                actual: c.centroid.len(),
            });
        }
        let mut clusters = clusters;
        clusters.sort_by_key(|c| c.origin == ClusterOrigin::Prototype);
        Ok(Self {
            model,
            clusters,
            prototypes: Vec::new(),
            buffer: Vec::new(),
            accumulators: BTreeMap::new(),
            config,
            cluster_config,
            retrain: None,
            position: 0,
            novel_counter: 0,
        })
    }

    /// Enables retraining once a novel family's accumulator fills up.
    pub fn with_retraining(mut self, ctx: RetrainContext) -> Result<Self> {
        if ctx.train_raw.n_features() != self.model.raw_dim() {
            return Err(FarmError::DimensionMismatch {
                context: "retraining data width",
                expected: self.model.raw_dim(),
                actual: ctx.train_raw.n_features(),
            });
        }
        ctx.train_raw.require_labels()?;
        ctx.train.validate()?;
        self.retrain = Some(ctx);
        Ok(self)
    }

    pub fn model(&self) -> &AutoencoderModel {
        &self.model
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn prototypes(&self) -> &[PrototypeRecord] {
        &self.prototypes
    }

    pub fn buffer(&self) -> &[BufferEntry] {
        &self.buffer
    }

    pub fn accumulators(&self) -> &BTreeMap<String, Vec<AccumulatedSample>> {
        &self.accumulators
    }

    pub fn config(&self) -> &AdaptConfig {
        &self.config
    }

    pub fn cluster_config(&self) -> &ClusterConfig {
        &self.cluster_config
    }

    pub fn retrain_context(&self) -> Option<&RetrainContext> {
        self.retrain.as_ref()
    }

    /// Number of samples observed so far.
    pub fn position(&self) -> u64 {
        self.position
    }

    /// Families represented by trained (non-prototype) clusters.
    pub fn known_families(&self) -> BTreeSet<String> {
        self.clusters
            .iter()
            .filter(|c| c.origin == ClusterOrigin::Trained)
            .map(|c| c.family.clone())
            .collect()
    }

    fn verdict_for(&self, latent: &[f64]) -> Result<Verdict> {
        Ok(match assign(latent, &self.clusters)? {
            Assignment::Accepted {
                family,
                cluster,
                distance,
            } => Verdict {
                kind: VerdictKind::Classified,
                nearest_family: family.clone(),
                family: Some(family),
                nearest_cluster: cluster,
                distance,
            },
            Assignment::Drifted { nearest, distance } => Verdict {
                kind: VerdictKind::Drifted,
                family: None,
                nearest_cluster: nearest,
                nearest_family: self.clusters[nearest].family.clone(),
                distance,
            },
        })
    }

    /// Verdict for `raw` against the current state without recording anything.
    pub fn peek(&self, raw: &[f64]) -> Result<Verdict> {
        self.verdict_for(&self.model.embed_row(raw)?)
    }

    /// Classifies one sample and runs the adaptation hooks.
    ///
    /// Accepted samples of a novel-family prototype feed that family's retraining
    /// accumulator; drifted samples go to the buffer, which is then re-clustered.
    pub fn observe(&mut self, sample_id: &str, raw: &[f64], label: Option<&str>) -> Result<(Verdict, Vec<AdaptEvent>)> {
        let latent = self.model.embed_row(raw)?;
        let verdict = self.verdict_for(&latent)?;
        self.position += 1;
        let events = match verdict.kind {
            VerdictKind::Classified => {
                let c = &self.clusters[verdict.nearest_cluster];
                if c.origin == ClusterOrigin::Prototype && !self.known_families().contains(&c.family) {
                    let family = c.family.clone();
                    self.accumulators.entry(family).or_default().push(AccumulatedSample {
                        id: sample_id.to_string(),
                        raw: raw.to_vec(),
                    });
                    adapt::maybe_retrain(self)?
                } else {
                    Vec::new()
                }
            }
            VerdictKind::Drifted => {
                self.buffer.push(BufferEntry {
                    id: sample_id.to_string(),
                    raw: raw.to_vec(),
                    latent,
                    label: label.map(str::to_string),
                    position: self.position,
                });
                adapt::on_buffer_update(self)?
            }
        };
        Ok((verdict, events))
    }

    /// Verdicts that sequential [`observe`](Self::observe) calls would produce on
    /// a snapshot of this state; `self` is not modified.
    pub fn classify_batch(&self, raw: &FeatureMatrix) -> Result<Vec<Verdict>> {
        let mut snapshot = self.clone();
        snapshot
            .observe_batch(raw)
            .map(|v| v.into_iter().map(|(verdict, _)| verdict).collect())
    }

    /// Observes every row of `raw` in order. Row ids and labels are used when present.
    pub fn observe_batch(&mut self, raw: &FeatureMatrix) -> Result<Vec<(Verdict, Vec<AdaptEvent>)>> {
        (0..raw.n_samples())
            .map(|i| self.observe(&raw.id(i), raw.data.row(i), raw.label(i)))
            .collect()
    }

    /// Pure verdicts for every row (no buffering, no adaptation).
    pub fn peek_batch(&self, raw: &FeatureMatrix) -> Result<Vec<Verdict>> {
        let z = self.model.embed(raw)?;
        z.iter_rows().map(|r| self.verdict_for(r)).collect()
    }

    /// Renames a novel family (operator labeling after promotion).
    pub fn rename_family(&mut self, from: &str, to: &str) -> Result<()> {
        if self.known_families().contains(from) {
            return Err(FarmError::Adapt(format!("'{from}' is a trained family and cannot be renamed")));
        }
        if !self.prototypes.iter().any(|p| p.prototype.family == from) {
            return Err(FarmError::Adapt(format!("no prototype family named '{from}'")));
        }
        for c in self.clusters.iter_mut().filter(|c| c.family == from) {
            c.family = to.to_string();
        }
        for p in self.prototypes.iter_mut().filter(|p| p.prototype.family == from) {
            p.prototype.family = to.to_string();
        }
        // a family linked to a known one is no longer a retraining candidate
        if let Some(acc) = self.accumulators.remove(from) {
            if !self.known_families().contains(to) {
                self.accumulators.entry(to.to_string()).or_default().extend(acc);
            }
        }
        Ok(())
    }
}
