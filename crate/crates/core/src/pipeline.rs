//! End-to-end fitting: preprocess, split, train, cluster.

use serde::{Deserialize, Serialize};

use crate::cluster::{build_cluster_model, Cluster, ClusterConfig};
use crate::config::RunConfig;
use crate::drift::{DetectorState, RetrainContext};
use crate::error::{FarmError, Result};
use crate::features::{apply_preprocess, fit_preprocess, split, FeatureMatrix};
use crate::net::{self, mse_loss, sample_triplets, triplet_loss, AutoencoderModel, EpochStats};

/// Clusters the embeddings of already preprocessed, labeled rows.
pub fn cluster_training_set(model: &AutoencoderModel, pre: &FeatureMatrix, cfg: &ClusterConfig) -> Result<Vec<Cluster>> {
    let labels = pre.require_labels()?;
    let z = model.encode(&pre.data)?;
    build_cluster_model(&z, labels, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationLoss {
    pub triplet: f64,
    pub mse: f64,
}

#[derive(Debug, Clone)]
pub struct FittedPipeline {
    /// Carries the fitted preprocess state.
    pub model: AutoencoderModel,
    pub clusters: Vec<Cluster>,
    pub history: Vec<EpochStats>,
    /// Raw rows of the training split.
    pub train: FeatureMatrix,
    /// Raw rows of the held-out split.
    pub test: FeatureMatrix,
    /// `None` when the held-out split cannot form a triplet.
    pub validation: Option<ValidationLoss>,
}

impl FittedPipeline {
    /// A fresh detector over the fitted model; retraining is enabled when
    /// `retrain` is set.
    pub fn detector(&self, cfg: &RunConfig, retrain: bool) -> Result<DetectorState> {
        let state = DetectorState::init(
            self.model.clone(),
            self.clusters.clone(),
            cfg.adapt.clone(),
            cfg.cluster.clone(),
        )?;
        if retrain {
            state.with_retraining(RetrainContext {
                train_raw: self.train.clone(),
                train: cfg.train_config(),
            })
        } else {
            Ok(state)
        }
    }
}

/// Inference-mode triplet and reconstruction losses on preprocessed rows.
pub fn validation_loss(model: &AutoencoderModel, pre: &FeatureMatrix, margin: f64, seed: u64) -> Result<Option<ValidationLoss>> {
    let groups = pre.indices_by_label();
    let can_triplet = groups.len() >= 2 && groups.values().any(|g| g.len() >= 2);
    let mse = mse_loss(model, &pre.data)?;
    if !can_triplet {
        return Ok(None);
    }
    let batch = sample_triplets(pre, pre.n_samples().min(1000), margin, seed)?;
    Ok(Some(ValidationLoss {
        triplet: triplet_loss(model, &batch)?,
        mse,
    }))
}

/// Splits labeled raw data, fits the preprocess on the training split,
/// trains the autoencoder and clusters the training embeddings.
pub fn fit_pipeline(raw: &FeatureMatrix, cfg: &RunConfig) -> Result<FittedPipeline> {
    cfg.validate()?;
    raw.require_labels()?;
    let (train_raw, test_raw) = split(raw, cfg.data.train_fraction, cfg.seed)?;
    fit_on_split(train_raw, test_raw, cfg)
}

/// Like [`fit_pipeline`] with a caller-provided split.
pub fn fit_on_split(train_raw: FeatureMatrix, test_raw: FeatureMatrix, cfg: &RunConfig) -> Result<FittedPipeline> {
    if train_raw.n_features() != test_raw.n_features() {
        return Err(FarmError::DimensionMismatch {
            context: "train vs test features",
            expected: train_raw.n_features(),
            actual: test_raw.n_features(),
        });
    }
    let state = fit_preprocess(&train_raw, cfg.preprocess.variance_floor, cfg.preprocess.quantile_resolution)?;
    let pre = apply_preprocess(&state, &train_raw)?;
    let tc = cfg.train_config();
    let arch = cfg.model.architecture(pre.n_features());
    log::info!(
        "training on {} rows, {} -> {} features, latent {}",
        pre.n_samples(),
        train_raw.n_features(),
        pre.n_features(),
        cfg.model.latent_dim
    );
    let outcome = net::train(&pre, &arch, &tc)?;
    let model = outcome.model.with_preprocess(state.clone())?;
    let clusters = cluster_training_set(&model, &pre, &cfg.cluster)?;
    let validation = if test_raw.n_samples() > 0 && test_raw.labels.is_some() {
        let pre_test = apply_preprocess(&state, &test_raw)?;
        validation_loss(&model, &pre_test, tc.margin, cfg.seed)?
    } else {
        None
    };
    Ok(FittedPipeline {
        model,
        clusters,
        history: outcome.history,
        train: train_raw,
        test: test_raw,
        validation,
    })
}
