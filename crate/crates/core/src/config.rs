//! Run configuration loaded from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapt::AdaptConfig;
use crate::cluster::ClusterConfig;
use crate::error::{FarmError, Result};
use crate::eval::EpisodeSpec;
use crate::features::{CsvColumns, ScenarioParams};
use crate::net::{AdamConfig, Architecture, LossWeights, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub label_column: String,
    pub id_column: Option<String>,
    pub train_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            label_column: "label".into(),
            id_column: Some("id".into()),
            train_fraction: 0.8,
        }
    }
}

impl DataConfig {
    pub fn columns(&self, labeled: bool) -> CsvColumns {
        CsvColumns {
            label: labeled.then(|| self.label_column.clone()),
            id: self.id_column.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Columns with population variance at or below this are dropped.
    pub variance_floor: f64,
    pub quantile_resolution: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            variance_floor: 0.0,
            quantile_resolution: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub batchnorm: bool,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![1024, 256],
            latent_dim: 32,
            batchnorm: true,
            dropout: 0.2,
        }
    }
}

impl ModelConfig {
    pub fn architecture(&self, input_dim: usize) -> Architecture {
        Architecture::mirrored(input_dim, &self.hidden, self.latent_dim, self.batchnorm, self.dropout)
    }
}

/// Training knobs; the seed comes from [`RunConfig::seed`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_triplets: usize,
    pub learning_rate: f64,
    pub margin: f64,
    pub lambda_mse: f64,
    pub early_stop_patience: Option<usize>,
    pub adam: AdamConfig,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_triplets: t.batch_triplets,
            learning_rate: t.learning_rate,
            margin: t.margin,
            lambda_mse: t.loss_weights.lambda_mse,
            early_stop_patience: t.early_stop_patience,
            adam: t.adam,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeSettings {
    pub n_way: Vec<usize>,
    pub k_shot: Vec<usize>,
    pub query_per_class: usize,
    pub episodes: usize,
}

impl Default for EpisodeSettings {
    fn default() -> Self {
        Self {
            n_way: vec![3, 5, 8],
            k_shot: vec![1, 5, 10, 20],
            query_per_class: 15,
            episodes: 600,
        }
    }
}

impl EpisodeSettings {
    /// Every (n_way, k_shot) combination in row-major order.
    pub fn specs(&self, seed: u64) -> Vec<EpisodeSpec> {
        self.n_way
            .iter()
            .flat_map(|&n| {
                self.k_shot.iter().map(move |&k| EpisodeSpec {
                    n_way: n,
                    k_shot: k,
                    query_per_class: self.query_per_class,
                    episodes: self.episodes,
                    seed,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed for splitting, initialization, sampling and episodes.
    pub seed: u64,
    pub data: DataConfig,
    pub preprocess: PreprocessConfig,
    pub model: ModelConfig,
    pub train: TrainSettings,
    pub cluster: ClusterConfig,
    pub adapt: AdaptConfig,
    pub episodes: EpisodeSettings,
    pub scenario: ScenarioParams,
}

pub const DEFAULT_CONFIG_TOML: &str = r#"# Master seed: split, weight init, triplet sampling, dropout, episodes.
seed = 0

[data]
label_column = "label"
id_column = "id"
train_fraction = 0.8

[preprocess]
# Columns whose variance is at or below this value are dropped.
variance_floor = 0.0
quantile_resolution = 1000

[model]
hidden = [1024, 256]
latent_dim = 32
batchnorm = true
dropout = 0.2

[train]
epochs = 30
batch_triplets = 64
learning_rate = 0.001
margin = 1.0
lambda_mse = 0.5
# early_stop_patience = 5

[train.adam]
beta1 = 0.9
beta2 = 0.999
epsilon = 1e-8

[cluster]
epsilon_floor = 1e-6
# min_pts defaults to 2 * latent_dim
# min_pts = 64

[cluster.policy]
# "max_distance", "mean_plus_std" or "percentile"
kind = "mean_plus_std"
std_multiplier = 3.0

# Per-family DBSCAN overrides:
# [cluster.overrides.somefamily]
# epsilon = 0.5
# min_pts = 20

[adapt]
buffer_min_cluster = 10
retrain_trigger = 100
# "label_drift" or "covariate_drift"
label_mode = "label_drift"
naming_scheme = "novel-"
warm_start = false
# buffer DBSCAN epsilon is capped at this multiple of the median trained
# cluster radius; inf disables the cap
buffer_epsilon_cap = 1.0

[adapt.known_family_link]
# operator-label = "known-family"

[episodes]
n_way = [3, 5, 8]
k_shot = [1, 5, 10, 20]
query_per_class = 15
episodes = 600

[scenario]
known = ["fam-a", "fam-b", "fam-c", "fam-d", "fam-e", "fam-f"]
unseen = ["new-a", "new-b"]
samples_per_family = 300
ambient_dim = 12
separation_factor = 6.0
unseen_separation_factor = 6.0
signal_dim = 3
shift_sigma = 3.0
scale_inflation = 1.0
blob_std = 1.0
constant_features = 2
seed = 7
"#;

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| FarmError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| FarmError::io(path, e))?;
        Self::from_toml_str(&s).map_err(|e| match e {
            FarmError::Config(m) => FarmError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| FarmError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return Err(FarmError::Config("data.train_fraction must be in (0, 1)".into()));
        }
        if self.preprocess.quantile_resolution < 2 {
            return Err(FarmError::Config("preprocess.quantile_resolution must be >= 2".into()));
        }
        if self.model.latent_dim == 0 || self.model.hidden.contains(&0) {
            return Err(FarmError::Config("model widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return Err(FarmError::Config("model.dropout must be in [0, 1)".into()));
        }
        self.train_config().validate()?;
        self.cluster.policy.validate()?;
        self.adapt.validate()?;
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_triplets: t.batch_triplets,
            learning_rate: t.learning_rate,
            margin: t.margin,
            loss_weights: LossWeights {
                lambda_mse: t.lambda_mse,
            },
            seed: self.seed,
            early_stop_patience: t.early_stop_patience,
            adam: t.adam,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_document_matches_defaults() {
        assert_eq!(RunConfig::from_toml_str(DEFAULT_CONFIG_TOML).unwrap(), RunConfig::default());
    }

    #[test]
    fn roundtrip_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.seed = 42;
        cfg.model.hidden = vec![16];
        let s = cfg.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&s).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml_str("sed = 1").is_err());
        assert!(RunConfig::from_toml_str("[model]\nlatent = 3").is_err());
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = RunConfig::from_toml_str("seed = 5\n[model]\nlatent_dim = 4").unwrap();
        assert_eq!(cfg.model.latent_dim, 4);
        assert_eq!(cfg.model.hidden, vec![1024, 256]);
        assert_eq!(cfg.train_config().seed, 5);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml_str("[data]\ntrain_fraction = 1.0").is_err());
        assert!(RunConfig::from_toml_str("[adapt]\nbuffer_min_cluster = 1").is_err());
    }

    #[test]
    fn episode_grid() {
        let specs = EpisodeSettings::default().specs(3);
        assert_eq!(specs.len(), 12);
        assert_eq!((specs[1].n_way, specs[1].k_shot), (3, 5));
    }
}
