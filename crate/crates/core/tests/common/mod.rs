#![allow(dead_code)]

use farm_core::cluster::{Cluster, ClusterConfig, ClusterOrigin, ThresholdPolicy};
use farm_core::{AdaptConfig, Architecture, AutoencoderModel, DetectorState, LayerSpec, PreprocessState};

/// Model whose embedding is the identity on `[0, 1]^dim`.
pub fn identity_model(dim: usize) -> AutoencoderModel {
    let arch = Architecture {
        encoder: vec![LayerSpec::linear(dim)],
        decoder: vec![LayerSpec::linear(dim)],
    };
    let mut m = AutoencoderModel::new(&arch, dim, 0).unwrap();
    let mut eye = vec![0.0; dim * dim];
    (0..dim).for_each(|i| eye[i * dim + i] = 1.0);
    m.encoder[0].weights = eye.clone();
    m.encoder[0].bias = vec![0.0; dim];
    m.decoder[0].weights = eye;
    m.decoder[0].bias = vec![0.0; dim];
    m.with_preprocess(PreprocessState {
        input_width: dim,
        retained_indices: (0..dim).collect(),
        quantile_maps: vec![vec![0.0, 1.0]; dim],
        variance_floor: 0.0,
    })
    .unwrap()
}

pub fn trained(family: &str, centroid: [f64; 2], threshold: f64) -> Cluster {
    Cluster {
        family: family.into(),
        centroid: centroid.to_vec(),
        threshold,
        member_count: 10,
        origin: ClusterOrigin::Trained,
    }
}

pub fn identity_detector(clusters: Vec<Cluster>, config: AdaptConfig) -> DetectorState {
    let cc = ClusterConfig {
        policy: ThresholdPolicy::MaxDistance,
        ..ClusterConfig::default()
    };
    DetectorState::init(identity_model(2), clusters, config, cc).unwrap()
}
