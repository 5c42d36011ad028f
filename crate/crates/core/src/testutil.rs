//! Fixtures shared by unit tests.

use crate::adapt::AdaptConfig;
use crate::cluster::{Cluster, ClusterConfig, ClusterOrigin, ThresholdPolicy};
use crate::drift::{BufferEntry, DetectorState};
use crate::features::PreprocessState;
use crate::net::{Architecture, AutoencoderModel, LayerSpec};

/// Model whose `embed_row` is the identity on `[0, 1]^dim`.
pub(crate) fn identity_model(dim: usize) -> AutoencoderModel {
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

/// Identity model with one trained cluster "known" at (0.1, 0.1), radius 0.1.
pub(crate) fn detector(config: AdaptConfig) -> DetectorState {
    let clusters = vec![Cluster {
        family: "known".into(),
        centroid: vec![0.1, 0.1],
        threshold: 0.01,
        member_count: 50,
        origin: ClusterOrigin::Trained,
    }];
    let cc = ClusterConfig {
        policy: ThresholdPolicy::MaxDistance,
        ..ClusterConfig::default()
    };
    DetectorState::init(identity_model(2), clusters, config, cc).unwrap()
}

pub(crate) fn push_buffer(state: &mut DetectorState, id: &str, z: [f64; 2], label: Option<&str>) {
    state.position += 1;
    state.buffer.push(BufferEntry {
        id: id.into(),
        raw: z.to_vec(),
        latent: z.to_vec(),
        label: label.map(str::to_string),
        position: state.position,
    });
}
