//! Drift-aware family classification on learned embeddings.
//!
//! A triplet autoencoder maps feature vectors into a latent space where each
//! known family is modeled by density-based clusters with a centroid and an
//! acceptance radius. Samples outside every radius are flagged as drifted,
//! buffered, and promoted to few-shot prototypes once a cohesive group forms;
//! enough samples of a novel family trigger a full retrain.

pub mod adapt;
pub mod checkpoint;
pub mod cluster;
pub mod config;
pub mod drift;
pub mod error;
pub mod eval;
pub mod features;
pub mod matrix;
pub mod net;
pub mod pipeline;

#[cfg(test)]
mod testutil;

pub use adapt::{AdaptConfig, AdaptEvent, AdaptEventKind, LabelMode, Prototype};
pub use checkpoint::{Checkpoint, Provenance, StreamSnapshot};
pub use cluster::{Cluster, ClusterAssignment, ClusterOrigin, DbscanParams, ThresholdPolicy};
pub use config::RunConfig;
pub use drift::{DetectorState, Verdict, VerdictKind};
pub use error::{FarmError, Result};
pub use features::{CsvColumns, FeatureMatrix, PreprocessState};
pub use matrix::Matrix;
pub use net::{Architecture, AutoencoderModel, LayerSpec, TrainConfig};
pub use pipeline::{fit_pipeline, FittedPipeline};
