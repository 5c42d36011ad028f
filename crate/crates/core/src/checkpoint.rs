//! Versioned model checkpoints and stream snapshots.
//!
//! Checkpoint layout: the 8-byte magic `FARMCKPT`, a little-endian `u32`
//! format version, a little-endian `u64` header length, a JSON header, then
//! the f64 blocks listed in the header, each little-endian.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::{Cluster, ClusterConfig, ClusterOrigin};
use crate::drift::DetectorState;
use crate::error::{FarmError, Result};
use crate::features::{FeatureMatrix, PreprocessState};
use crate::net::{Architecture, AutoencoderModel, TrainConfig};

pub const MAGIC: &[u8; 8] = b"FARMCKPT";
pub const FORMAT_VERSION: u32 = 1;
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// Seconds since the Unix epoch, supplied by the caller.
    pub created_unix: u64,
    pub seed: u64,
    /// SHA-256 of the training data, see [`data_fingerprint`].
    pub data_fingerprint: String,
    pub crate_version: String,
}

impl Provenance {
    pub fn new(created_unix: u64, seed: u64, data_fingerprint: String) -> Self {
        Self {
            created_unix,
            seed,
            data_fingerprint,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: AutoencoderModel,
    pub clusters: Vec<Cluster>,
    pub cluster_config: ClusterConfig,
    pub train_config: TrainConfig,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct PreprocessMeta {
    input_width: usize,
    retained_indices: Vec<usize>,
    variance_floor: f64,
    resolution: usize,
}

#[derive(Serialize, Deserialize)]
struct ClusterMeta {
    family: String,
    member_count: usize,
    origin: ClusterOrigin,
}

#[derive(Serialize, Deserialize)]
struct BlockMeta {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    architecture: Architecture,
    input_dim: usize,
    latent_dim: usize,
    preprocess: Option<PreprocessMeta>,
    clusters: Vec<ClusterMeta>,
    cluster_config: ClusterConfig,
    train_config: TrainConfig,
    provenance: Provenance,
    blocks: Vec<BlockMeta>,
}

const BLOCKS: [&str; 5] = ["parameters", "batchnorm_stats", "quantile_maps", "centroids", "thresholds"];

/// Hex SHA-256 over the feature values (LE f64), labels and ids.
pub fn data_fingerprint(m: &FeatureMatrix) -> String {
    let mut h = Sha256::new();
    h.update((m.n_samples() as u64).to_le_bytes());
    h.update((m.n_features() as u64).to_le_bytes());
    for v in m.data.as_slice() {
        h.update(v.to_le_bytes());
    }
    for col in [&m.labels, &m.ids].into_iter().flatten() {
        for s in col {
            h.update((s.len() as u64).to_le_bytes());
            h.update(s.as_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn bad(msg: impl Into<String>) -> FarmError {
    FarmError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let pre = self.model.preprocess.as_ref();
        let blocks: Vec<Vec<f64>> = vec![
            self.model.parameters(),
            self.model.batchnorm_stats(),
            pre.map(|p| p.quantile_maps.concat()).unwrap_or_default(),
            self.clusters.iter().flat_map(|c| c.centroid.iter().copied()).collect(),
            self.clusters.iter().map(|c| c.threshold).collect(),
        ];
        let header = Header {
            architecture: self.model.architecture(),
            input_dim: self.model.input_dim(),
            latent_dim: self.model.latent_dim(),
            preprocess: pre.map(|p| PreprocessMeta {
                input_width: p.input_width,
                retained_indices: p.retained_indices.clone(),
                variance_floor: p.variance_floor,
                resolution: p.resolution(),
            }),
            clusters: self
                .clusters
                .iter()
                .map(|c| ClusterMeta {
                    family: c.family.clone(),
                    member_count: c.member_count,
                    origin: c.origin,
                })
                .collect(),
            cluster_config: self.cluster_config.clone(),
            train_config: self.train_config.clone(),
            provenance: self.provenance.clone(),
            blocks: BLOCKS
                .iter()
                .zip(&blocks)
                .map(|(n, b)| BlockMeta {
                    name: n.to_string(),
                    len: b.len(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let n_floats: usize = blocks.iter().map(Vec::len).sum();
        let mut out = Vec::with_capacity(20 + json.len() + 8 * n_floats);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in blocks.iter().flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(FarmError::FormatVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])?;
        let mut rest = &body[hlen..];
        let mut blocks: Vec<Vec<f64>> = Vec::with_capacity(BLOCKS.len());
        if header.blocks.len() != BLOCKS.len() || header.blocks.iter().zip(BLOCKS).any(|(b, n)| b.name != n) {
            return Err(bad("unexpected block list"));
        }
        for b in &header.blocks {
            let nbytes = b.len.checked_mul(8).ok_or_else(|| bad("block too large"))?;
            if rest.len() < nbytes {
                return Err(bad(format!("truncated block '{}'", b.name)));
            }
            let (head, tail) = rest.split_at(nbytes);
            blocks.push(
                head.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            );
            rest = tail;
        }
        if !rest.is_empty() {
            return Err(bad("trailing bytes after last block"));
        }
        let [params, bn, qmaps, centroids, thresholds]: [Vec<f64>; 5] =
            blocks.try_into().map_err(|_| bad("block count"))?;

        let mut model = AutoencoderModel::new(&header.architecture, header.input_dim, 0)?;
        model.set_parameters(&params)?;
        model.set_batchnorm_stats(&bn)?;
        if let Some(p) = header.preprocess {
            let n = p.retained_indices.len();
            if p.resolution == 0 || qmaps.len() != n * p.resolution {
                return Err(bad("quantile map block does not match its header"));
            }
            let quantile_maps = qmaps.chunks_exact(p.resolution).map(<[f64]>::to_vec).collect();
            model = model.with_preprocess(PreprocessState {
                input_width: p.input_width,
                retained_indices: p.retained_indices,
                quantile_maps,
                variance_floor: p.variance_floor,
            })?;
        } else if !qmaps.is_empty() {
            return Err(bad("quantile maps without preprocess metadata"));
        }
        let d = header.latent_dim;
        let k = header.clusters.len();
        if centroids.len() != k * d || thresholds.len() != k {
            return Err(bad("cluster blocks do not match the header"));
        }
        let clusters = header
            .clusters
            .into_iter()
            .enumerate()
            .map(|(i, m)| Cluster {
                family: m.family,
                centroid: centroids[i * d..(i + 1) * d].to_vec(),
                threshold: thresholds[i],
                member_count: m.member_count,
                origin: m.origin,
            })
            .collect();
        Ok(Checkpoint {
            model,
            clusters,
            cluster_config: header.cluster_config,
            train_config: header.train_config,
            provenance: header.provenance,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| FarmError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| FarmError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| FarmError::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| FarmError::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| FarmError::io(path, e.error))?;
    Ok(())
}

/// Resumable stream state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSnapshot {
    pub format_version: u32,
    pub rows_consumed: u64,
    pub state: DetectorState,
}

impl StreamSnapshot {
    pub fn new(state: DetectorState, rows_consumed: u64) -> Self {
        Self {
            format_version: SNAPSHOT_VERSION,
            rows_consumed,
            state,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &serde_json::to_vec(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| FarmError::io(path, e))?;
        let snap: StreamSnapshot = serde_json::from_slice(&bytes)?;
        if snap.format_version != SNAPSHOT_VERSION {
            return Err(FarmError::FormatVersion {
                found: snap.format_version,
                expected: SNAPSHOT_VERSION,
            });
        }
        Ok(snap)
    }
}
