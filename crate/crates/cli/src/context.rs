//! Settings shared by every subcommand and the file helpers built on them.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use farm_core::checkpoint::write_atomic;
use farm_core::features::{load_csv, CsvColumns};
use farm_core::{Checkpoint, DetectorState, FeatureMatrix, RunConfig};
use serde::Serialize;

pub struct Context {
    pub cfg: RunConfig,
    pub strict: bool,
    pub read_only: bool,
    pub json_out: Option<PathBuf>,
}

impl Context {
    pub fn new(config: Option<&Path>, seed: Option<u64>, strict: bool, read_only: bool, json_out: Option<PathBuf>) -> Result<Self> {
        let mut cfg = match config {
            Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
            None => RunConfig::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
            cfg.scenario.seed = s;
        }
        cfg.validate().context("validating config")?;
        Ok(Self {
            cfg,
            strict,
            read_only,
            json_out,
        })
    }

    pub fn print_effective_config(&self) -> Result<()> {
        let text = self.cfg.to_toml_string()?;
        eprintln!("# effective config");
        for line in text.lines() {
            eprintln!("#   {line}");
        }
        Ok(())
    }

    /// Atomically writes `bytes` unless running read-only.
    pub fn write(&self, path: &Path, bytes: &[u8]) -> Result<()> {
        if self.read_only {
            log::warn!("read-only: not writing {}", path.display());
            return Ok(());
        }
        write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))
    }

    pub fn write_json<T: Serialize>(&self, value: &T) -> Result<()> {
        if let Some(path) = &self.json_out {
            let mut bytes = serde_json::to_vec_pretty(value)?;
            bytes.push(b'\n');
            self.write(path, &bytes)?;
        }
        Ok(())
    }

    /// Columns to read from a CSV header: the label column when present (or
    /// required), the id column when present.
    pub fn columns_for(&self, path: &Path, need_labels: bool) -> Result<CsvColumns> {
        let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
        let header = reader.headers().with_context(|| format!("reading header of {}", path.display()))?;
        let has = |name: &str| header.iter().any(|h| h.trim() == name);
        let data = &self.cfg.data;
        if need_labels && !has(&data.label_column) {
            bail!("{} has no '{}' column", path.display(), data.label_column);
        }
        Ok(CsvColumns {
            label: has(&data.label_column).then(|| data.label_column.clone()),
            id: data.id_column.clone().filter(|c| has(c)),
        })
    }

    pub fn load_data(&self, path: &Path, need_labels: bool) -> Result<FeatureMatrix> {
        let columns = self.columns_for(path, need_labels)?;
        load_csv(path, &columns).with_context(|| format!("loading {}", path.display()))
    }

    /// Detector over a checkpoint with the configured adaptation settings.
    pub fn detector(&self, ckpt: &Checkpoint) -> Result<DetectorState> {
        DetectorState::init(
            ckpt.model.clone(),
            ckpt.clusters.clone(),
            self.cfg.adapt.clone(),
            ckpt.cluster_config.clone(),
        )
        .context("initializing detector")
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

/// Seconds since the epoch for checkpoint provenance; honours `SOURCE_DATE_EPOCH`
/// so that repeated runs can produce identical files.
pub fn creation_time() -> Result<u64> {
    if let Ok(v) = std::env::var("SOURCE_DATE_EPOCH") {
        return v.trim().parse().with_context(|| format!("SOURCE_DATE_EPOCH '{v}' is not an integer"));
    }
    Ok(std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0))
}
