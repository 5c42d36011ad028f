use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context as _, Result};
use farm_core::checkpoint::data_fingerprint;
use farm_core::features::csv_bytes;
use farm_core::{fit_pipeline, Checkpoint, Provenance};
use serde_json::json;

use crate::context::{creation_time, Context};

pub fn run(ctx: &Context, data: &Path, out: &Path, test_out: Option<&Path>) -> Result<()> {
    let raw = ctx.load_data(data, true)?;
    let fitted = fit_pipeline(&raw, &ctx.cfg).context("training pipeline")?;
    let ckpt = Checkpoint {
        model: fitted.model.clone(),
        clusters: fitted.clusters.clone(),
        cluster_config: ctx.cfg.cluster.clone(),
        train_config: ctx.cfg.train_config(),
        provenance: Provenance::new(creation_time()?, ctx.cfg.seed, data_fingerprint(&raw)),
    };
    let bytes = ckpt.to_bytes().context("encoding checkpoint")?;

    // the written file must reproduce the in-memory model exactly
    let back = Checkpoint::from_bytes(&bytes).context("re-reading encoded checkpoint")?;
    let probe = if fitted.test.n_samples() > 0 { &fitted.test } else { &fitted.train };
    let (z0, z1) = (ckpt.model.embed(probe)?, back.model.embed(probe)?);
    let same = z0.as_slice().iter().zip(z1.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits());
    if !same || back.clusters != ckpt.clusters {
        bail!("checkpoint round-trip check failed");
    }
    ctx.write(out, &bytes)?;
    if let Some(p) = test_out {
        ctx.write(p, &csv_bytes(&fitted.test)?)?;
    }

    let retained = fitted.model.preprocess.as_ref().map_or(0, |p| p.retained_indices.len());
    println!(
        "rows {} (train {}, held out {}), features {} -> {}, latent {}",
        raw.n_samples(),
        fitted.train.n_samples(),
        fitted.test.n_samples(),
        raw.n_features(),
        retained,
        fitted.model.latent_dim()
    );
    if let Some(last) = fitted.history.last() {
        println!(
            "epoch {}: triplet {:.4}, mse {:.4}, total {:.4}",
            last.epoch + 1,
            last.triplet,
            last.mse,
            last.total
        );
    }
    match &fitted.validation {
        Some(v) => println!("validation: triplet {:.4}, mse {:.4}", v.triplet, v.mse),
        None => println!("validation: held-out split too small for triplets"),
    }
    let mut by_family: BTreeMap<&str, Vec<(usize, f64)>> = BTreeMap::new();
    for c in &fitted.clusters {
        by_family.entry(&c.family).or_default().push((c.member_count, c.threshold));
    }
    println!("{:<16} {:>8} {:>8}  thresholds", "family", "clusters", "members");
    for (family, cs) in &by_family {
        let members: usize = cs.iter().map(|c| c.0).sum();
        let taus: Vec<String> = cs.iter().map(|c| format!("{:.4}", c.1)).collect();
        println!("{family:<16} {:>8} {members:>8}  {}", cs.len(), taus.join(" "));
    }
    if !ctx.read_only {
        println!("checkpoint written to {}", out.display());
    }

    ctx.write_json(&json!({
        "checkpoint": out,
        "rows": raw.n_samples(),
        "train_rows": fitted.train.n_samples(),
        "test_rows": fitted.test.n_samples(),
        "retained_features": retained,
        "history": fitted.history,
        "validation": fitted.validation,
        "clusters": fitted.clusters,
        "provenance": ckpt.provenance,
    }))
}
