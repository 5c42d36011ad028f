use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use farm_core::checkpoint::data_fingerprint;
use farm_core::drift::RetrainContext;
use farm_core::features::{split, CsvLayout};
use farm_core::{AdaptEventKind, Checkpoint, DetectorState, FarmError, StreamSnapshot};
use serde_json::json;

use crate::context::{load_checkpoint, Context};

pub struct Args {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub snapshot: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub train_data: Option<PathBuf>,
}

/// Training split of the original data, for retraining during the stream.
fn retrain_context(ctx: &Context, ckpt: &Checkpoint, path: &Path) -> Result<RetrainContext> {
    let raw = ctx.load_data(path, true)?;
    if data_fingerprint(&raw) != ckpt.provenance.data_fingerprint {
        let msg = format!("{} does not match the data the checkpoint was trained on", path.display());
        if ctx.strict {
            bail!(msg);
        }
        log::warn!("{msg}");
    }
    let (train_raw, _) = split(&raw, ctx.cfg.data.train_fraction, ckpt.provenance.seed)?;
    Ok(RetrainContext {
        train_raw,
        train: ckpt.train_config.clone(),
    })
}

pub fn run(ctx: &Context, args: &Args) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let (mut state, skip): (DetectorState, u64) = match &args.resume {
        Some(p) => {
            let snap = StreamSnapshot::load(p).with_context(|| format!("loading snapshot {}", p.display()))?;
            if args.train_data.is_some() {
                log::warn!("--train-data ignored: the snapshot carries its own retraining data");
            }
            (snap.state, snap.rows_consumed)
        }
        None => {
            let state = ctx.detector(&ckpt)?;
            let state = match &args.train_data {
                Some(p) => state.with_retraining(retrain_context(ctx, &ckpt, p)?)?,
                None => state,
            };
            (state, 0)
        }
    };

    let columns = ctx.columns_for(&args.data, false)?;
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(&args.data)
        .with_context(|| format!("opening {}", args.data.display()))?;
    let header = reader.headers()?.clone();
    let layout = CsvLayout::from_header(&header, &columns)?;
    if layout.n_features() != state.model().raw_dim() {
        bail!(
            "{} has {} feature columns, the checkpoint expects {}",
            args.data.display(),
            layout.n_features(),
            state.model().raw_dim()
        );
    }

    let mut lines: Vec<serde_json::Value> = Vec::new();
    let (mut rows, mut classified, mut drifted, mut skipped) = (0u64, 0usize, 0usize, 0usize);
    let mut events: BTreeMap<AdaptEventKind, usize> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let row = i as u64 + 1;
        rows = row;
        if row <= skip {
            continue;
        }
        let parsed = record
            .map_err(FarmError::from)
            .and_then(|r| layout.parse(&r, row as usize));
        let parsed = match parsed {
            Ok(p) => p,
            Err(e) if !ctx.strict => {
                log::warn!("row {row} skipped: {e}");
                lines.push(json!({ "row": row, "skipped": e.to_string() }));
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e).with_context(|| format!("stream row {row}")),
        };
        let id = parsed.id.unwrap_or_else(|| format!("row-{row}"));
        let (verdict, evs) = state
            .observe(&id, &parsed.features, parsed.label.as_deref())
            .with_context(|| format!("stream row {row}"))?;
        if verdict.is_drifted() {
            drifted += 1;
        } else {
            classified += 1;
        }
        lines.push(json!({ "row": row, "id": id, "verdict": verdict }));
        for ev in evs {
            log::info!("row {row}: {:?} {} ({} samples)", ev.kind, ev.family, ev.samples);
            *events.entry(ev.kind).or_default() += 1;
            lines.push(json!({ "row": row, "event": ev }));
        }
    }
    if rows < skip {
        log::warn!("stream has {rows} rows but the snapshot had already consumed {skip}");
    }

    let snapshot = args
        .snapshot
        .clone()
        .unwrap_or_else(|| args.checkpoint.with_extension("snapshot.json"));
    let snap = StreamSnapshot::new(state, rows.max(skip));
    ctx.write(&snapshot, &serde_json::to_vec(&snap)?)?;
    if let Some(path) = &ctx.json_out {
        let mut out = Vec::new();
        for l in &lines {
            serde_json::to_writer(&mut out, l)?;
            out.push(b'\n');
        }
        ctx.write(path, &out)?;
    }

    println!(
        "rows {} (resumed after {skip}), classified {classified}, drifted {drifted}, skipped {skipped}",
        rows.saturating_sub(skip)
    );
    for (kind, n) in &events {
        println!("{kind:?}: {n}");
    }
    let state = &snap.state;
    println!(
        "prototypes {}, buffered {}, clusters {}",
        state.prototypes().len(),
        state.buffer().len(),
        state.clusters().len()
    );
    if !ctx.read_only {
        println!("snapshot written to {}", snapshot.display());
    }
    Ok(())
}
