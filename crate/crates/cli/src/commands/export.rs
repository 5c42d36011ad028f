use std::path::Path;

use anyhow::{Context as _, Result};

use crate::context::{load_checkpoint, Context};

pub fn run(ctx: &Context, checkpoint: &Path, data: &Path, out: &Path) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let data = ctx.load_data(data, false)?;
    let z = ckpt.model.embed(&data)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_string(), "family".to_string()];
    header.extend((0..z.cols()).map(|j| format!("z{j}")));
    w.write_record(&header)?;
    for (i, row) in z.iter_rows().enumerate() {
        let mut rec = vec![data.id(i), data.label(i).unwrap_or_default().to_string()];
        rec.extend(row.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().context("flushing csv")?;
    ctx.write(out, &bytes)?;
    println!("{} rows x {} latent coordinates -> {}", z.rows(), z.cols(), out.display());
    Ok(())
}
