use std::path::Path;

use anyhow::{Context as _, Result};
use farm_core::features::{csv_bytes, generate_scenario, SyntheticScenario};

use crate::context::Context;

pub fn run(ctx: &Context, out_dir: &Path) -> Result<()> {
    let spec = SyntheticScenario::separated(&ctx.cfg.scenario).context("placing scenario families")?;
    let data = generate_scenario(&spec)?;
    if !ctx.read_only {
        std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    }
    println!("{:<10} {:>6} {:>9}  families", "split", "rows", "features");
    for (name, m) in [("train", &data.train), ("evolved", &data.evolved), ("unseen", &data.unseen)] {
        ctx.write(&out_dir.join(format!("{name}.csv")), &csv_bytes(m)?)?;
        println!("{name:<10} {:>6} {:>9}  {}", m.n_samples(), m.n_features(), m.families().join(" "));
    }
    ctx.write_json(&spec)
}
