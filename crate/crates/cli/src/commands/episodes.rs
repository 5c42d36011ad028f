use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context as _, Result};
use farm_core::eval::run_episodes;
use farm_core::Matrix;

use crate::context::{load_checkpoint, Context};

pub fn run(
    ctx: &Context,
    checkpoint: &Path,
    data: &Path,
    n_way: &[usize],
    k_shot: &[usize],
    episodes: Option<usize>,
) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let data = ctx.load_data(data, true)?;
    let z = ckpt.model.embed(&data)?;
    let by_family: BTreeMap<String, Matrix> = data
        .indices_by_label()
        .into_iter()
        .map(|(f, idx)| (f, z.select_rows(&idx)))
        .collect();

    let mut settings = ctx.cfg.episodes.clone();
    if !n_way.is_empty() {
        settings.n_way = n_way.to_vec();
    }
    if !k_shot.is_empty() {
        settings.k_shot = k_shot.to_vec();
    }
    if let Some(e) = episodes {
        settings.episodes = e;
    }
    if settings.episodes == 1 {
        log::warn!("a single episode has no spread; confidence half-widths are reported as 0");
    }

    let mut results = Vec::new();
    for spec in settings.specs(ctx.cfg.seed) {
        match run_episodes(&by_family, &spec) {
            Ok(r) => results.push(r),
            Err(e) if !ctx.strict => log::warn!("skipping {}-way {}-shot: {e}", spec.n_way, spec.k_shot),
            Err(e) => return Err(e).with_context(|| format!("{}-way {}-shot", spec.n_way, spec.k_shot)),
        }
    }
    if results.is_empty() {
        bail!("no (n_way, k_shot) cell is feasible for {} families", by_family.len());
    }
    println!("{:>6} {:>6} {:>9} {:>9} {:>9}", "n_way", "k_shot", "episodes", "accuracy", "ci95");
    for r in &results {
        println!(
            "{:>6} {:>6} {:>9} {:>9.4} {:>9.4}",
            r.n_way,
            r.k_shot,
            r.per_episode_accuracies.len(),
            r.mean_accuracy,
            r.ci95_halfwidth
        );
    }
    ctx.write_json(&results)
}
