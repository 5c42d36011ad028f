use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Result};
use farm_core::eval::{grouped_drift_metrics, label_drift_table, predictions_from_verdicts, prf1, GroupedDriftCounts};
use farm_core::Verdict;

use crate::context::{load_checkpoint, Context};
use crate::EvalMode;

pub fn run(ctx: &Context, checkpoint: &Path, data: &Path, mode: EvalMode) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let data = ctx.load_data(data, true)?;
    let state = ctx.detector(&ckpt)?;
    let verdicts = state.peek_batch(&data)?;
    let truth = data.require_labels()?;
    match mode {
        EvalMode::Testing => {
            let known = state.known_families();
            if let Some(u) = truth.iter().find(|t| !known.contains(*t)) {
                bail!("family '{u}' is not known to the checkpoint; testing mode needs trained families");
            }
            let report = prf1(&predictions_from_verdicts(truth, &verdicts))?;
            print!("{}", report.to_table());
            ctx.write_json(&report)
        }
        EvalMode::Evolved => {
            let report = grouped_drift_metrics(&GroupedDriftCounts::from_verdicts(truth, &verdicts)?)?;
            print!("{}", report.to_table());
            ctx.write_json(&report)
        }
        EvalMode::Unseen => {
            let mut groups: BTreeMap<String, Vec<Verdict>> = BTreeMap::new();
            for (t, v) in truth.iter().zip(verdicts) {
                groups.entry(t.clone()).or_default().push(v);
            }
            let table = label_drift_table(&groups)?;
            print!("{}", table.to_table());
            ctx.write_json(&table)
        }
    }
}
