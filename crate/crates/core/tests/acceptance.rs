//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on failure.
//!
//! Run a subset with `cargo test -p farm-core --test acceptance -- c3 c6`.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;
use std::time::Instant;

use farm_core::adapt::{classify_fewshot, maybe_retrain, AdaptEventKind, LabelMode};
use farm_core::checkpoint::{Checkpoint, Provenance, StreamSnapshot};
use farm_core::cluster::{assign, dbscan, Assignment, DbscanParams, NOISE};
use farm_core::config::RunConfig;
use farm_core::drift::RetrainContext;
use farm_core::eval::{
    grouped_drift_metrics, label_drift_table_from_counts, predictions_from_verdicts, prf1, run_episodes,
    EpisodeSpec, FamilyDriftCounts, GroupedDriftCounts,
};
use farm_core::features::{generate_scenario, ScenarioData, ScenarioParams, SyntheticScenario};
use farm_core::net::{combined_loss, combined_loss_grad, LossWeights, TripletBatch};
use farm_core::pipeline::{fit_pipeline, FittedPipeline};
use farm_core::{AdaptConfig, Architecture, AutoencoderModel, Cluster, ClusterOrigin, DetectorState, FeatureMatrix, Matrix, Prototype, Verdict};
use proptest::test_runner::{Config as PropConfig, TestCaseError, TestRunner};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

// ---------------------------------------------------------------------------
// 1, 2: metric bookkeeping against printed counts

fn c1_grouped_metrics() -> Check {
    let mut g = GroupedDriftCounts::default();
    g.families.insert("fareit".into(), FamilyDriftCounts::new(333, 0, 37, 130));
    let r = grouped_drift_metrics(&g).map_err(e)?.per_family["fareit"];
    ensure((r.drift_rate - 0.334).abs() <= 0.001, || format!("drift_rate {}", r.drift_rate))?;
    ensure(r.error_rate.abs() <= 0.0005, || format!("error_rate {}", r.error_rate))?;
    ensure((r.accuracy - 0.740).abs() <= 0.001, || format!("accuracy {}", r.accuracy))?;
    Ok(format!(
        "drift {:.3} error {:.3} accuracy {:.3}",
        r.drift_rate, r.error_rate, r.accuracy
    ))
}

fn c2_label_drift_table() -> Check {
    let mut counts = BTreeMap::new();
    counts.insert("hupigon".to_string(), (34, 466));
    let t = label_drift_table_from_counts(&counts).map_err(e)?;
    let h = t.rows["hupigon"];
    ensure(h.drifted * 1000 == 932 * h.samples, || format!("hupigon {}/{}", h.drifted, h.samples))?;
    ensure(h.drift_rate == 0.932, || format!("hupigon rate {}", h.drift_rate))?;
    let mut totals = BTreeMap::new();
    totals.insert("all".to_string(), (634, 3366));
    let t = label_drift_table_from_counts(&totals).map_err(e)?;
    ensure(t.total.drifted * 10000 == 8415 * t.total.samples, || "totals ratio".into())?;
    ensure(t.total.drift_rate == 0.8415, || format!("total rate {}", t.total.drift_rate))?;
    let printed = format!("{:.2}", t.total.drift_rate);
    ensure(printed == "0.84", || format!("printed {printed}"))?;
    Ok(format!("hupigon 0.932, total {} printed {printed}", t.total.drift_rate))
}

// ---------------------------------------------------------------------------
// 3: gradient check

fn c3_gradients() -> Check {
    let arch = Architecture::mirrored(4, &[3], 2, false, 0.0);
    let h = 1e-5;
    let w = LossWeights { lambda_mse: 0.5 };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut accepted, mut kinked, mut worst) = (0usize, 0usize, 0.0f64);
    while accepted < 200 {
        let mut model = AutoencoderModel::new(&arch, 4, rng.random()).map_err(e)?;
        let params: Vec<f64> = (0..model.num_parameters()).map(|_| rng.random_range(-1.0..1.0)).collect();
        model.set_parameters(&params).map_err(e)?;
        let mut m = |r| Matrix::from_vec(r, 4, (0..r * 4).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let batch = TripletBatch::new(m(3), m(3), m(3), 1.0).map_err(e)?;
        let recon = m(4);
        let (_, grad) = combined_loss_grad(&model, &batch, &recon, w).map_err(e)?;
        let f = |p: &[f64]| {
            let mut probe = model.clone();
            probe.set_parameters(p).unwrap();
            combined_loss(&probe, &batch, &recon, w).unwrap()
        };
        let f0 = f(&params);
        let mut draw_worst = 0.0f64;
        let mut smooth = true;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            let fp = f(&p);
            p[i] = params[i] - h;
            let fm = f(&p);
            // a relu or hinge kink inside [-h, h] makes the one-sided slopes disagree
            let (fwd, bwd) = ((fp - f0) / h, (f0 - fm) / h);
            if (fwd - bwd).abs() > 1e-3 * (1.0 + fwd.abs().max(bwd.abs())) {
                smooth = false;
                break;
            }
            let fd = (fp - fm) / (2.0 * h);
            let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-6);
            draw_worst = draw_worst.max(rel);
        }
        if !smooth {
            kinked += 1;
            continue;
        }
        ensure(draw_worst <= 1e-4, || format!("draw {accepted}: relative error {draw_worst:.3e}"))?;
        worst = worst.max(draw_worst);
        accepted += 1;
    }
    Ok(format!("200 draws, max relative error {worst:.2e} ({kinked} draws at a kink redrawn)"))
}

// ---------------------------------------------------------------------------
// 4: DBSCAN against a union-find oracle

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += (a[k] - b[k]) * (a[k] - b[k]);
    }
    s.sqrt()
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Core points joined by union-find; each border point joins the adjacent
/// component whose smallest core index is lowest.
fn dbscan_oracle(x: &Matrix, eps: f64, min_pts: usize) -> Vec<i64> {
    let n = x.rows();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| euclid(x.row(i), x.row(j)) <= eps).collect())
        .collect();
    let core: Vec<bool> = adj.iter().map(|a| a.len() >= min_pts).collect();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in (0..n).filter(|&i| core[i]) {
        for &j in adj[i].iter().filter(|&&j| core[j]) {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            parent[a.max(b)] = a.min(b);
        }
    }
    let root: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    let mut labels = vec![NOISE; n];
    for i in 0..n {
        if core[i] {
            labels[i] = root[i] as i64;
        } else if let Some(r) = adj[i].iter().filter(|&&j| core[j]).map(|&j| root[j]).min() {
            labels[i] = r as i64;
        }
    }
    labels
}

/// Relabels clusters by first appearance so partitions compare directly.
fn canonical(labels: &[i64]) -> Vec<i64> {
    let mut map = BTreeMap::new();
    labels
        .iter()
        .map(|&l| {
            if l == NOISE {
                NOISE
            } else {
                let next = map.len() as i64;
                *map.entry(l).or_insert(next)
            }
        })
        .collect()
}

fn c4_dbscan_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut total_clusters = 0;
    for inst in 0..50 {
        let n = rng.random_range(20..=300);
        let d = rng.random_range(2..=8);
        let blobs = rng.random_range(1..=5);
        let centers: Vec<Vec<f64>> = (0..blobs).map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            if rng.random_bool(0.15) {
                data.extend((0..d).map(|_| rng.random_range(-6.0..6.0)));
            } else {
                let c = &centers[rng.random_range(0..blobs)];
                data.extend(c.iter().map(|v| v + rng.random_range(-1.0..1.0)));
            }
        }
        let x = Matrix::from_vec(n, d, data).map_err(e)?;
        let eps = rng.random_range(0.3..2.5) * (d as f64).sqrt() / 2.0;
        let min_pts = rng.random_range(1..=12);
        let got = dbscan(&x, &DbscanParams::new(eps, min_pts).map_err(e)?).labels;
        let want = dbscan_oracle(&x, eps, min_pts);
        ensure(canonical(&got) == canonical(&want), || {
            format!("instance {inst}: n={n} d={d} eps={eps:.3} min_pts={min_pts} differs")
        })?;
        total_clusters += want.iter().filter(|&&l| l != NOISE).collect::<BTreeSet<_>>().len();
    }
    Ok(format!("50 instances agree ({total_clusters} clusters total)"))
}

// ---------------------------------------------------------------------------
// 5: nearest prototype against an exhaustive scan

fn c5_nearest_prototype() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let input = 6;
    let model = AutoencoderModel::new(&Architecture::mirrored(input, &[8], 3, true, 0.2), input, 5)
        .map_err(e)?
        .with_preprocess(farm_core::PreprocessState {
            input_width: input,
            retained_indices: (0..input).collect(),
            quantile_maps: vec![vec![0.0, 1.0]; input],
            variance_floor: 0.0,
        })
        .map_err(e)?;
    let prototypes: Vec<Prototype> = (0..10)
        .map(|i| Prototype {
            family: format!("p{i}"),
            vector: (0..3).map(|_| rng.random_range(-2.0..2.0)).collect(),
            support_ids: Vec::new(),
            created_at: 0,
        })
        .collect();
    for q in 0..1000 {
        let query: Vec<f64> = (0..input).map(|_| rng.random_range(0.0..1.0)).collect();
        let got = classify_fewshot(&model, &prototypes, &query).map_err(e)?;
        let z = model.embed_row(&query).map_err(e)?;
        let (mut best, mut best_d) = (0, f64::INFINITY);
        for (i, p) in prototypes.iter().enumerate() {
            let mut dist = 0.0;
            for k in 0..z.len() {
                dist += (z[k] - p.vector[k]).powi(2);
            }
            if dist < best_d {
                best = i;
                best_d = dist;
            }
        }
        ensure(got == prototypes[best].family, || format!("query {q}: {got} vs {}", prototypes[best].family))?;
    }
    Ok("1000 queries match".into())
}

// ---------------------------------------------------------------------------
// Shared synthetic scenario fits

const SEEDS: [u64; 3] = [1, 2, 3];

fn scenario_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig {
        seed,
        ..RunConfig::default()
    };
    cfg.model.hidden = vec![32];
    cfg.model.latent_dim = 8;
    cfg.model.dropout = 0.1;
    cfg.train.epochs = 30;
    cfg.train.learning_rate = 3e-3;
    cfg
}

struct Fit {
    seed: u64,
    cfg: RunConfig,
    data: ScenarioData,
    fitted: FittedPipeline,
}

fn scenario_fits() -> &'static [Fit] {
    static FITS: OnceLock<Vec<Fit>> = OnceLock::new();
    FITS.get_or_init(|| {
        SEEDS
            .iter()
            .map(|&seed| {
                let params = ScenarioParams {
                    seed,
                    ..ScenarioParams::default()
                };
                let data = generate_scenario(&SyntheticScenario::separated(&params).unwrap()).unwrap();
                let cfg = scenario_config(seed);
                let fitted = fit_pipeline(&data.train, &cfg).unwrap();
                Fit { seed, cfg, data, fitted }
            })
            .collect()
    })
}

fn family_f1(preds: &[(String, Option<String>)], family: &str) -> Result<f64, String> {
    Ok(prf1(preds).map_err(e)?.per_family.get(family).map_or(0.0, |p| p.f1))
}

fn peek_preds(state: &DetectorState, rows: &FeatureMatrix) -> Result<Vec<(String, Option<String>)>, String> {
    let verdicts = state.peek_batch(rows).map_err(e)?;
    Ok(predictions_from_verdicts(rows.require_labels().map_err(e)?, &verdicts))
}

/// Rows of each family split into (first `n`, rest), in the original order.
fn head_tail(m: &FeatureMatrix, n: usize) -> (FeatureMatrix, FeatureMatrix) {
    let (mut head, mut tail) = (Vec::new(), Vec::new());
    for idx in m.indices_by_label().values() {
        head.extend_from_slice(&idx[..n.min(idx.len())]);
        tail.extend_from_slice(&idx[n.min(idx.len())..]);
    }
    head.sort_unstable();
    tail.sort_unstable();
    (m.subset(&head), m.subset(&tail))
}

/// Interleaves families round-robin so the stream mixes them.
fn interleave(m: &FeatureMatrix) -> FeatureMatrix {
    let groups: Vec<Vec<usize>> = m.indices_by_label().into_values().collect();
    let longest = groups.iter().map(Vec::len).max().unwrap_or(0);
    let order: Vec<usize> = (0..longest).flat_map(|i| groups.iter().filter_map(move |g| g.get(i).copied())).collect();
    m.subset(&order)
}

fn c6_label_drift() -> Check {
    let mut lines = Vec::new();
    let (mut f1_test, mut drift, mut proto_f1, mut post_f1) = (0.0, 0.0, BTreeMap::new(), BTreeMap::new());
    for fit in scenario_fits() {
        let state = fit.fitted.detector(&fit.cfg, false).map_err(e)?;
        let test_f1 = prf1(&peek_preds(&state, &fit.fitted.test)?).map_err(e)?.macro_f1;

        let unseen_verdicts = state.peek_batch(&fit.data.unseen).map_err(e)?;
        let rate = unseen_verdicts.iter().filter(|v| v.is_drifted()).count() as f64 / unseen_verdicts.len() as f64;

        let (stream, held) = head_tail(&fit.data.unseen, 200);
        let mut state = state;
        state.observe_batch(&interleave(&stream)).map_err(e)?;
        let eval = FeatureMatrix::concat(&[&held, &fit.fitted.test]).map_err(e)?;
        let novel: Vec<String> = fit.data.unseen.families();
        let preds = peek_preds(&state, &eval)?;
        let before: Vec<f64> = novel.iter().map(|f| family_f1(&preds, f)).collect::<Result<_, _>>()?;

        let mut state = state
            .with_retraining(RetrainContext {
                train_raw: fit.fitted.train.clone(),
                train: fit.cfg.train_config(),
            })
            .map_err(e)?;
        let mut retrained = 0;
        while !maybe_retrain(&mut state).map_err(e)?.is_empty() {
            retrained += 1;
        }
        let preds = peek_preds(&state, &eval)?;
        let after: Vec<f64> = novel.iter().map(|f| family_f1(&preds, f)).collect::<Result<_, _>>()?;

        lines.push(format!(
            "seed {}: test F1 {test_f1:.3}, unseen drift {rate:.3}, prototype F1 {:?}, retrained ({retrained}) F1 {:?}",
            fit.seed,
            before.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>(),
            after.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()
        ));
        f1_test += test_f1;
        drift += rate;
        for (i, f) in novel.iter().enumerate() {
            *proto_f1.entry(f.clone()).or_insert(0.0) += before[i];
            *post_f1.entry(f.clone()).or_insert(0.0) += after[i];
        }
    }
    let k = SEEDS.len() as f64;
    let f1_test = f1_test / k;
    let drift = drift / k;
    proto_f1.values_mut().for_each(|v| *v /= k);
    post_f1.values_mut().for_each(|v| *v /= k);
    let proto_mean = proto_f1.values().sum::<f64>() / proto_f1.len() as f64;
    let post_mean = post_f1.values().sum::<f64>() / post_f1.len() as f64;
    let summary = format!(
        "test macro F1 {f1_test:.3}, unseen drift {drift:.3}, prototype F1 {proto_f1:.3?}, retrained F1 {post_f1:.3?}\n      {}",
        lines.join("\n      ")
    );
    ensure(f1_test >= 0.95, || format!("test macro F1 {f1_test:.3} < 0.95; {summary}"))?;
    ensure(drift >= 0.90, || format!("unseen drift rate {drift:.3} < 0.90; {summary}"))?;
    ensure(proto_f1.values().all(|&v| v >= 0.90), || format!("prototype F1 below 0.90; {summary}"))?;
    ensure(post_mean >= proto_mean, || format!("retrained F1 {post_mean:.3} < prototype F1 {proto_mean:.3}; {summary}"))?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// 7: covariate drift adaptation

fn c7_covariate() -> Check {
    let mut lines = Vec::new();
    let mut gain = 0.0;
    for fit in scenario_fits() {
        let evolved = &fit.data.evolved;
        let (mut stream_idx, mut eval_idx) = (Vec::new(), Vec::new());
        for idx in evolved.indices_by_label().values() {
            for (j, &i) in idx.iter().enumerate() {
                if j % 2 == 0 { stream_idx.push(i) } else { eval_idx.push(i) }
            }
        }
        stream_idx.sort_unstable();
        eval_idx.sort_unstable();
        let (stream, eval) = (evolved.subset(&stream_idx), evolved.subset(&eval_idx));

        let mut cfg = fit.cfg.clone();
        cfg.adapt.label_mode = LabelMode::CovariateDrift;
        let mut state = fit.fitted.detector(&cfg, false).map_err(e)?;
        let base = prf1(&peek_preds(&state, &eval)?).map_err(e)?.macro_f1;
        let base_drift = state.peek_batch(&eval).map_err(e)?.iter().filter(|v| v.is_drifted()).count();
        state.observe_batch(&interleave(&stream)).map_err(e)?;
        let adapted = prf1(&peek_preds(&state, &eval)?).map_err(e)?.macro_f1;
        let protos = state.prototypes().len();
        lines.push(format!(
            "seed {}: no adaptation {base:.3} (drifted {base_drift}/{}), adapted {adapted:.3} ({protos} linked prototypes)",
            fit.seed,
            eval.n_samples()
        ));
        gain += adapted - base;
    }
    let gain = gain / SEEDS.len() as f64;
    let summary = format!("mean macro F1 gain {:+.1} points\n      {}", gain * 100.0, lines.join("\n      "));
    ensure(gain >= 0.05, || format!("gain below 5 points; {summary}"))?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// 8: episodic monotonicity

fn c8_episodes() -> Check {
    let seed = 8;
    let names: Vec<String> = (0..8).map(|i| format!("fam-{i}")).collect();
    let params = ScenarioParams {
        known: names,
        unseen: Vec::new(),
        separation_factor: 3.0,
        seed,
        ..ScenarioParams::default()
    };
    let data = generate_scenario(&SyntheticScenario::separated(&params).map_err(e)?).map_err(e)?;
    let cfg = scenario_config(seed);
    let fitted = fit_pipeline(&data.train, &cfg).map_err(e)?;
    let z = fitted.model.embed(&fitted.test).map_err(e)?;
    let by_family: BTreeMap<String, Matrix> = fitted
        .test
        .indices_by_label()
        .into_iter()
        .map(|(f, idx)| (f, z.select_rows(&idx)))
        .collect();
    let mut acc = BTreeMap::new();
    for n_way in [3, 5] {
        for k_shot in [1, 5, 10] {
            let spec = EpisodeSpec {
                n_way,
                k_shot,
                query_per_class: 15,
                episodes: 600,
                seed,
            };
            acc.insert((n_way, k_shot), run_episodes(&by_family, &spec).map_err(e)?);
        }
    }
    let a = |n, k| acc[&(n, k)].mean_accuracy;
    let table = acc
        .iter()
        .map(|((n, k), r)| format!("{n}-way {k}-shot {:.4}±{:.4}", r.mean_accuracy, r.ci95_halfwidth))
        .collect::<Vec<_>>()
        .join(", ");
    for n in [3, 5] {
        ensure(a(n, 1) < a(n, 5) && a(n, 5) <= a(n, 10), || format!("{n}-way not monotone in K: {table}"))?;
    }
    for k in [1, 5, 10] {
        ensure(a(3, k) > a(5, k), || format!("3-way not above 5-way at K={k}: {table}"))?;
    }
    Ok(table)
}

// ---------------------------------------------------------------------------
// 9: determinism and persistence

fn small_fit(seed: u64) -> Result<(RunConfig, ScenarioData, FittedPipeline), String> {
    let params = ScenarioParams {
        samples_per_family: 150,
        seed,
        ..ScenarioParams::default()
    };
    let data = generate_scenario(&SyntheticScenario::separated(&params).map_err(e)?).map_err(e)?;
    let mut cfg = scenario_config(seed);
    cfg.train.epochs = 20;
    cfg.adapt.retrain_trigger = 30;
    let fitted = fit_pipeline(&data.train, &cfg).map_err(e)?;
    Ok((cfg, data, fitted))
}

fn checkpoint_of(cfg: &RunConfig, f: &FittedPipeline) -> Checkpoint {
    Checkpoint {
        model: f.model.clone(),
        clusters: f.clusters.clone(),
        cluster_config: cfg.cluster.clone(),
        train_config: cfg.train_config(),
        provenance: Provenance::new(1_700_000_000, cfg.seed, farm_core::checkpoint::data_fingerprint(&f.train)),
    }
}

fn c9_determinism() -> Check {
    let (cfg, data, a) = small_fit(21)?;
    let (_, _, b) = small_fit(21)?;
    let bytes_a = checkpoint_of(&cfg, &a).to_bytes().map_err(e)?;
    let bytes_b = checkpoint_of(&cfg, &b).to_bytes().map_err(e)?;
    ensure(bytes_a == bytes_b, || "checkpoints from identical runs differ".into())?;

    let back = Checkpoint::from_bytes(&bytes_a).map_err(e)?;
    let z0 = a.model.embed(&data.evolved).map_err(e)?;
    let z1 = back.model.embed(&data.evolved).map_err(e)?;
    ensure(
        z0.as_slice().iter().zip(z1.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()),
        || "round-trip changed encode outputs".into(),
    )?;
    ensure(
        back.clusters.iter().zip(&a.clusters).all(|(x, y)| x.threshold.to_bits() == y.threshold.to_bits()),
        || "round-trip changed thresholds".into(),
    )?;

    // stream with retraining enabled, interrupted halfway through a snapshot file
    let stream = FeatureMatrix::concat(&[&interleave(&data.unseen), &data.evolved]).map_err(e)?;
    let full_state = a.detector(&cfg, true).map_err(e)?;
    let mut uninterrupted = full_state.clone();
    let whole = uninterrupted.observe_batch(&stream).map_err(e)?;
    let cut = stream.n_samples() / 2;
    let first: Vec<usize> = (0..cut).collect();
    let second: Vec<usize> = (cut..stream.n_samples()).collect();
    let mut part = full_state;
    let mut resumed = part.observe_batch(&stream.subset(&first)).map_err(e)?;
    let dir = tempfile::tempdir().map_err(e)?;
    let path = dir.path().join("snapshot.json");
    StreamSnapshot::new(part, cut as u64).save(&path).map_err(e)?;
    let snap = StreamSnapshot::load(&path).map_err(e)?;
    ensure(snap.rows_consumed == cut as u64, || "rows_consumed mismatch".into())?;
    let mut restored = snap.state;
    resumed.extend(restored.observe_batch(&stream.subset(&second)).map_err(e)?);
    ensure(resumed == whole, || "resumed verdicts differ from the uninterrupted run".into())?;
    ensure(restored == uninterrupted, || "resumed final state differs".into())?;
    let count = |kind: AdaptEventKind| whole.iter().flat_map(|(_, ev)| ev).filter(|ev| ev.kind == kind).count();
    let promoted = count(AdaptEventKind::PrototypePromoted);
    let retrained = count(AdaptEventKind::RetrainCompleted);
    ensure(promoted >= 2 && retrained >= 1, || {
        format!("stream too quiet to exercise resume: {promoted} promotions, {retrained} retrains")
    })?;
    Ok(format!(
        "checkpoint {} bytes identical; {} verdicts, {promoted} promotions and {retrained} retrains replayed exactly",
        bytes_a.len(),
        whole.len()
    ))
}

// ---------------------------------------------------------------------------
// 10: invariants (the full set lives in tests/properties.rs)

fn run_prop<S: Strategy>(name: &str, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    let mut runner = TestRunner::new(PropConfig {
        cases: 256,
        failure_persistence: None,
        ..PropConfig::default()
    });
    runner.run(&strategy, test).map_err(|err| format!("{name}: {err}"))
}

fn c10_invariants() -> Check {
    run_prop(
        "threshold-monotone verdicts",
        ((0.0f64..1.0, 0.0f64..1.0), prop::collection::vec(0.0f64..0.5, 3)),
        |(z, bump)| {
            let base = vec![
                common::trained("a", [0.2, 0.2], 0.02),
                common::trained("b", [0.7, 0.7], 0.05),
                common::trained("c", [0.2, 0.9], 0.01),
            ];
            let raised: Vec<Cluster> = base
                .iter()
                .zip(&bump)
                .map(|(c, b)| Cluster {
                    threshold: c.threshold + b,
                    ..c.clone()
                })
                .collect();
            let lo = common::identity_detector(base, AdaptConfig::default()).peek(&[z.0, z.1]).unwrap();
            let hi = common::identity_detector(raised, AdaptConfig::default()).peek(&[z.0, z.1]).unwrap();
            prop_assert!(lo.is_drifted() || !hi.is_drifted());
            Ok(())
        },
    )?;
    run_prop(
        "buffer-count conservation",
        prop::collection::vec((0u8..5, 0u8..5, any::<bool>()), 1..150),
        |pts| {
            let cfg = AdaptConfig {
                buffer_min_cluster: 4,
                ..AdaptConfig::default()
            };
            let mut s = common::identity_detector(vec![common::trained("k", [0.1, 0.1], 0.01)], cfg);
            let (mut drifted, mut consumed) = (0, 0);
            for (i, (x, y, jitter)) in pts.into_iter().enumerate() {
                let off = if jitter { 0.01 * (i % 3) as f64 } else { 0.0 };
                let (v, ev): (Verdict, _) = s.observe(&i.to_string(), &[x as f64 / 4.0 + off, y as f64 / 4.0], None).unwrap();
                drifted += v.is_drifted() as usize;
                consumed += ev
                    .iter()
                    .filter(|e| e.kind == AdaptEventKind::PrototypePromoted)
                    .map(|e| e.samples)
                    .sum::<usize>();
                prop_assert_eq!(s.buffer().len(), drifted - consumed);
            }
            Ok(())
        },
    )?;
    run_prop(
        "scale-consistency of assign",
        (
            prop::collection::vec(-3.0f64..3.0, 12),
            prop::collection::vec(0.0f64..4.0, 4),
            prop::collection::vec(-3.0f64..3.0, 3),
            0.1f64..10.0,
        ),
        |(cents, taus, z, s)| {
            let mk = |scale: f64| -> Vec<Cluster> {
                (0..4)
                    .map(|i| Cluster {
                        family: format!("f{i}"),
                        centroid: cents[3 * i..3 * i + 3].iter().map(|v| v * scale).collect(),
                        threshold: taus[i] * scale * scale,
                        member_count: 1,
                        origin: ClusterOrigin::Trained,
                    })
                    .collect()
            };
            let d: Vec<f64> = (0..4).map(|i| euclid(&z, &cents[3 * i..3 * i + 3]).powi(2)).collect();
            let mut sorted = d.clone();
            sorted.sort_by(f64::total_cmp);
            let best = d.iter().position(|&v| v == sorted[0]).unwrap();
            if sorted[1] - sorted[0] < 1e-9 || (d[best] - taus[best]).abs() < 1e-9 {
                return Ok(());
            }
            let key = |a: Assignment| match a {
                Assignment::Accepted { cluster, .. } => (true, cluster),
                Assignment::Drifted { nearest, .. } => (false, nearest),
            };
            let zs: Vec<f64> = z.iter().map(|v| v * s).collect();
            prop_assert_eq!(key(assign(&z, &mk(1.0)).unwrap()), key(assign(&zs, &mk(s)).unwrap()));
            Ok(())
        },
    )?;
    run_prop(
        "grouped-metrics identity",
        (0usize..1000, 0usize..1000, 0usize..1000, 0usize..1000),
        |(a, b, c, d)| {
            let counts = FamilyDriftCounts::new(a, b, c, d);
            if a + b == 0 {
                return Ok(());
            }
            let r = counts.rates().unwrap();
            let rhs = (1.0 - r.drift_rate) * (1.0 - r.error_rate) + c as f64 / counts.total() as f64;
            prop_assert!((r.accuracy - rhs).abs() < 1e-12);
            Ok(())
        },
    )?;
    // CI shrinkage over repeated seeds on fixed synthetic families
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let fams: BTreeMap<String, Matrix> = (0..6)
        .map(|f| {
            let rows: Vec<[f64; 2]> = (0..40)
                .map(|_| [f as f64 + rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9)])
                .collect();
            (format!("f{f}"), Matrix::from_rows(&rows).unwrap())
        })
        .collect();
    let mut narrower = 0;
    for seed in 0..20 {
        let half = |episodes| {
            run_episodes(
                &fams,
                &EpisodeSpec {
                    n_way: 3,
                    k_shot: 1,
                    query_per_class: 5,
                    episodes,
                    seed,
                },
            )
            .unwrap()
            .ci95_halfwidth
        };
        narrower += (half(600) < half(150)) as usize;
    }
    ensure(narrower >= 19, || format!("CI shrinkage in only {narrower}/20 seeds"))?;
    Ok(format!("4 properties x 256 cases; CI shrinks in {narrower}/20 seeds"))
}

fn main() {
    let criteria: [(&str, &str, fn() -> Check); 10] = [
        ("c1", "grouped drift metrics vs printed counts", c1_grouped_metrics),
        ("c2", "label-drift table arithmetic", c2_label_drift_table),
        ("c3", "combined loss gradients vs finite differences", c3_gradients),
        ("c4", "dbscan vs union-find oracle", c4_dbscan_oracle),
        ("c5", "few-shot classification vs exhaustive scan", c5_nearest_prototype),
        ("c6", "label-drift scenario end to end", c6_label_drift),
        ("c7", "covariate-drift adaptation gain", c7_covariate),
        ("c8", "episodic accuracy monotonicity", c8_episodes),
        ("c9", "determinism and persistence", c9_determinism),
        ("c10", "invariant properties", c10_invariants),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| f == id) {
            continue;
        }
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {id:<4} {name} [{secs:.1}s]: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {id:<4} {name} [{secs:.1}s]: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
