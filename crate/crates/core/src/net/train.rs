use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backprop::Pass;
use super::{Architecture, AutoencoderModel, LossWeights, Objective, TripletBatch};
use crate::error::{FarmError, Result};
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Triplets per mini-batch; one epoch is `ceil(n_train / batch_triplets)` batches.
    pub batch_triplets: usize,
    pub learning_rate: f64,
    pub margin: f64,
    pub loss_weights: LossWeights,
    pub seed: u64,
    /// Stop after this many epochs without improvement of the epoch loss.
    pub early_stop_patience: Option<usize>,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_triplets: 64,
            learning_rate: 1e-3,
            margin: 1.0,
            loss_weights: LossWeights::default(),
            seed: 0,
            early_stop_patience: None,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_triplets == 0 {
            return Err(FarmError::InvalidArgument("epochs and batch_triplets must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(FarmError::InvalidArgument("learning_rate must be > 0".into()));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(FarmError::InvalidArgument("margin must be > 0".into()));
        }
        if !(self.loss_weights.lambda_mse >= 0.0 && self.loss_weights.lambda_mse.is_finite()) {
            return Err(FarmError::InvalidArgument("lambda_mse must be finite and >= 0".into()));
        }
        if self.early_stop_patience == Some(0) {
            return Err(FarmError::InvalidArgument("early_stop_patience must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub triplet: f64,
    pub mse: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: AutoencoderModel,
    pub history: Vec<EpochStats>,
}

/// Row indices of sampled (anchor, positive, negative) triplets.
pub type TripletIndices = Vec<(usize, usize, usize)>;

struct Sampler {
    labels: Vec<usize>,
    groups: Vec<Vec<usize>>,
}

impl Sampler {
    fn new(data: &FeatureMatrix) -> Result<Self> {
        let by_label = data.indices_by_label();
        if data.labels.is_none() {
            return Err(FarmError::InvalidArgument("triplet sampling needs labels".into()));
        }
        if by_label.len() < 2 {
            return Err(FarmError::InvalidArgument(format!(
                "triplet sampling needs at least 2 classes, found {}",
                by_label.len()
            )));
        }
        if let Some((l, _)) = by_label.iter().find(|(_, v)| v.len() < 2) {
            return Err(FarmError::InvalidArgument(format!("class '{l}' has fewer than 2 samples")));
        }
        let mut labels = vec![0; data.n_samples()];
        let groups: Vec<Vec<usize>> = by_label.into_values().collect();
        for (g, rows) in groups.iter().enumerate() {
            for &r in rows {
                labels[r] = g;
            }
        }
        Ok(Self { labels, groups })
    }

    fn draw(&self, count: usize, rng: &mut ChaCha8Rng) -> TripletIndices {
        let n = self.labels.len();
        (0..count)
            .map(|_| {
                let a = rng.random_range(0..n);
                let g = &self.groups[self.labels[a]];
                // uniform over same-class rows other than the anchor
                let mut p = g[rng.random_range(0..g.len() - 1)];
                if p == a {
                    p = *g.last().unwrap();
                }
                // uniform over all rows of other classes
                let others = n - g.len();
                let mut k = rng.random_range(0..others);
                let mut neg = 0;
                for (gi, rows) in self.groups.iter().enumerate() {
                    if gi == self.labels[a] {
                        continue;
                    }
                    if k < rows.len() {
                        neg = rows[k];
                        break;
                    }
                    k -= rows.len();
                }
                (a, p, neg)
            })
            .collect()
    }
}

/// Uniformly sampled triplets (no hard mining).
pub fn sample_triplets(data: &FeatureMatrix, count: usize, margin: f64, seed: u64) -> Result<TripletBatch> {
    let sampler = Sampler::new(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = sampler.draw(count, &mut rng);
    let a: Vec<usize> = idx.iter().map(|t| t.0).collect();
    let p: Vec<usize> = idx.iter().map(|t| t.1).collect();
    let n: Vec<usize> = idx.iter().map(|t| t.2).collect();
    TripletBatch::new(
        data.data.select_rows(&a),
        data.data.select_rows(&p),
        data.data.select_rows(&n),
        margin,
    )
}

struct Adam {
    cfg: AdamConfig,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize, lr: f64, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.cfg.epsilon);
        }
    }
}

/// Trains a fresh model on labeled, preprocessed rows.
pub fn train(data: &FeatureMatrix, arch: &Architecture, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = AutoencoderModel::with_rng(arch, data.n_features(), &mut rng)?;
    fit(model, data, cfg, rng)
}

/// Continues training from an existing model (warm start).
pub fn train_with_init(model: AutoencoderModel, data: &FeatureMatrix, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if model.input_dim() != data.n_features() {
        return Err(FarmError::DimensionMismatch {
            context: "training data width",
            expected: model.input_dim(),
            actual: data.n_features(),
        });
    }
    fit(model, data, cfg, ChaCha8Rng::seed_from_u64(cfg.seed))
}

fn fit(mut model: AutoencoderModel, data: &FeatureMatrix, cfg: &TrainConfig, mut rng: ChaCha8Rng) -> Result<TrainOutcome> {
    let sampler = Sampler::new(data)?;
    let n = data.n_samples();
    let batches = n.div_ceil(cfg.batch_triplets);
    let mut params = model.parameters();
    let mut adam = Adam::new(params.len(), cfg.learning_rate, cfg.adam);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    let nt = cfg.batch_triplets;
    let triplets: Vec<(usize, usize, usize)> = (0..nt).map(|i| (i, nt + i, 2 * nt + i)).collect();
    let recon: Vec<usize> = (0..3 * nt).collect();
    let obj = Objective {
        triplets: &triplets,
        margin: cfg.margin,
        recon_rows: &recon,
        lambda: cfg.loss_weights.lambda_mse,
    };

    for epoch in 0..cfg.epochs {
        let mut acc = EpochStats {
            epoch,
            triplet: 0.0,
            mse: 0.0,
            total: 0.0,
        };
        for _ in 0..batches {
            let idx = sampler.draw(nt, &mut rng);
            let rows: Vec<usize> = idx
                .iter()
                .map(|t| t.0)
                .chain(idx.iter().map(|t| t.1))
                .chain(idx.iter().map(|t| t.2))
                .collect();
            let x = data.data.select_rows(&rows);
            let eval = model.evaluate(&x, &obj, Pass::Train { dropout: Some(&mut rng) }, true)?;
            if !eval.parts.total.is_finite() {
                return Err(FarmError::Diverged {
                    epoch,
                    loss: eval.parts.total,
                });
            }
            adam.step(&mut params, eval.grad.as_ref().unwrap());
            model.set_parameters(&params)?;
            model.absorb_batch_stats(&eval.batch_stats);
            acc.triplet += eval.parts.triplet;
            acc.mse += eval.parts.mse;
            acc.total += eval.parts.total;
        }
        let b = batches as f64;
        acc.triplet /= b;
        acc.mse /= b;
        acc.total /= b;
        log::debug!(
            "epoch {epoch}: total {:.5} triplet {:.5} mse {:.5}",
            acc.total,
            acc.triplet,
            acc.mse
        );
        history.push(acc);
        if !model.is_finite() {
            return Err(FarmError::Diverged { epoch, loss: f64::NAN });
        }
        if let Some(patience) = cfg.early_stop_patience {
            if acc.total < best {
                best = acc.total;
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    break;
                }
            }
        }
    }
    Ok(TrainOutcome { model, history })
}



#[cfg(test)]
mod training_tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;
    use crate::matrix::{sq_dist, Matrix};

    fn blobs(seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let centers = [[0.2, 0.2, 0.8, 0.5], [0.8, 0.3, 0.2, 0.5], [0.5, 0.9, 0.5, 0.1]];
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..40 {
                rows.push(center.map(|v| v + noise.sample(&mut rng)));
                labels.push(format!("c{c}"));
            }
        }
        FeatureMatrix::new(Matrix::from_rows(&rows).unwrap(), Some(labels), None).unwrap()
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_triplets: 16,
            learning_rate: 1e-2,
            seed: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_reduces_loss_and_separates_classes() {
        let data = blobs(1);
        let arch = Architecture::mirrored(4, &[8], 2, true, 0.1);
        let out = train(&data, &arch, &cfg(40)).unwrap();
        let first = out.history[0].total;
        let last = out.history.last().unwrap().total;
        assert!(last < first, "loss {first} -> {last}");
        let z = out.model.encode(&data.data).unwrap();
        let labels = data.require_labels().unwrap();
        let (mut intra, mut inter, mut ni, mut ne) = (0.0, 0.0, 0, 0);
        for i in 0..z.rows() {
            for j in i + 1..z.rows() {
                let d = sq_dist(z.row(i), z.row(j));
                if labels[i] == labels[j] {
                    intra += d;
                    ni += 1;
                } else {
                    inter += d;
                    ne += 1;
                }
            }
        }
        assert!(intra / (ni as f64) < inter / (ne as f64));
    }

    #[test]
    fn training_is_deterministic() {
        let data = blobs(2);
        let arch = Architecture::mirrored(4, &[6], 2, true, 0.2);
        let a = train(&data, &arch, &cfg(3)).unwrap();
        let b = train(&data, &arch, &cfg(3)).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
        let mut other = cfg(3);
        other.seed = 5;
        assert_ne!(train(&data, &arch, &other).unwrap().model, a.model);
    }

    #[test]
    fn early_stopping_limits_epochs() {
        let data = blobs(3);
        let arch = Architecture::mirrored(4, &[6], 2, false, 0.0);
        let mut c = cfg(200);
        c.learning_rate = 1e-9;
        c.early_stop_patience = Some(2);
        let out = train(&data, &arch, &c).unwrap();
        assert!(out.history.len() < 200);
    }

    #[test]
    fn warm_start_checks_width() {
        let data = blobs(4);
        let arch = Architecture::mirrored(5, &[6], 2, false, 0.0);
        let m = AutoencoderModel::new(&arch, 5, 0).unwrap();
        assert!(train_with_init(m, &data, &cfg(1)).is_err());
    }
}
