//! Fully-connected triplet autoencoder.
//!
//! Each layer is `dense -> [batchnorm] -> [relu] -> [dropout]`. The encoder's
//! last layer produces the latent embedding; the decoder mirrors it back to the
//! preprocessed input width.

mod backprop;
mod loss;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FarmError, Result};
use crate::features::{FeatureMatrix, PreprocessState};
use crate::matrix::Matrix;

pub use backprop::{LossParts, Objective};
pub use loss::{combined_loss, combined_loss_grad, mse_loss, triplet_loss, LossWeights, TripletBatch};
pub use train::{
    sample_triplets, train, train_with_init, AdamConfig, EpochStats, TrainConfig, TrainOutcome, TripletIndices,
};

/// Running-statistic momentum for batchnorm: `running = m * running + (1 - m) * batch`.
pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub has_batchnorm: bool,
    pub activation: Activation,
    pub dropout_rate: f64,
}

impl LayerSpec {
    pub fn linear(width: usize) -> Self {
        Self {
            width,
            has_batchnorm: false,
            activation: Activation::None,
            dropout_rate: 0.0,
        }
    }

    pub fn hidden(width: usize, batchnorm: bool, dropout_rate: f64) -> Self {
        Self {
            width,
            has_batchnorm: batchnorm,
            activation: Activation::Relu,
            dropout_rate,
        }
    }
}

/// Encoder and decoder layer lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
}

impl Architecture {
    /// Encoder `hidden.. -> latent`, decoder `reversed(hidden).. -> input_dim`.
    /// Hidden layers get relu, optional batchnorm and dropout; the latent and
    /// reconstruction layers are linear.
    pub fn mirrored(input_dim: usize, hidden: &[usize], latent_dim: usize, batchnorm: bool, dropout_rate: f64) -> Self {
        let mut encoder: Vec<LayerSpec> = hidden
            .iter()
            .map(|&w| LayerSpec::hidden(w, batchnorm, dropout_rate))
            .collect();
        encoder.push(LayerSpec::linear(latent_dim));
        let mut decoder: Vec<LayerSpec> = hidden
            .iter()
            .rev()
            .map(|&w| LayerSpec::hidden(w, batchnorm, dropout_rate))
            .collect();
        decoder.push(LayerSpec::linear(input_dim));
        Self { encoder, decoder }
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.last().map_or(0, |l| l.width)
    }

    pub fn validate(&self, input_dim: usize) -> Result<()> {
        if input_dim == 0 || self.encoder.is_empty() || self.decoder.is_empty() {
            return Err(FarmError::InvalidArgument("architecture needs encoder and decoder layers".into()));
        }
        for l in self.encoder.iter().chain(&self.decoder) {
            if l.width == 0 {
                return Err(FarmError::InvalidArgument("layer width must be positive".into()));
            }
            if !(0.0..1.0).contains(&l.dropout_rate) {
                return Err(FarmError::InvalidArgument(format!(
                    "dropout rate {} outside [0, 1)",
                    l.dropout_rate
                )));
            }
        }
        let out = self.decoder.last().unwrap();
        if out.width != input_dim {
            return Err(FarmError::DimensionMismatch {
                context: "decoder output width",
                expected: input_dim,
                actual: out.width,
            });
        }
        if out.activation != Activation::None || out.dropout_rate != 0.0 {
            return Err(FarmError::InvalidArgument(
                "reconstruction layer must be linear without dropout".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        Self {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub spec: LayerSpec,
    pub in_dim: usize,
    /// `(width x in_dim)` row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub bn: Option<BatchNorm>,
}

impl Layer {
    fn init(spec: &LayerSpec, in_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let gain = match spec.activation {
            Activation::Relu => 6.0,
            Activation::None => 3.0,
        };
        let bound = (gain / in_dim as f64).sqrt();
        let weights = (0..spec.width * in_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            spec: spec.clone(),
            in_dim,
            weights,
            bias: vec![0.0; spec.width],
            bn: spec.has_batchnorm.then(|| BatchNorm::new(spec.width)),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.spec.width
    }

    fn num_parameters(&self) -> usize {
        self.weights.len() + self.bias.len() + self.bn.as_ref().map_or(0, |b| 2 * b.gamma.len())
    }

    fn param_slices(&self) -> impl Iterator<Item = &[f64]> + '_ {
        let bn = self.bn.as_ref();
        [Some(&self.weights[..]), Some(&self.bias[..])]
            .into_iter()
            .chain([bn.map(|b| &b.gamma[..]), bn.map(|b| &b.beta[..])])
            .flatten()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![&mut self.weights[..], &mut self.bias[..]];
        if let Some(b) = self.bn.as_mut() {
            v.push(&mut b.gamma[..]);
            v.push(&mut b.beta[..]);
        }
        v
    }
}

/// Encoder `f`, decoder `f'`, and the preprocessing that feeds them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderModel {
    pub encoder: Vec<Layer>,
    pub decoder: Vec<Layer>,
    pub preprocess: Option<PreprocessState>,
}

impl AutoencoderModel {
    /// Fresh model with fan-in scaled uniform weights drawn from `seed`.
    pub fn new(arch: &Architecture, input_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_rng(arch, input_dim, &mut rng)
    }

    pub(crate) fn with_rng(arch: &Architecture, input_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        arch.validate(input_dim)?;
        let mut build = |specs: &[LayerSpec], mut d: usize| {
            specs
                .iter()
                .map(|s| {
                    let l = Layer::init(s, d, rng);
                    d = s.width;
                    l
                })
                .collect::<Vec<_>>()
        };
        let encoder = build(&arch.encoder, input_dim);
        let decoder = build(&arch.decoder, arch.latent_dim());
        Ok(Self {
            encoder,
            decoder,
            preprocess: None,
        })
    }

    pub fn with_preprocess(mut self, preprocess: PreprocessState) -> Result<Self> {
        if preprocess.output_width() != self.input_dim() {
            return Err(FarmError::DimensionMismatch {
                context: "preprocess output width",
                expected: self.input_dim(),
                actual: preprocess.output_width(),
            });
        }
        self.preprocess = Some(preprocess);
        Ok(self)
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            encoder: self.encoder.iter().map(|l| l.spec.clone()).collect(),
            decoder: self.decoder.iter().map(|l| l.spec.clone()).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0].in_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.last().unwrap().out_dim()
    }

    /// Width of raw (pre-preprocessing) rows, when a preprocess state is attached.
    pub fn raw_dim(&self) -> usize {
        self.preprocess
            .as_ref()
            .map_or(self.input_dim(), |p| p.input_width)
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer> + '_ {
        self.encoder.iter().chain(&self.decoder)
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> + '_ {
        self.encoder.iter_mut().chain(self.decoder.iter_mut())
    }

    pub fn num_parameters(&self) -> usize {
        self.layers().map(Layer::num_parameters).sum()
    }

    /// All trainable parameters in a fixed order: per layer (encoder first)
    /// weights, bias, then batchnorm gamma and beta.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for l in self.layers() {
            for s in l.param_slices() {
                out.extend_from_slice(s);
            }
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_parameters() {
            return Err(FarmError::DimensionMismatch {
                context: "parameter vector",
                expected: self.num_parameters(),
                actual: params.len(),
            });
        }
        let mut off = 0;
        for l in self.layers_mut() {
            for s in l.param_slices_mut() {
                s.copy_from_slice(&params[off..off + s.len()]);
                off += s.len();
            }
        }
        Ok(())
    }

    /// Batchnorm running means followed by running variances, per layer.
    pub fn batchnorm_stats(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for b in self.layers().filter_map(|l| l.bn.as_ref()) {
            out.extend_from_slice(&b.running_mean);
            out.extend_from_slice(&b.running_var);
        }
        out
    }

    pub fn set_batchnorm_stats(&mut self, stats: &[f64]) -> Result<()> {
        let expected: usize = self.layers().filter_map(|l| l.bn.as_ref()).map(|b| 2 * b.gamma.len()).sum();
        if stats.len() != expected {
            return Err(FarmError::DimensionMismatch {
                context: "batchnorm stats",
                expected,
                actual: stats.len(),
            });
        }
        let mut off = 0;
        for b in self.layers_mut().filter_map(|l| l.bn.as_mut()) {
            let w = b.gamma.len();
            b.running_mean.copy_from_slice(&stats[off..off + w]);
            b.running_var.copy_from_slice(&stats[off + w..off + 2 * w]);
            off += 2 * w;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.parameters().iter().chain(&self.batchnorm_stats()).all(|v| v.is_finite())
    }

    /// Inference-mode encoder pass on preprocessed rows.
    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        check_width("encode input", self.input_dim(), x.cols())?;
        Ok(backprop::infer(&self.encoder, x))
    }

    pub fn encode_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(1, x.len(), x.to_vec())?;
        Ok(self.encode(&m)?.into_vec())
    }

    /// Inference-mode decoder pass on latent rows.
    pub fn decode(&self, z: &Matrix) -> Result<Matrix> {
        check_width("decode input", self.latent_dim(), z.cols())?;
        Ok(backprop::infer(&self.decoder, z))
    }

    pub fn decode_row(&self, z: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(1, z.len(), z.to_vec())?;
        Ok(self.decode(&m)?.into_vec())
    }

    fn require_preprocess(&self) -> Result<&PreprocessState> {
        self.preprocess
            .as_ref()
            .ok_or_else(|| FarmError::InvalidArgument("model has no preprocess state".into()))
    }

    /// Preprocess then encode raw feature rows.
    pub fn embed(&self, raw: &FeatureMatrix) -> Result<Matrix> {
        let pre = crate::features::apply_preprocess(self.require_preprocess()?, raw)?;
        self.encode(&pre.data)
    }

    pub fn embed_row(&self, raw: &[f64]) -> Result<Vec<f64>> {
        let pre = self.require_preprocess()?.transform_row(raw)?;
        self.encode_row(&pre)
    }
}

fn check_width(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(FarmError::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}
