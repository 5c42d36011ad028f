//! Forward passes with activation caches and reverse-mode gradients.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Activation, AutoencoderModel, Layer, BN_EPS, BN_MOMENTUM};
use crate::error::{FarmError, Result};
use crate::matrix::{sq_dist, Matrix};

/// A combined triplet + reconstruction objective over rows of one input matrix.
///
/// `triplets` index (anchor, positive, negative) rows; `recon_rows` lists the
/// rows whose reconstruction error is averaged into the MSE term.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub triplets: &'a [(usize, usize, usize)],
    pub margin: f64,
    pub recon_rows: &'a [usize],
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub triplet: f64,
    pub mse: f64,
    pub total: f64,
}

pub(crate) enum Pass<'r> {
    Inference,
    /// Batch statistics in batchnorm; dropout only when an rng is supplied.
    Train { dropout: Option<&'r mut ChaCha8Rng> },
}

impl Pass<'_> {
    fn training(&self) -> bool {
        matches!(self, Pass::Train { .. })
    }
}

struct Cache {
    input: Matrix,
    xhat: Option<Matrix>,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
    pre_act: Matrix,
    mask: Option<Vec<f64>>,
}

fn forward_layer(layer: &Layer, x: Matrix, pass: &mut Pass<'_>) -> (Matrix, Cache) {
    let n = x.rows();
    let w = layer.out_dim();
    let mut z = x.matmul_transposed(&layer.weights, w);
    for r in 0..n {
        for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
            *v += b;
        }
    }
    let mut xhat = None;
    let mut inv_std = Vec::new();
    let mut batch_mean = Vec::new();
    let mut batch_var = Vec::new();
    if let Some(bn) = &layer.bn {
        let (mean, var) = if pass.training() {
            let mean = z.column_means();
            let mut var = vec![0.0; w];
            for r in z.iter_rows() {
                for j in 0..w {
                    let d = r[j] - mean[j];
                    var[j] += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= n.max(1) as f64);
            (mean, var)
        } else {
            (bn.running_mean.clone(), bn.running_var.clone())
        };
        inv_std = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xh = Matrix::zeros(n, w);
        for r in 0..n {
            let zr = z.row(r);
            let xr = xh.row_mut(r);
            for j in 0..w {
                xr[j] = (zr[j] - mean[j]) * inv_std[j];
            }
        }
        for r in 0..n {
            let xr = xh.row(r);
            let zr = z.row_mut(r);
            for j in 0..w {
                zr[j] = bn.gamma[j] * xr[j] + bn.beta[j];
            }
        }
        xhat = Some(xh);
        batch_mean = mean;
        batch_var = var;
    }
    let pre_act = z.clone();
    let mut out = z;
    if layer.spec.activation == Activation::Relu {
        out.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
    }
    let mut mask = None;
    let rate = layer.spec.dropout_rate;
    if let Pass::Train { dropout: Some(rng) } = pass {
        if rate > 0.0 {
            let keep = 1.0 / (1.0 - rate);
            let m: Vec<f64> = (0..out.as_slice().len())
                .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                .collect();
            out.as_mut_slice().iter_mut().zip(&m).for_each(|(v, k)| *v *= k);
            mask = Some(m);
        }
    }
    (
        out,
        Cache {
            input: x,
            xhat,
            inv_std,
            batch_mean,
            batch_var,
            pre_act,
            mask,
        },
    )
}

/// Backpropagates `dout` through one layer, writing parameter gradients into
/// `grad` (laid out as weights, bias, gamma, beta) and returning the input gradient.
fn backward_layer(layer: &Layer, cache: &Cache, mut dout: Matrix, training: bool, grad: &mut [f64]) -> Matrix {
    let n = dout.rows();
    let w = layer.out_dim();
    let d_in = layer.in_dim;
    if let Some(m) = &cache.mask {
        dout.as_mut_slice().iter_mut().zip(m).for_each(|(g, k)| *g *= k);
    }
    if layer.spec.activation == Activation::Relu {
        dout.as_mut_slice()
            .iter_mut()
            .zip(cache.pre_act.as_slice())
            .for_each(|(g, &y)| {
                if y <= 0.0 {
                    *g = 0.0;
                }
            });
    }
    let (gw, rest) = grad.split_at_mut(w * d_in);
    let (gb, rest) = rest.split_at_mut(w);
    let dz = if let (Some(bn), Some(xhat)) = (&layer.bn, &cache.xhat) {
        let (gg, gbeta) = rest.split_at_mut(w);
        let mut sum_dxhat = vec![0.0; w];
        let mut sum_dxhat_xhat = vec![0.0; w];
        let mut dxhat = Matrix::zeros(n, w);
        for r in 0..n {
            let dy = dout.row(r);
            let xh = xhat.row(r);
            let dx = dxhat.row_mut(r);
            for j in 0..w {
                gg[j] += dy[j] * xh[j];
                gbeta[j] += dy[j];
                dx[j] = dy[j] * bn.gamma[j];
                sum_dxhat[j] += dx[j];
                sum_dxhat_xhat[j] += dx[j] * xh[j];
            }
        }
        let mut dz = Matrix::zeros(n, w);
        let nf = n as f64;
        for r in 0..n {
            let dx = dxhat.row(r);
            let xh = xhat.row(r);
            let o = dz.row_mut(r);
            for j in 0..w {
                o[j] = if training {
                    cache.inv_std[j] / nf * (nf * dx[j] - sum_dxhat[j] - xh[j] * sum_dxhat_xhat[j])
                } else {
                    dx[j] * cache.inv_std[j]
                };
            }
        }
        dz
    } else {
        dout
    };
    let mut dx = Matrix::zeros(n, d_in);
    for r in 0..n {
        let dzr = dz.row(r);
        let xr = cache.input.row(r);
        let dxr = dx.row_mut(r);
        for k in 0..w {
            let g = dzr[k];
            if g == 0.0 {
                continue;
            }
            gb[k] += g;
            let wk = &layer.weights[k * d_in..(k + 1) * d_in];
            let gwk = &mut gw[k * d_in..(k + 1) * d_in];
            for i in 0..d_in {
                gwk[i] += g * xr[i];
                dxr[i] += g * wk[i];
            }
        }
    }
    dx
}

pub(crate) fn infer(layers: &[Layer], x: &Matrix) -> Matrix {
    let mut pass = Pass::Inference;
    layers
        .iter()
        .fold(x.clone(), |h, l| forward_layer(l, h, &mut pass).0)
}

fn forward_stack(layers: &[Layer], x: Matrix, pass: &mut Pass<'_>) -> (Matrix, Vec<Cache>) {
    let mut caches = Vec::with_capacity(layers.len());
    let mut h = x;
    for l in layers {
        let (out, c) = forward_layer(l, h, pass);
        caches.push(c);
        h = out;
    }
    (h, caches)
}

/// Per-batchnorm-layer (mean, biased variance, batch size) from a training pass.
pub(crate) type BatchStats = Vec<(Vec<f64>, Vec<f64>, usize)>;

pub(crate) struct Evaluation {
    pub parts: LossParts,
    pub grad: Option<Vec<f64>>,
    pub batch_stats: BatchStats,
}

fn triplet_term(z: &Matrix, obj: &Objective<'_>) -> f64 {
    if obj.triplets.is_empty() {
        return 0.0;
    }
    let sum: f64 = obj
        .triplets
        .iter()
        .map(|&(a, p, n)| (sq_dist(z.row(a), z.row(p)) - sq_dist(z.row(a), z.row(n)) + obj.margin).max(0.0))
        .sum();
    sum / obj.triplets.len() as f64
}

fn validate_objective(x: &Matrix, obj: &Objective<'_>) -> Result<()> {
    let n = x.rows();
    let bad = obj
        .triplets
        .iter()
        .any(|&(a, p, q)| a >= n || p >= n || q >= n)
        || obj.recon_rows.iter().any(|&r| r >= n);
    if bad {
        return Err(FarmError::InvalidArgument("objective references a row outside the input".into()));
    }
    Ok(())
}

impl AutoencoderModel {
    pub(crate) fn evaluate(&self, x: &Matrix, obj: &Objective<'_>, mut pass: Pass<'_>, want_grad: bool) -> Result<Evaluation> {
        super::check_width("objective input", self.input_dim(), x.cols())?;
        validate_objective(x, obj)?;
        let training = pass.training();
        let (z, enc_caches) = forward_stack(&self.encoder, x.clone(), &mut pass);
        let z_recon = z.select_rows(obj.recon_rows);
        let x_target = x.select_rows(obj.recon_rows);
        let (x_hat, dec_caches) = forward_stack(&self.decoder, z_recon, &mut pass);

        let triplet = triplet_term(&z, obj);
        let r = obj.recon_rows.len();
        let mse = if r == 0 {
            0.0
        } else {
            x_hat
                .iter_rows()
                .zip(x_target.iter_rows())
                .map(|(a, b)| sq_dist(a, b))
                .sum::<f64>()
                / r as f64
        };
        let parts = LossParts {
            triplet,
            mse,
            total: triplet + obj.lambda * mse,
        };
        let batch_stats = enc_caches
            .iter()
            .chain(&dec_caches)
            .filter(|c| c.xhat.is_some())
            .map(|c| (c.batch_mean.clone(), c.batch_var.clone(), c.input.rows()))
            .collect();
        if !want_grad {
            return Ok(Evaluation {
                parts,
                grad: None,
                batch_stats,
            });
        }

        let mut grad = vec![0.0; self.num_parameters()];
        let mut offsets = Vec::new();
        let mut off = 0;
        for l in self.layers() {
            offsets.push(off);
            off += l.num_parameters();
        }
        let n_enc = self.encoder.len();

        // reconstruction term
        let mut dz = Matrix::zeros(z.rows(), z.cols());
        if r > 0 && obj.lambda != 0.0 {
            let scale = 2.0 * obj.lambda / r as f64;
            let mut d = Matrix::zeros(x_hat.rows(), x_hat.cols());
            for i in 0..x_hat.rows() {
                let (h, t) = (x_hat.row(i), x_target.row(i));
                for (g, (a, b)) in d.row_mut(i).iter_mut().zip(h.iter().zip(t)) {
                    *g = scale * (a - b);
                }
            }
            for (li, layer) in self.decoder.iter().enumerate().rev() {
                let start = offsets[n_enc + li];
                let g = &mut grad[start..start + layer.num_parameters()];
                d = backward_layer(layer, &dec_caches[li], d, training, g);
            }
            for (k, &row) in obj.recon_rows.iter().enumerate() {
                for (a, b) in dz.row_mut(row).iter_mut().zip(d.row(k)) {
                    *a += b;
                }
            }
        }

        // triplet hinge; inactive triplets contribute nothing
        if !obj.triplets.is_empty() {
            let scale = 2.0 / obj.triplets.len() as f64;
            let m = z.cols();
            for &(a, p, n) in obj.triplets {
                let (za, zp, zn) = (z.row(a), z.row(p), z.row(n));
                if sq_dist(za, zp) - sq_dist(za, zn) + obj.margin <= 0.0 {
                    continue;
                }
                let (za, zp, zn) = (za.to_vec(), zp.to_vec(), zn.to_vec());
                for j in 0..m {
                    dz.row_mut(a)[j] += scale * (zn[j] - zp[j]);
                    dz.row_mut(p)[j] += scale * (zp[j] - za[j]);
                    dz.row_mut(n)[j] += scale * (za[j] - zn[j]);
                }
            }
        }

        let mut d = dz;
        for (li, layer) in self.encoder.iter().enumerate().rev() {
            let start = offsets[li];
            let g = &mut grad[start..start + layer.num_parameters()];
            d = backward_layer(layer, &enc_caches[li], d, training, g);
        }
        Ok(Evaluation {
            parts,
            grad: Some(grad),
            batch_stats,
        })
    }

    /// Objective value and its gradient with respect to [`parameters`](Self::parameters).
    ///
    /// With `batch_stats` set, batchnorm normalizes with statistics of the rows
    /// in this call (training semantics); otherwise running statistics are used.
    /// Dropout is never applied here, so the result is a deterministic function
    /// of the parameters.
    pub fn objective_gradient(&self, x: &Matrix, obj: &Objective<'_>, batch_stats: bool) -> Result<(LossParts, Vec<f64>)> {
        let pass = if batch_stats {
            Pass::Train { dropout: None }
        } else {
            Pass::Inference
        };
        let e = self.evaluate(x, obj, pass, true)?;
        Ok((e.parts, e.grad.unwrap()))
    }

    pub fn objective_value(&self, x: &Matrix, obj: &Objective<'_>, batch_stats: bool) -> Result<LossParts> {
        let pass = if batch_stats {
            Pass::Train { dropout: None }
        } else {
            Pass::Inference
        };
        Ok(self.evaluate(x, obj, pass, false)?.parts)
    }

    pub(crate) fn absorb_batch_stats(&mut self, stats: &BatchStats) {
        let bns = self
            .encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .filter_map(|l| l.bn.as_mut());
        for (bn, (mean, var, n)) in bns.zip(stats) {
            let unbias = if *n > 1 { *n as f64 / (*n - 1) as f64 } else { 1.0 };
            for j in 0..bn.running_mean.len() {
                bn.running_mean[j] = BN_MOMENTUM * bn.running_mean[j] + (1.0 - BN_MOMENTUM) * mean[j];
                bn.running_var[j] = BN_MOMENTUM * bn.running_var[j] + (1.0 - BN_MOMENTUM) * var[j] * unbias;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::net::Architecture;

    fn random_setup(seed: u64, bn: bool) -> (AutoencoderModel, Matrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = Architecture::mirrored(4, &[3], 2, bn, 0.0);
        let mut m = AutoencoderModel::new(&arch, 4, seed).unwrap();
        let p: Vec<f64> = (0..m.num_parameters()).map(|_| rng.random_range(-1.0..1.0)).collect();
        m.set_parameters(&p).unwrap();
        let x: Vec<f64> = (0..8 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        (m, Matrix::from_vec(8, 4, x).unwrap())
    }

    /// Max relative error between analytic and central-difference gradients,
    /// or `None` when a one-sided difference reveals a kink near the point.
    /// `floor` bounds the denominator for near-zero gradient entries.
    fn grad_check(m: &AutoencoderModel, x: &Matrix, obj: &Objective<'_>, bn: bool, floor: f64) -> Option<f64> {
        let h = 1e-5;
        let (_, g) = m.objective_gradient(x, obj, bn).unwrap();
        let p0 = m.parameters();
        let f0 = m.objective_value(x, obj, bn).unwrap().total;
        let mut worst: f64 = 0.0;
        let mut probe = m.clone();
        for i in 0..p0.len() {
            let mut p = p0.clone();
            p[i] = p0[i] + h;
            probe.set_parameters(&p).unwrap();
            let fp = probe.objective_value(x, obj, bn).unwrap().total;
            p[i] = p0[i] - h;
            probe.set_parameters(&p).unwrap();
            let fm = probe.objective_value(x, obj, bn).unwrap().total;
            let (fwd, bwd) = ((fp - f0) / h, (f0 - fm) / h);
            if (fwd - bwd).abs() > 1e-3 * (1.0 + fwd.abs().max(bwd.abs())) {
                return None;
            }
            let fd = (fp - fm) / (2.0 * h);
            let rel = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(floor);
            worst = worst.max(rel);
        }
        Some(worst)
    }

    const TRIPLETS: [(usize, usize, usize); 3] = [(0, 1, 2), (3, 4, 5), (6, 7, 0)];

    #[test]
    fn gradient_matches_finite_differences() {
        let recon: Vec<usize> = (0..8).collect();
        let obj = Objective {
            triplets: &TRIPLETS,
            margin: 1.0,
            recon_rows: &recon,
            lambda: 0.5,
        };
        let mut checked = 0;
        for seed in 0..40u64 {
            let (m, x) = random_setup(seed, false);
            if let Some(err) = grad_check(&m, &x, &obj, false, 1e-6) {
                assert!(err < 1e-4, "seed {seed}: relative error {err}");
                checked += 1;
            }
        }
        assert!(checked >= 30, "only {checked} smooth draws");
    }

    #[test]
    fn batchnorm_training_gradient_matches_finite_differences() {
        let recon: Vec<usize> = (0..8).collect();
        let obj = Objective {
            triplets: &TRIPLETS,
            margin: 1.0,
            recon_rows: &recon,
            lambda: 0.5,
        };
        let mut checked = 0;
        for seed in 100..130u64 {
            let (m, x) = random_setup(seed, true);
            // normalizing by small batch variances amplifies rounding in the differences
            if let Some(err) = grad_check(&m, &x, &obj, true, 1e-4) {
                assert!(err < 1e-4, "seed {seed}: relative error {err}");
                checked += 1;
            }
        }
        assert!(checked >= 15, "only {checked} smooth draws");
    }

    #[test]
    fn inactive_triplet_contributes_no_gradient() {
        let (m, _) = random_setup(3, false);
        let z = |r: &[f64]| m.encode_row(r).unwrap();
        // rows 0..3 form the candidate triplet, 3..6 a second one
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        loop {
            let x: Vec<f64> = (0..6 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = Matrix::from_vec(6, 4, x).unwrap();
            let arg = |a, p, n| {
                let (za, zp, zn) = (z(x.row(a)), z(x.row(p)), z(x.row(n)));
                crate::matrix::sq_dist(&za, &zp) - crate::matrix::sq_dist(&za, &zn)
            };
            let margin = 0.05;
            if !(arg(0, 1, 2) + margin > 0.01 && arg(3, 4, 5) + margin < -0.01) {
                continue;
            }
            let obj = |t| Objective {
                triplets: t,
                margin,
                recon_rows: &[],
                lambda: 0.0,
            };
            let (_, g_both) = m.objective_gradient(&x, &obj(&[(0, 1, 2), (3, 4, 5)]), false).unwrap();
            let (_, g_active) = m.objective_gradient(&x, &obj(&[(0, 1, 2)]), false).unwrap();
            let (_, g_inactive) = m.objective_gradient(&x, &obj(&[(3, 4, 5)]), false).unwrap();
            assert!(g_inactive.iter().all(|&v| v == 0.0));
            for (b, a) in g_both.iter().zip(&g_active) {
                assert!((b - a / 2.0).abs() <= 1e-12 * (1.0 + a.abs()));
            }
            break;
        }
    }

    #[test]
    fn objective_value_matches_loss_functions() {
        let (m, x) = random_setup(5, true);
        let recon: Vec<usize> = (0..8).collect();
        let obj = Objective {
            triplets: &TRIPLETS,
            margin: 1.0,
            recon_rows: &recon,
            lambda: 0.5,
        };
        let v = m.objective_value(&x, &obj, false).unwrap();
        let (g, _) = m.objective_gradient(&x, &obj, false).unwrap();
        assert_eq!(v, g);
        assert!((v.total - (v.triplet + 0.5 * v.mse)).abs() < 1e-12);
        assert!(v.triplet >= 0.0);
    }
}
