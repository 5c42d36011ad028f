use serde::{Deserialize, Serialize};

use super::{AutoencoderModel, Objective};
use crate::error::{FarmError, Result};
use crate::matrix::Matrix;

/// `N` (anchor, positive, negative) rows plus the hinge margin.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatch {
    pub anchors: Matrix,
    pub positives: Matrix,
    pub negatives: Matrix,
    pub margin: f64,
}

impl TripletBatch {
    pub fn new(anchors: Matrix, positives: Matrix, negatives: Matrix, margin: f64) -> Result<Self> {
        let n = anchors.rows();
        if n == 0 || positives.rows() != n || negatives.rows() != n {
            return Err(FarmError::InvalidArgument(format!(
                "triplet batch needs equal non-zero lengths, got {}/{}/{}",
                n,
                positives.rows(),
                negatives.rows()
            )));
        }
        if anchors.cols() != positives.cols() || anchors.cols() != negatives.cols() {
            return Err(FarmError::DimensionMismatch {
                context: "triplet batch width",
                expected: anchors.cols(),
                actual: positives.cols().max(negatives.cols()),
            });
        }
        if !(margin > 0.0 && margin.is_finite()) {
            return Err(FarmError::InvalidArgument(format!("margin {margin} must be > 0")));
        }
        Ok(Self {
            anchors,
            positives,
            negatives,
            margin,
        })
    }

    pub fn len(&self) -> usize {
        self.anchors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.rows() == 0
    }

    /// Rows stacked as `[anchors; positives; negatives]` with matching triplet indices.
    pub(crate) fn stacked(&self) -> Result<(Matrix, Vec<(usize, usize, usize)>)> {
        let n = self.len();
        let x = Matrix::vstack(&[&self.anchors, &self.positives, &self.negatives])?;
        Ok((x, (0..n).map(|i| (i, n + i, 2 * n + i)).collect()))
    }
}

/// Weight `λ` on the reconstruction term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_mse: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        // triplet term weighted twice the reconstruction term
        Self { lambda_mse: 0.5 }
    }
}

/// Mean hinge `max(0, |f(a)-f(p)|^2 - |f(a)-f(n)|^2 + margin)` in inference mode.
pub fn triplet_loss(model: &AutoencoderModel, batch: &TripletBatch) -> Result<f64> {
    let (x, triplets) = batch.stacked()?;
    let obj = Objective {
        triplets: &triplets,
        margin: batch.margin,
        recon_rows: &[],
        lambda: 0.0,
    };
    Ok(model.objective_value(&x, &obj, false)?.triplet)
}

/// Mean squared reconstruction error `|x - f'(f(x))|^2` over rows, inference mode.
pub fn mse_loss(model: &AutoencoderModel, x: &Matrix) -> Result<f64> {
    let rows: Vec<usize> = (0..x.rows()).collect();
    let obj = Objective {
        triplets: &[],
        margin: 1.0,
        recon_rows: &rows,
        lambda: 1.0,
    };
    Ok(model.objective_value(x, &obj, false)?.mse)
}

fn combined_parts(batch: &TripletBatch, recon_inputs: &Matrix) -> Result<(Matrix, Vec<(usize, usize, usize)>, Vec<usize>)> {
    let (stacked, triplets) = batch.stacked()?;
    let base = stacked.rows();
    let x = Matrix::vstack(&[&stacked, recon_inputs])?;
    Ok((x, triplets, (base..base + recon_inputs.rows()).collect()))
}

/// `triplet_loss + λ · mse_loss`.
pub fn combined_loss(model: &AutoencoderModel, batch: &TripletBatch, recon_inputs: &Matrix, w: LossWeights) -> Result<f64> {
    let (x, triplets, recon_rows) = combined_parts(batch, recon_inputs)?;
    let obj = Objective {
        triplets: &triplets,
        margin: batch.margin,
        recon_rows: &recon_rows,
        lambda: w.lambda_mse,
    };
    Ok(model.objective_value(&x, &obj, false)?.total)
}

/// [`combined_loss`] and its analytic gradient with respect to the model
/// parameters, in [`AutoencoderModel::parameters`] order.
pub fn combined_loss_grad(
    model: &AutoencoderModel,
    batch: &TripletBatch,
    recon_inputs: &Matrix,
    w: LossWeights,
) -> Result<(f64, Vec<f64>)> {
    let (x, triplets, recon_rows) = combined_parts(batch, recon_inputs)?;
    let obj = Objective {
        triplets: &triplets,
        margin: batch.margin,
        recon_rows: &recon_rows,
        lambda: w.lambda_mse,
    };
    let (parts, grad) = model.objective_gradient(&x, &obj, false)?;
    Ok((parts.total, grad))
}
