//! Inputs shared by the benchmarks.

use farm_core::net::TripletBatch;
use farm_core::{Architecture, AutoencoderModel, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// `n` points in `dim` dimensions drawn around `k` unit-variance centers.
pub fn blobs(n: usize, dim: usize, k: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect())
        .collect();
    let mut data = Vec::with_capacity(n * dim);
    for i in 0..n {
        let c = &centers[i % k];
        data.extend(c.iter().map(|v| v + rng.sample::<f64, _>(StandardNormal)));
    }
    Matrix::from_vec(n, dim, data).expect("shape")
}

/// Uniform rows in `[0, 1]^dim`, the range the encoder sees after preprocessing.
pub fn unit_rows(n: usize, dim: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_vec(n, dim, (0..n * dim).map(|_| rng.random::<f64>()).collect()).expect("shape")
}

pub fn model(input_dim: usize, hidden: &[usize], latent_dim: usize) -> AutoencoderModel {
    AutoencoderModel::new(&Architecture::mirrored(input_dim, hidden, latent_dim, true, 0.2), input_dim, 1).expect("model")
}

pub fn triplets(n: usize, dim: usize, seed: u64) -> TripletBatch {
    TripletBatch::new(
        unit_rows(n, dim, seed),
        unit_rows(n, dim, seed + 1),
        unit_rows(n, dim, seed + 2),
        1.0,
    )
    .expect("batch")
}
