//! Seeded synthetic datasets for tests, benchmarks and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::{Metric, VectorDataset};
use crate::error::Result;

/// `n` points with i.i.d. standard normal components.
pub fn gaussian(n: usize, dim: usize, metric: Metric, seed: u64) -> Result<VectorDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * dim)
        .map(|_| rng.sample::<f32, _>(StandardNormal))
        .collect();
    VectorDataset::from_flat(dim, data, metric)
}

/// `n` points spread over `clusters` Gaussian blobs. Centers are standard
/// normal; each point is its center plus `N(0, spread^2)` noise per dimension.
/// Cluster membership is assigned round-robin so ids interleave clusters.
pub fn clustered_gaussian(
    n: usize,
    dim: usize,
    clusters: usize,
    spread: f32,
    metric: Metric,
    seed: u64,
) -> Result<VectorDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clusters = clusters.max(1);
    let centers: Vec<f32> = (0..clusters * dim)
        .map(|_| rng.sample::<f32, _>(StandardNormal))
        .collect();
    let mut data = Vec::with_capacity(n * dim);
    for i in 0..n {
        let c = &centers[(i % clusters) * dim..(i % clusters + 1) * dim];
        for &x in c {
            data.push(x + spread * rng.sample::<f32, _>(StandardNormal));
        }
    }
    VectorDataset::from_flat(dim, data, metric)
}

/// Clustered points with low intrinsic dimension embedded in `dim` dimensions.
///
/// Latent points are drawn from `clusters` blobs in `latent_dim` dimensions
/// (standard normal centers, per-dimension standard deviation `spread`), then
/// mapped through a fixed random Gaussian projection scaled by
/// `1 / sqrt(latent_dim)`, and finally perturbed by isotropic `N(0, noise^2)`.
pub fn embedded_clusters(
    n: usize,
    dim: usize,
    latent_dim: usize,
    clusters: usize,
    spread: f32,
    noise: f32,
    metric: Metric,
    seed: u64,
) -> Result<VectorDataset> {
    let latent = clustered_gaussian(n, latent_dim, clusters, spread, Metric::Euclidean, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let scale = 1.0 / (latent_dim as f32).sqrt();
    let proj: Vec<f32> = (0..latent_dim * dim)
        .map(|_| scale * rng.sample::<f32, _>(StandardNormal))
        .collect();
    let mut data = Vec::with_capacity(n * dim);
    for z in latent.iter() {
        for j in 0..dim {
            let mut acc = 0.0f32;
            for (t, &zt) in z.iter().enumerate() {
                acc += zt * proj[t * dim + j];
            }
            data.push(acc + noise * rng.sample::<f32, _>(StandardNormal));
        }
    }
    VectorDataset::from_flat(dim, data, metric)
}
