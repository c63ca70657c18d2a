//! Base-point storage, distance metrics and synthetic query generation.

use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};

/// Dense index of a base point, `0..n`.
pub type VectorId = u32;

/// Distance function over dense vectors. Every variant is "smaller is nearer".
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Metric {
    /// `sqrt(sum((a_i - b_i)^2))`
    Euclidean,
    /// `-sum(a_i * b_i)`
    InnerProduct,
    /// `1 - cos(a, b)` on unnormalized inputs.
    Angular,
}

impl Metric {
    pub fn tag(self) -> u8 {
        match self {
            Metric::Euclidean => 0,
            Metric::InnerProduct => 1,
            Metric::Angular => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Metric::Euclidean),
            1 => Some(Metric::InnerProduct),
            2 => Some(Metric::Angular),
            _ => None,
        }
    }

    /// Unchecked distance kernel. Callers guarantee equal lengths; a zero-norm
    /// operand under `Angular` yields 1.0 (orthogonal).
    #[inline]
    pub fn eval(self, a: &[f32], b: &[f32]) -> f32 {
        debug_assert_eq!(a.len(), b.len());
        match self {
            Metric::Euclidean => {
                let mut acc = 0.0f64;
                for (x, y) in a.iter().zip(b) {
                    let t = (*x as f64) - (*y as f64);
                    acc += t * t;
                }
                acc.sqrt() as f32
            }
            Metric::InnerProduct => -(dot(a, b) as f32),
            Metric::Angular => {
                let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
                for (x, y) in a.iter().zip(b) {
                    let (x, y) = (*x as f64, *y as f64);
                    ab += x * y;
                    aa += x * x;
                    bb += y * y;
                }
                if aa == 0.0 || bb == 0.0 {
                    return 1.0;
                }
                (1.0 - ab / (aa.sqrt() * bb.sqrt())) as f32
            }
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Euclidean => "euclidean",
            Metric::InnerProduct => "inner_product",
            Metric::Angular => "angular",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" | "l2" => Ok(Metric::Euclidean),
            "inner_product" | "inner-product" | "ip" => Ok(Metric::InnerProduct),
            "angular" | "cosine" => Ok(Metric::Angular),
            other => Err(invalid(format!("unknown metric {other:?}"))),
        }
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (*x as f64) * (*y as f64))
        .sum()
}

fn norm_sq(a: &[f32]) -> f64 {
    dot(a, a)
}

/// Checked distance between two vectors.
pub fn distance(metric: Metric, a: &[f32], b: &[f32]) -> Result<f32> {
    if a.len() != b.len() {
        return Err(invalid(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    check_finite(a)?;
    check_finite(b)?;
    if metric == Metric::Angular && (norm_sq(a) == 0.0 || norm_sq(b) == 0.0) {
        return Err(invalid("zero-norm vector under angular metric"));
    }
    Ok(metric.eval(a, b))
}

fn check_finite(v: &[f32]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(invalid(format!("non-finite component at index {i}"))),
        None => Ok(()),
    }
}

/// Immutable set of `n` base points of dimension `d`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorDataset {
    dim: usize,
    data: Vec<f32>,
    metric: Metric,
}

impl VectorDataset {
    pub fn from_flat(dim: usize, data: Vec<f32>, metric: Metric) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dimension must be at least 1"));
        }
        if data.is_empty() {
            return Err(invalid("dataset must contain at least one vector"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(invalid(format!(
                "flat buffer of {} values is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        if data.len() / dim > u32::MAX as usize {
            return Err(invalid("too many vectors for 32-bit ids"));
        }
        let ds = VectorDataset { dim, data, metric };
        for (i, v) in ds.iter().enumerate() {
            check_finite(v).map_err(|e| invalid(format!("vector {i}: {e}")))?;
            if metric == Metric::Angular && norm_sq(v) == 0.0 {
                return Err(invalid(format!(
                    "vector {i} has zero norm under angular metric"
                )));
            }
        }
        Ok(ds)
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R], metric: Metric) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(invalid(format!(
                    "row {i} has dimension {} but row 0 has {dim}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::from_flat(dim, data, metric)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    /// Always false: construction rejects empty datasets.
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn with_metric(self, metric: Metric) -> Result<Self> {
        Self::from_flat(self.dim, self.data, metric)
    }

    #[inline]
    pub fn vector(&self, id: VectorId) -> &[f32] {
        let start = id as usize * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn to_rows(&self) -> Vec<Vec<f32>> {
        self.iter().map(<[f32]>::to_vec).collect()
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.data
    }

    /// Distance from a stored point to an arbitrary query.
    #[inline]
    pub fn dist_to(&self, id: VectorId, query: &[f32]) -> f32 {
        self.metric.eval(self.vector(id), query)
    }

    /// Distance between two stored points.
    #[inline]
    pub fn dist(&self, a: VectorId, b: VectorId) -> f32 {
        self.metric.eval(self.vector(a), self.vector(b))
    }

    /// Rejects queries of the wrong length or with non-finite components.
    pub fn check_query(&self, query: &[f32]) -> Result<()> {
        if query.len() != self.dim {
            return Err(invalid(format!(
                "query has dimension {} but dataset has {}",
                query.len(),
                self.dim
            )));
        }
        check_finite(query)?;
        if self.metric == Metric::Angular && norm_sq(query) == 0.0 {
            return Err(invalid("zero-norm query under angular metric"));
        }
        Ok(())
    }

    /// Mean absolute component value over all points and dimensions (eta).
    pub fn abs_mean(&self) -> f64 {
        let sum: f64 = self.data.iter().map(|x| x.abs() as f64).sum();
        sum / self.data.len() as f64
    }

    /// Point closest (Euclidean) to the coordinate-wise mean; ties go to the smaller id.
    pub fn medoid(&self) -> VectorId {
        let n = self.len() as f64;
        let mut mean = vec![0.0f64; self.dim];
        for v in self.iter() {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += *x as f64;
            }
        }
        let mean: Vec<f32> = mean.into_iter().map(|m| (m / n) as f32).collect();
        let mut best = (f32::INFINITY, 0);
        for (i, v) in self.iter().enumerate() {
            let d = Metric::Euclidean.eval(v, &mean);
            if d < best.0 {
                best = (d, i as VectorId);
            }
        }
        best.1
    }
}

/// Perturbs every base point with i.i.d. per-dimension noise drawn from
/// `U(-noise_scale * eta, +noise_scale * eta)`.
///
/// Output is base-major: the `count_per_base` replicas of point 0 come first.
/// Each (base, replica) pair draws from its own ChaCha stream under `seed`,
/// so the result does not depend on evaluation order.
pub fn generate_noisy_queries(
    ds: &VectorDataset,
    noise_scale: f64,
    count_per_base: usize,
    seed: u64,
) -> Result<Vec<Vec<f32>>> {
    if !(noise_scale >= 0.0) || !noise_scale.is_finite() {
        return Err(invalid("noise_scale must be a finite non-negative number"));
    }
    if count_per_base == 0 {
        return Err(invalid("count_per_base must be positive"));
    }
    let half_width = noise_scale * ds.abs_mean();
    let uniform = Uniform::new_inclusive(-half_width, half_width);
    let out = (0..ds.len() * count_per_base)
        .into_par_iter()
        .map(|slot| {
            let base = (slot / count_per_base) as VectorId;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(slot as u64);
            ds.vector(base)
                .iter()
                .map(|&x| (x as f64 + uniform.sample(&mut rng)) as f32)
                .collect()
        })
        .collect();
    Ok(out)
}
