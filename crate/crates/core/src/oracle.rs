//! Exhaustive ground truth and recall, the reference every index result is scored against.

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::{VectorDataset, VectorId};
use crate::error::{invalid, Error, Result};
use crate::neighbor::Neighbor;
use crate::vecio;

/// Default depth at which ground truth is computed and persisted.
pub const GROUND_TRUTH_DEPTH: usize = 100;

/// The `k` nearest base points to `query`, ascending by distance, ties to the smaller id.
pub fn exact_knn(ds: &VectorDataset, query: &[f32], k: usize) -> Result<Vec<Neighbor>> {
    ds.check_query(query)?;
    if k == 0 || k > ds.len() {
        return Err(invalid(format!(
            "k = {k} must be in 1..={} (dataset size)",
            ds.len()
        )));
    }
    Ok(scan(ds, query, k))
}

pub(crate) fn scan(ds: &VectorDataset, query: &[f32], k: usize) -> Vec<Neighbor> {
    let mut all: Vec<Neighbor> = (0..ds.len() as VectorId)
        .map(|id| Neighbor::new(id, ds.dist_to(id, query)))
        .collect();
    if k < all.len() {
        all.select_nth_unstable(k);
        all.truncate(k);
    }
    all.sort_unstable();
    all
}

/// The true nearest base point of `query`.
pub fn global_optimum(ds: &VectorDataset, query: &[f32]) -> Result<VectorId> {
    ds.check_query(query)?;
    Ok(scan(ds, query, 1)[0].id)
}

/// `|approx ∩ exact| / k`.
pub fn recall_at_k(approx: &[VectorId], exact: &[VectorId], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(invalid("k must be positive"));
    }
    if exact.len() != k {
        return Err(invalid(format!(
            "exact set has {} ids, expected k = {k}",
            exact.len()
        )));
    }
    if approx.len() > k {
        return Err(invalid(format!(
            "approximate set has {} ids, more than k = {k}",
            approx.len()
        )));
    }
    let truth: HashSet<VectorId> = exact.iter().copied().collect();
    let approx: HashSet<VectorId> = approx.iter().copied().collect();
    Ok(approx.intersection(&truth).count() as f64 / k as f64)
}

/// Recall of the first `k` ids of `approx` against the first `k` of a ground-truth row.
pub fn recall_vs_truth(approx: &[Neighbor], truth: &[Neighbor], k: usize) -> f64 {
    let exact: HashSet<VectorId> = truth[..k].iter().map(|n| n.id).collect();
    approx
        .iter()
        .take(k)
        .filter(|n| exact.contains(&n.id))
        .count() as f64
        / k as f64
}

/// Per-query exact neighbor lists of a fixed depth.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    depth: usize,
    rows: Vec<Vec<Neighbor>>,
}

impl GroundTruth {
    /// Exhaustive scan for every query, fanned out across threads.
    pub fn compute(ds: &VectorDataset, queries: &[Vec<f32>], depth: usize) -> Result<Self> {
        let depth = depth.min(ds.len());
        if depth == 0 {
            return Err(invalid("ground-truth depth must be positive"));
        }
        for q in queries {
            ds.check_query(q)?;
        }
        let rows = queries.par_iter().map(|q| scan(ds, q, depth)).collect();
        Ok(GroundTruth { depth, rows })
    }

    pub fn from_rows(rows: Vec<Vec<Neighbor>>) -> Result<Self> {
        let depth = rows.first().map(Vec::len).unwrap_or(0);
        if depth == 0 {
            return Err(invalid("ground truth needs at least one non-empty row"));
        }
        if rows.iter().any(|r| r.len() != depth) {
            return Err(invalid("ground-truth rows have unequal depth"));
        }
        Ok(GroundTruth { depth, rows })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, query: usize) -> &[Neighbor] {
        &self.rows[query]
    }

    /// First `k` entries of a row; `k` must not exceed the depth.
    pub fn top(&self, query: usize, k: usize) -> &[Neighbor] {
        &self.rows[query][..k]
    }

    pub fn global_optimum(&self, query: usize) -> VectorId {
        self.rows[query][0].id
    }

    /// Writes ids as ivecs and distances as fvecs, one record per query.
    pub fn save(&self, ids_path: &Path, dists_path: Option<&Path>) -> Result<()> {
        let ids: Vec<Vec<i32>> = self
            .rows
            .iter()
            .map(|r| r.iter().map(|n| n.id as i32).collect())
            .collect();
        vecio::write_ivecs(ids_path, ids.iter().map(Vec::as_slice))?;
        if let Some(p) = dists_path {
            let dists: Vec<Vec<f32>> = self
                .rows
                .iter()
                .map(|r| r.iter().map(|n| n.dist).collect())
                .collect();
            vecio::write_fvecs(p, dists.iter().map(Vec::as_slice))?;
        }
        Ok(())
    }

    /// Loads ids (and distances if present). Without a distance file, distances
    /// are recomputed against `queries`.
    pub fn load(
        ids_path: &Path,
        dists_path: Option<&Path>,
        ds: &VectorDataset,
        queries: &[Vec<f32>],
    ) -> Result<Self> {
        let ids = vecio::read_ivecs(ids_path)?;
        if ids.len() != queries.len() {
            return Err(invalid(format!(
                "ground truth has {} rows but there are {} queries",
                ids.len(),
                queries.len()
            )));
        }
        let dists: Option<Vec<Vec<f32>>> = match dists_path {
            Some(p) => {
                let (d, flat) = vecio::read_fvecs(p)?;
                Some(flat.chunks_exact(d).map(<[f32]>::to_vec).collect())
            }
            None => None,
        };
        let mut rows = Vec::with_capacity(ids.len());
        for (qi, row) in ids.iter().enumerate() {
            let mut out = Vec::with_capacity(row.len());
            for (j, &id) in row.iter().enumerate() {
                if id < 0 || id as usize >= ds.len() {
                    return Err(Error::InvalidInput(format!(
                        "ground-truth row {qi} references id {id} outside the dataset"
                    )));
                }
                let dist = match &dists {
                    Some(d) => d[qi][j],
                    None => ds.dist_to(id as VectorId, &queries[qi]),
                };
                out.push(Neighbor::new(id as VectorId, dist));
            }
            rows.push(out);
        }
        Self::from_rows(rows)
    }
}
