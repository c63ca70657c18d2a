//! Diagnostic analyses over a built index, scored against the exhaustive oracle:
//! where greedy search gets stuck, how much neighborhoods overlap, how often
//! similar queries share a local optimum, how probes land, and QPS/recall sweeps.

use std::collections::{BTreeMap, HashSet};
use std::io::{self, Write};
use std::time::Instant;

use rayon::prelude::*;

use crate::conjugate::{blend, enhanced_search, ConjugateGraph};
use crate::dataset::{VectorDataset, VectorId};
use crate::error::{invalid, Result};
use crate::graph::{greedy_search, search_adjacency, ProximityGraph};
use crate::neighbor::Neighbor;
use crate::oracle::{recall_vs_truth, scan, GroundTruth};

/// Default noise scale for rank-analysis queries, as a fraction of eta.
pub const RANK_QUERY_NOISE: f64 = 0.06;

/// Exact neighbors of base point `id`, excluding itself, nearest first.
fn neighbors_of_base(ds: &VectorDataset, id: VectorId, k: usize) -> Vec<Neighbor> {
    let depth = (k + 1).min(ds.len());
    let mut out = scan(ds, ds.vector(id), depth);
    out.retain(|n| n.id != id);
    out.truncate(k);
    out
}

/// How far (in the global optimum's own neighbor ranking) failed searches stopped.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RankHistogram {
    /// `counts[r - 1]` = failing queries whose local optimum is the r-th neighbor.
    pub counts: Vec<usize>,
    /// Failing queries whose local optimum is outside the top `counts.len()`.
    pub overflow: usize,
    /// Queries whose local optimum was the global optimum.
    pub successes: usize,
}

impl RankHistogram {
    pub fn failing(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.overflow
    }

    /// Fraction of failing queries whose local optimum has rank <= `rank`.
    pub fn share_within(&self, rank: usize) -> f64 {
        let f = self.failing();
        if f == 0 {
            return 0.0;
        }
        self.counts.iter().take(rank).sum::<usize>() as f64 / f as f64
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "rank,count")?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(w, "{},{}", i + 1, c)?;
        }
        writeln!(w, "overflow,{}", self.overflow)
    }
}

/// Rank of each failing query's local optimum among its global optimum's
/// exact neighbors (nearest neighbor = rank 1), up to depth `max_rank`.
pub fn local_optimum_rank(
    ds: &VectorDataset,
    graph: &ProximityGraph,
    queries: &[Vec<f32>],
    truth: &GroundTruth,
    beam: usize,
    max_rank: usize,
) -> Result<RankHistogram> {
    if truth.len() != queries.len() {
        return Err(invalid("ground truth and query counts differ"));
    }
    if max_rank == 0 {
        return Err(invalid("max_rank must be positive"));
    }
    let per_query: Vec<Option<Option<usize>>> = queries
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            let out = greedy_search(ds, graph, &[graph.entry()], q, beam, 1)?;
            let global = truth.global_optimum(i);
            if out.local_optimum == global {
                return Ok(None);
            }
            let ranked = neighbors_of_base(ds, global, max_rank);
            Ok(Some(
                ranked
                    .iter()
                    .position(|n| n.id == out.local_optimum)
                    .map(|p| p + 1),
            ))
        })
        .collect::<Result<_>>()?;

    let mut hist = RankHistogram {
        counts: vec![0; max_rank],
        ..RankHistogram::default()
    };
    for r in per_query {
        match r {
            None => hist.successes += 1,
            Some(Some(rank)) => hist.counts[rank - 1] += 1,
            Some(None) => hist.overflow += 1,
        }
    }
    Ok(hist)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OverlapStats {
    pub k: usize,
    pub mean: f64,
    pub per_query: Vec<f64>,
}

/// Per query, `|NN_k(q) ∩ NN_k(x_g)| / k` where `x_g` is the query's exact
/// nearest neighbor and `NN_k(x_g)` includes `x_g` itself.
pub fn knn_overlap_rate(
    ds: &VectorDataset,
    queries: &[Vec<f32>],
    k: usize,
) -> Result<OverlapStats> {
    if k == 0 || k > ds.len() {
        return Err(invalid(format!("k = {k} must be in 1..={}", ds.len())));
    }
    if queries.is_empty() {
        return Err(invalid("no queries"));
    }
    for q in queries {
        ds.check_query(q)?;
    }
    let per_query: Vec<f64> = queries
        .par_iter()
        .map(|q| {
            let nq = scan(ds, q, k);
            let global = nq[0].id;
            let ng: HashSet<VectorId> = scan(ds, ds.vector(global), k)
                .iter()
                .map(|n| n.id)
                .collect();
            nq.iter().filter(|n| ng.contains(&n.id)).count() as f64 / k as f64
        })
        .collect();
    let mean = per_query.iter().sum::<f64>() / per_query.len() as f64;
    Ok(OverlapStats { k, mean, per_query })
}

/// Shares of failing probes by the local optimum they converged to.
///
/// The denominator counts probes that landed on an optimum reached at least
/// twice, so `max_share + other_shared_share == 1` whenever such an optimum
/// exists and `singleton_share` is reported on the same scale. With no shared
/// optimum at all the denominator is the failing-probe count, giving (0, 0, 1).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Shares {
    pub max_share: f64,
    pub other_shared_share: f64,
    pub singleton_share: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct ShareCounts {
    max: usize,
    other_shared: usize,
    singleton: usize,
}

impl ShareCounts {
    fn of(optima: &[VectorId]) -> Self {
        let mut hist: BTreeMap<VectorId, usize> = BTreeMap::new();
        for &o in optima {
            *hist.entry(o).or_default() += 1;
        }
        let mut counts = ShareCounts::default();
        // BTreeMap iterates ids ascending, so the first maximal count wins ties
        let modal = hist.iter().filter(|(_, &c)| c >= 2).fold(
            None,
            |best: Option<(VectorId, usize)>, (&id, &c)| match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((id, c)),
            },
        );
        for (&id, &c) in &hist {
            if c < 2 {
                counts.singleton += c;
            } else if modal.map(|m| m.0) == Some(id) {
                counts.max += c;
            } else {
                counts.other_shared += c;
            }
        }
        counts
    }

    fn add(&mut self, other: ShareCounts) {
        self.max += other.max;
        self.other_shared += other.other_shared;
        self.singleton += other.singleton;
    }

    fn shares(self) -> Option<Shares> {
        let shared = self.max + self.other_shared;
        let denom = if shared > 0 { shared } else { self.singleton };
        if denom == 0 {
            return None;
        }
        let d = denom as f64;
        Some(Shares {
            max_share: self.max as f64 / d,
            other_shared_share: self.other_shared as f64 / d,
            singleton_share: self.singleton as f64 / d,
        })
    }
}

/// Shares for one group of failing-probe local optima; `None` when empty.
pub fn convergence_shares(failing_optima: &[VectorId]) -> Option<Shares> {
    ShareCounts::of(failing_optima).shares()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupConvergence {
    pub base: VectorId,
    /// Local optimum -> number of failing probes that converged there.
    pub histogram: BTreeMap<VectorId, usize>,
    pub shares: Shares,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceStats {
    /// Groups with at least one failing probe.
    pub groups: Vec<GroupConvergence>,
    /// Shares over the pooled counts of every group.
    pub pooled: Option<Shares>,
}

/// Aggregates `(base point, local optima of its probes)` groups. A probe fails
/// when its local optimum is not its base point.
pub fn convergence_from_outcomes(groups: &[(VectorId, Vec<VectorId>)]) -> ConvergenceStats {
    let mut pooled = ShareCounts::default();
    let mut out = Vec::new();
    for (base, optima) in groups {
        let failing: Vec<VectorId> = optima.iter().copied().filter(|o| o != base).collect();
        let counts = ShareCounts::of(&failing);
        let Some(shares) = counts.shares() else {
            continue;
        };
        pooled.add(counts);
        let mut histogram = BTreeMap::new();
        for o in failing {
            *histogram.entry(o).or_default() += 1;
        }
        out.push(GroupConvergence {
            base: *base,
            histogram,
            shares,
        });
    }
    ConvergenceStats {
        groups: out,
        pooled: pooled.shares(),
    }
}

/// Runs every probe of every group through greedy search and aggregates
/// where the failing ones converged.
pub fn same_local_optimum_rate(
    ds: &VectorDataset,
    graph: &ProximityGraph,
    groups: &[(VectorId, Vec<Vec<f32>>)],
    beam: usize,
) -> Result<ConvergenceStats> {
    if let Some((b, _)) = groups.iter().find(|(_, p)| p.len() < 2) {
        return Err(invalid(format!("base point {b} has fewer than two probes")));
    }
    let outcomes: Vec<(VectorId, Vec<VectorId>)> = groups
        .par_iter()
        .map(|(base, probes)| {
            let optima = probes
                .iter()
                .map(|q| {
                    greedy_search(ds, graph, &[graph.entry()], q, beam, 1).map(|o| o.local_optimum)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((*base, optima))
        })
        .collect::<Result<_>>()?;
    Ok(convergence_from_outcomes(&outcomes))
}

impl ConvergenceStats {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(
            w,
            "base,failing,max_share,other_shared_share,singleton_share"
        )?;
        for g in &self.groups {
            let failing: usize = g.histogram.values().sum();
            writeln!(
                w,
                "{},{},{:.6},{:.6},{:.6}",
                g.base,
                failing,
                g.shares.max_share,
                g.shares.other_shared_share,
                g.shares.singleton_share
            )?;
        }
        if let Some(p) = self.pooled {
            writeln!(
                w,
                "all,{},{:.6},{:.6},{:.6}",
                self.groups
                    .iter()
                    .map(|g| g.histogram.values().sum::<usize>())
                    .sum::<usize>(),
                p.max_share,
                p.other_shared_share,
                p.singleton_share
            )?;
        }
        Ok(())
    }
}

/// Where probes generated at one `omega` converged.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShotRate {
    pub omega: f64,
    pub probes: usize,
    /// Local optimum was the generating base point.
    pub global_hit: f64,
    /// Local optimum was the base point's exact nearest neighbor.
    pub nn_hit: f64,
    pub other: f64,
}

/// Classifies greedy local optima of probes `omega * x_b + (1 - omega) * x_k`
/// built from each sampled base point and its `partners` exact nearest
/// neighbors.
pub fn shot_rate(
    ds: &VectorDataset,
    graph: &ProximityGraph,
    omegas: &[f64],
    partners: usize,
    beam: usize,
    bases: &[VectorId],
) -> Result<Vec<ShotRate>> {
    if partners == 0 || partners >= ds.len() {
        return Err(invalid("partners must be in 1..n"));
    }
    if beam == 0 {
        return Err(invalid("beam must be positive"));
    }
    if let Some(&b) = bases.iter().find(|&&b| b as usize >= ds.len()) {
        return Err(invalid(format!("base id {b} out of range")));
    }
    if let Some(&w) = omegas.iter().find(|&&w| !(w > 0.5 && w < 1.0)) {
        return Err(invalid(format!("omega = {w} must lie in (0.5, 1)")));
    }
    let neighborhoods: Vec<Vec<Neighbor>> = bases
        .par_iter()
        .map(|&b| neighbors_of_base(ds, b, partners))
        .collect();
    let rates = omegas
        .iter()
        .map(|&omega| {
            let tallies: Vec<[usize; 3]> = bases
                .par_iter()
                .zip(&neighborhoods)
                .map(|(&b, nbrs)| {
                    let mut t = [0usize; 3];
                    for p in nbrs {
                        let q = blend(ds.vector(b), ds.vector(p.id), omega);
                        let lo =
                            search_adjacency(ds, graph.adjacency(), &[graph.entry()], &q, beam, 1)
                                .local_optimum;
                        let slot = if lo == b {
                            0
                        } else if lo == nbrs[0].id {
                            1
                        } else {
                            2
                        };
                        t[slot] += 1;
                    }
                    t
                })
                .collect();
            let t = tallies
                .iter()
                .fold([0usize; 3], |a, b| [a[0] + b[0], a[1] + b[1], a[2] + b[2]]);
            let total = (t[0] + t[1] + t[2]).max(1) as f64;
            ShotRate {
                omega,
                probes: t[0] + t[1] + t[2],
                global_hit: t[0] as f64 / total,
                nn_hit: t[1] as f64 / total,
                other: t[2] as f64 / total,
            }
        })
        .collect();
    Ok(rates)
}

pub fn write_shot_rate_csv<W: Write>(rates: &[ShotRate], mut w: W) -> io::Result<()> {
    writeln!(w, "omega,probes,global_hit,nn_hit,other")?;
    for r in rates {
        writeln!(
            w,
            "{},{},{:.6},{:.6},{:.6}",
            r.omega, r.probes, r.global_hit, r.nn_hit, r.other
        )?;
    }
    Ok(())
}

/// One row of a time-accuracy sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub beam: usize,
    pub qps: f64,
    pub recall1: f64,
    pub recall10: f64,
    pub mean_visited: f64,
}

/// Runs every query at each beam width on a single thread, with the conjugate
/// graph when given, and reports throughput and mean Recall@1 / Recall@10.
/// The search returns `min(k, L)` results; Recall@10 requires `k >= 10`.
pub fn qps_recall_sweep(
    ds: &VectorDataset,
    graph: &ProximityGraph,
    conj: Option<&ConjugateGraph>,
    queries: &[Vec<f32>],
    truth: &GroundTruth,
    beams: &[usize],
    k: usize,
) -> Result<Vec<SweepPoint>> {
    if queries.is_empty() {
        return Err(invalid("no queries"));
    }
    if truth.len() != queries.len() {
        return Err(invalid("ground truth and query counts differ"));
    }
    if k < 10 || truth.depth() < 10 {
        return Err(invalid("sweep needs k >= 10 and ground truth depth >= 10"));
    }
    let entry = [graph.entry()];
    let mut points = Vec::with_capacity(beams.len());
    for &beam in beams {
        let kk = k.min(beam);
        let start = Instant::now();
        let mut outs = Vec::with_capacity(queries.len());
        for q in queries {
            let out = match conj {
                Some(c) => enhanced_search(ds, graph, c, &entry, q, beam, kk)?,
                None => greedy_search(ds, graph, &entry, q, beam, kk)?,
            };
            outs.push(out);
        }
        let elapsed = start.elapsed().as_secs_f64().max(1e-9);
        let m = queries.len() as f64;
        let (mut r1, mut r10, mut vis) = (0.0, 0.0, 0.0);
        for (i, o) in outs.iter().enumerate() {
            r1 += recall_vs_truth(&o.results, truth.row(i), 1);
            r10 += recall_vs_truth(&o.results, truth.row(i), 10);
            vis += o.visited.len() as f64;
        }
        points.push(SweepPoint {
            beam,
            qps: m / elapsed,
            recall1: r1 / m,
            recall10: r10 / m,
            mean_visited: vis / m,
        });
    }
    Ok(points)
}

pub fn write_sweep_csv<W: Write>(label: &str, points: &[SweepPoint], mut w: W) -> io::Result<()> {
    writeln!(w, "method,L,qps,recall1,recall10,mean_visited")?;
    for p in points {
        writeln!(
            w,
            "{label},{},{:.2},{:.6},{:.6},{:.2}",
            p.beam, p.qps, p.recall1, p.recall10, p.mean_visited
        )?;
    }
    Ok(())
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            ranks[t] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties; 0 when either side is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}
