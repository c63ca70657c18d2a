//! Bounded-degree proximity graph: incremental construction with pluggable
//! edge pruning, and beam-limited greedy search.

use std::fmt;
use std::str::FromStr;

use crate::dataset::{VectorDataset, VectorId};
use crate::error::{invalid, Error, Result};
use crate::neighbor::Neighbor;

/// Pre-prune results kept per node in the construction log.
pub const CONSTRUCTION_LOG_DEPTH: usize = 50;

/// Edge selection rule applied to a distance-sorted candidate list.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PruneRule {
    /// Drop `c` if a kept `s` has `alpha * d(s, c) < d(q, c)`.
    RngAlpha,
    /// Drop `c` if a kept `s` makes an angle below 60 degrees with it at `q`.
    Mrng,
}

impl PruneRule {
    pub fn tag(self) -> u8 {
        match self {
            PruneRule::RngAlpha => 0,
            PruneRule::Mrng => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(PruneRule::RngAlpha),
            1 => Some(PruneRule::Mrng),
            _ => None,
        }
    }
}

impl fmt::Display for PruneRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PruneRule::RngAlpha => "rng_alpha",
            PruneRule::Mrng => "mrng",
        })
    }
}

impl FromStr for PruneRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "rng_alpha" | "rng" => Ok(PruneRule::RngAlpha),
            "mrng" => Ok(PruneRule::Mrng),
            other => Err(invalid(format!("unknown prune rule {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BuildParams {
    /// Beam width of the insertion search (L1).
    pub beam_width: usize,
    /// Maximum out-degree (r).
    pub max_degree: usize,
    /// Pruning slack, >= 1. Only used by [`PruneRule::RngAlpha`].
    pub alpha: f32,
    pub prune_rule: PruneRule,
}

impl Default for BuildParams {
    fn default() -> Self {
        BuildParams {
            beam_width: 100,
            max_degree: 12,
            alpha: 1.2,
            prune_rule: PruneRule::RngAlpha,
        }
    }
}

impl BuildParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_degree == 0 {
            return Err(invalid("max degree r must be at least 1"));
        }
        if self.beam_width < self.max_degree {
            return Err(invalid(format!(
                "construction beam L1 = {} must be >= r = {}",
                self.beam_width, self.max_degree
            )));
        }
        if !(self.alpha >= 1.0) || !self.alpha.is_finite() {
            return Err(invalid(format!("alpha = {} must be >= 1", self.alpha)));
        }
        Ok(())
    }
}

/// Adjacency lists over dataset ids plus the fixed search entry point.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProximityGraph {
    max_degree: usize,
    adjacency: Vec<Vec<VectorId>>,
    entry: VectorId,
}

impl ProximityGraph {
    /// Validates degree bound, self-loops, duplicates and id range.
    pub fn from_adjacency(
        adjacency: Vec<Vec<VectorId>>,
        max_degree: usize,
        entry: VectorId,
    ) -> Result<Self> {
        let n = adjacency.len();
        if n == 0 {
            return Err(invalid("graph must have at least one node"));
        }
        if entry as usize >= n {
            return Err(invalid(format!("entry {entry} out of range for {n} nodes")));
        }
        for (u, list) in adjacency.iter().enumerate() {
            if list.len() > max_degree {
                return Err(invalid(format!(
                    "node {u} has degree {} > r = {max_degree}",
                    list.len()
                )));
            }
            for (j, &v) in list.iter().enumerate() {
                if v as usize >= n {
                    return Err(invalid(format!("node {u} links to out-of-range id {v}")));
                }
                if v as usize == u {
                    return Err(invalid(format!("node {u} has a self-loop")));
                }
                if list[..j].contains(&v) {
                    return Err(invalid(format!("node {u} lists neighbor {v} twice")));
                }
            }
        }
        Ok(ProximityGraph {
            max_degree,
            adjacency,
            entry,
        })
    }

    /// Every node linked to every other node; entry is node 0.
    pub fn complete(n: usize) -> Self {
        let adjacency = (0..n as VectorId)
            .map(|u| (0..n as VectorId).filter(|&v| v != u).collect())
            .collect();
        ProximityGraph {
            max_degree: n.saturating_sub(1).max(1),
            adjacency,
            entry: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn entry(&self) -> VectorId {
        self.entry
    }

    #[inline]
    pub fn neighbors(&self, id: VectorId) -> &[VectorId] {
        &self.adjacency[id as usize]
    }

    pub fn adjacency(&self) -> &[Vec<VectorId>] {
        &self.adjacency
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }
}

/// Result of one search: the ranked top-k, every scored node, and the local optimum.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    /// At most `k` entries, ascending.
    pub results: Vec<Neighbor>,
    /// Every node whose distance to the query was computed, in scoring order.
    pub visited: Vec<Neighbor>,
    pub local_optimum: VectorId,
}

impl SearchOutcome {
    pub fn result_ids(&self) -> Vec<VectorId> {
        self.results.iter().map(|n| n.id).collect()
    }
}

pub(crate) struct VisitedBits(Vec<u64>);

impl VisitedBits {
    fn new(n: usize) -> Self {
        VisitedBits(vec![0; n.div_ceil(64)])
    }

    /// Marks `id`; returns false if it was already marked.
    #[inline]
    pub(crate) fn insert(&mut self, id: VectorId) -> bool {
        let (w, b) = ((id / 64) as usize, id % 64);
        let fresh = self.0[w] & (1 << b) == 0;
        self.0[w] |= 1 << b;
        fresh
    }
}

/// Sorted candidate pool of bounded capacity. Eviction drops the largest (dist, id).
struct BeamPool {
    items: Vec<(Neighbor, bool)>,
    capacity: usize,
    /// No unexpanded entry sits before this index.
    cursor: usize,
}

impl BeamPool {
    fn new(capacity: usize) -> Self {
        BeamPool {
            items: Vec::with_capacity(capacity + 1),
            capacity,
            cursor: 0,
        }
    }

    #[inline]
    fn offer(&mut self, cand: Neighbor) {
        if self.items.len() == self.capacity {
            match self.items.last() {
                Some((worst, _)) if cand >= *worst => return,
                _ => {}
            }
        }
        let pos = self.items.partition_point(|(n, _)| *n < cand);
        self.items.insert(pos, (cand, false));
        self.items.truncate(self.capacity);
        if pos < self.cursor {
            self.cursor = pos;
        }
    }

    fn next_unexpanded(&mut self) -> Option<VectorId> {
        while self.cursor < self.items.len() {
            let slot = &mut self.items[self.cursor];
            self.cursor += 1;
            if !slot.1 {
                slot.1 = true;
                return Some(slot.0.id);
            }
        }
        None
    }
}

pub(crate) fn search_adjacency(
    ds: &VectorDataset,
    adjacency: &[Vec<VectorId>],
    initial: &[VectorId],
    query: &[f32],
    beam: usize,
    k: usize,
) -> SearchOutcome {
    search_tracked(ds, adjacency, initial, query, beam, k).0
}

/// Like [`search_adjacency`] but also hands back the scored-node bitmap.
pub(crate) fn search_tracked(
    ds: &VectorDataset,
    adjacency: &[Vec<VectorId>],
    initial: &[VectorId],
    query: &[f32],
    beam: usize,
    k: usize,
) -> (SearchOutcome, VisitedBits) {
    let mut seen = VisitedBits::new(ds.len());
    let mut visited = Vec::new();
    let mut pool = BeamPool::new(beam);
    for &id in initial {
        if seen.insert(id) {
            let cand = Neighbor::new(id, ds.dist_to(id, query));
            visited.push(cand);
            pool.offer(cand);
        }
    }
    while let Some(c) = pool.next_unexpanded() {
        for &nb in &adjacency[c as usize] {
            if !seen.insert(nb) {
                continue;
            }
            let cand = Neighbor::new(nb, ds.dist_to(nb, query));
            visited.push(cand);
            pool.offer(cand);
        }
    }
    let results: Vec<Neighbor> = pool.items.iter().take(k).map(|(n, _)| *n).collect();
    let out = SearchOutcome {
        local_optimum: results[0].id,
        results,
        visited,
    };
    (out, seen)
}

pub(crate) fn check_search_args(
    ds: &VectorDataset,
    graph_len: usize,
    initial: &[VectorId],
    query: &[f32],
    beam: usize,
    k: usize,
) -> Result<()> {
    if graph_len != ds.len() {
        return Err(invalid(format!(
            "graph has {graph_len} nodes but dataset has {}",
            ds.len()
        )));
    }
    if k == 0 || k > beam {
        return Err(invalid(format!(
            "need 1 <= k <= L, got k = {k}, L = {beam}"
        )));
    }
    if initial.is_empty() {
        return Err(invalid("initial node set is empty"));
    }
    if let Some(bad) = initial.iter().find(|&&i| i as usize >= ds.len()) {
        return Err(invalid(format!("initial id {bad} out of range")));
    }
    ds.check_query(query)
}

/// Beam search over `graph` from `initial`.
///
/// Keeps a pool of at most `beam` candidates ordered by distance, repeatedly
/// expands the closest unexpanded one, and stops when every pool member has
/// been expanded.
pub fn greedy_search(
    ds: &VectorDataset,
    graph: &ProximityGraph,
    initial: &[VectorId],
    query: &[f32],
    beam: usize,
    k: usize,
) -> Result<SearchOutcome> {
    check_search_args(ds, graph.len(), initial, query, beam, k)?;
    Ok(search_adjacency(
        ds,
        &graph.adjacency,
        initial,
        query,
        beam,
        k,
    ))
}

/// Selects at most `max_degree` neighbors for `node` from `candidates`
/// (ascending by distance to `node`), nearest first.
///
/// The node itself and repeated ids are skipped.
pub fn prune(
    ds: &VectorDataset,
    node: VectorId,
    candidates: &[Neighbor],
    max_degree: usize,
    alpha: f32,
    rule: PruneRule,
) -> Vec<VectorId> {
    let mut kept: Vec<Neighbor> = Vec::with_capacity(max_degree);
    for &c in candidates {
        if kept.len() >= max_degree {
            break;
        }
        if c.id == node || kept.iter().any(|s| s.id == c.id) {
            continue;
        }
        let occluded = kept.iter().any(|s| {
            let between = ds.dist(s.id, c.id);
            match rule {
                PruneRule::RngAlpha => alpha * between < c.dist,
                PruneRule::Mrng => angle_below_60(s.dist, c.dist, between),
            }
        });
        if !occluded {
            kept.push(c);
        }
    }
    kept.into_iter().map(|n| n.id).collect()
}

/// Angle at the pivot between legs of length `a` and `b` with opposite side `c`.
fn angle_below_60(a: f32, b: f32, c: f32) -> bool {
    let (a, b, c) = (a as f64, b as f64, c as f64);
    if a <= 0.0 || b <= 0.0 {
        return c < b;
    }
    (a * a + b * b - c * c) / (2.0 * a * b) > 0.5
}

/// Per-node pre-prune search results recorded while building.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConstructionLog {
    entries: Vec<Vec<Neighbor>>,
}

impl ConstructionLog {
    pub fn from_entries(entries: Vec<Vec<Neighbor>>) -> Self {
        ConstructionLog { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: VectorId) -> &[Neighbor] {
        &self.entries[id as usize]
    }

    pub fn entries(&self) -> &[Vec<Neighbor>] {
        &self.entries
    }
}

/// Builds the proximity graph by inserting points in id order.
///
/// Each insertion searches the partial graph with beam `L1`, prunes the
/// scored set to at most `r` neighbors, links both directions, and re-prunes
/// any neighbor pushed over `r`. The first `min(L1, 50)` pre-prune results of
/// each insertion form its construction-log entry. Insertion searches start at
/// the medoid once it has been inserted and at node 0 before that; the
/// finished graph's entry point is the medoid.
pub fn build(
    ds: &VectorDataset,
    params: &BuildParams,
) -> Result<(ProximityGraph, ConstructionLog)> {
    params.validate()?;
    let n = ds.len();
    let r = params.max_degree;
    let medoid = ds.medoid();
    let log_depth = params.beam_width.min(CONSTRUCTION_LOG_DEPTH);
    let mut adjacency: Vec<Vec<VectorId>> = vec![Vec::new(); n];
    let mut log: Vec<Vec<Neighbor>> = vec![Vec::new(); n];

    for i in 1..n as VectorId {
        let start = if medoid < i { medoid } else { 0 };
        let point = ds.vector(i);
        let out = search_adjacency(
            ds,
            &adjacency,
            &[start],
            point,
            params.beam_width,
            log_depth,
        );
        let mut candidates = out.visited;
        candidates.sort_unstable();
        let chosen = prune(ds, i, &candidates, r, params.alpha, params.prune_rule);

        for &nb in &chosen {
            let list = &mut adjacency[nb as usize];
            if list.contains(&i) {
                continue;
            }
            list.push(i);
            if list.len() > r {
                let mut scored: Vec<Neighbor> = list
                    .iter()
                    .map(|&v| Neighbor::new(v, ds.dist(nb, v)))
                    .collect();
                scored.sort_unstable();
                *list = prune(ds, nb, &scored, r, params.alpha, params.prune_rule);
            }
        }
        adjacency[i as usize] = chosen;
        log[i as usize] = out.results;
    }

    let graph = ProximityGraph {
        max_degree: r,
        adjacency,
        entry: medoid,
    };
    Ok((graph, ConstructionLog { entries: log }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Metric;

    fn chain() -> (VectorDataset, ProximityGraph) {
        let ds =
            VectorDataset::from_rows(&[[0.0], [1.0], [2.0], [4.0]], Metric::Euclidean).unwrap();
        let g =
            ProximityGraph::from_adjacency(vec![vec![1], vec![0, 2], vec![1, 3], vec![2]], 2, 0)
                .unwrap();
        (ds, g)
    }

    #[test]
    fn chain_walks_to_far_end() {
        let (ds, g) = chain();
        let out = greedy_search(&ds, &g, &[0], &[4.1], 2, 1).unwrap();
        assert_eq!(out.local_optimum, 3);
        assert_eq!(out.results.len(), 1);
    }

    #[test]
    fn rejects_bad_arguments() {
        let (ds, g) = chain();
        assert!(greedy_search(&ds, &g, &[0], &[1.0], 2, 3).is_err());
        assert!(greedy_search(&ds, &g, &[], &[1.0], 2, 1).is_err());
        assert!(greedy_search(&ds, &g, &[9], &[1.0], 2, 1).is_err());
        assert!(greedy_search(&ds, &g, &[0], &[1.0, 2.0], 2, 1).is_err());
    }

    #[test]
    fn from_adjacency_validates() {
        assert!(ProximityGraph::from_adjacency(vec![vec![0]], 1, 0).is_err());
        assert!(ProximityGraph::from_adjacency(vec![vec![1, 1], vec![]], 2, 0).is_err());
        assert!(ProximityGraph::from_adjacency(vec![vec![1, 2], vec![], vec![]], 1, 0).is_err());
        assert!(ProximityGraph::from_adjacency(vec![vec![5]], 1, 0).is_err());
    }

    #[test]
    fn collinear_candidates_keep_only_nearest() {
        let ds =
            VectorDataset::from_rows(&[[0.0], [1.0], [2.0], [3.0]], Metric::Euclidean).unwrap();
        let cands: Vec<Neighbor> = (1..4).map(|i| Neighbor::new(i, i as f32)).collect();
        assert_eq!(prune(&ds, 0, &cands, 3, 1.0, PruneRule::RngAlpha), vec![1]);
        assert_eq!(prune(&ds, 0, &cands, 3, 1.0, PruneRule::Mrng), vec![1]);
    }

    #[test]
    fn degree_cap_of_one_keeps_nearest() {
        let ds = VectorDataset::from_rows(
            &[[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [-3.0, 0.0]],
            Metric::Euclidean,
        )
        .unwrap();
        let cands = vec![
            Neighbor::new(1, 1.0),
            Neighbor::new(2, 2.0),
            Neighbor::new(3, 3.0),
        ];
        assert_eq!(prune(&ds, 0, &cands, 1, 1.2, PruneRule::RngAlpha), vec![1]);
        // orthogonal and opposite directions all survive a large cap
        assert_eq!(
            prune(&ds, 0, &cands, 3, 1.0, PruneRule::Mrng),
            vec![1, 2, 3]
        );
    }

    #[test]
    fn single_point_build() {
        let ds = VectorDataset::from_rows(&[[1.0, 2.0]], Metric::Euclidean).unwrap();
        let (g, log) = build(&ds, &BuildParams::default()).unwrap();
        assert_eq!(g.len(), 1);
        assert!(g.neighbors(0).is_empty());
        assert_eq!(log.len(), 1);
        assert!(log.entry(0).is_empty());
    }

    #[test]
    fn build_params_validation() {
        let mut p = BuildParams::default();
        p.beam_width = 4;
        assert!(p.validate().is_err());
        let mut p = BuildParams::default();
        p.alpha = 0.9;
        assert!(p.validate().is_err());
    }
}
