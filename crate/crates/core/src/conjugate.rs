//! The conjugate graph: an auxiliary per-node edge store that holds pruned
//! near-neighbor edges from the construction log and local-to-global routing
//! edges learned from search logs, plus the two-stage search that uses it.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::dataset::{VectorDataset, VectorId};
use crate::error::{invalid, Result};
use crate::graph::{
    check_search_args, search_adjacency, search_tracked, ConstructionLog, ProximityGraph,
    SearchOutcome,
};
use crate::neighbor::Neighbor;

/// Result depth used for the probe searches; only the local optimum is consumed.
pub const PROBE_RESULT_DEPTH: usize = 10;

/// Where a conjugate edge came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeSource {
    Construction,
    GeneratedLog,
    HistoricalLog,
}

impl EdgeSource {
    pub fn tag(self) -> u8 {
        match self {
            EdgeSource::Construction => 0,
            EdgeSource::GeneratedLog => 1,
            EdgeSource::HistoricalLog => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(EdgeSource::Construction),
            1 => Some(EdgeSource::GeneratedLog),
            2 => Some(EdgeSource::HistoricalLog),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoutingEdge {
    pub target: VectorId,
    pub source: EdgeSource,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConjugateGraph {
    construction: Vec<Vec<VectorId>>,
    routing: Vec<Vec<RoutingEdge>>,
    route_cap: usize,
}

impl ConjugateGraph {
    /// No edges at all; `route_cap` bounds routing out-degree per node unless
    /// historical edges alone exceed it.
    pub fn empty(n: usize, route_cap: usize) -> Self {
        ConjugateGraph {
            construction: vec![Vec::new(); n],
            routing: vec![Vec::new(); n],
            route_cap,
        }
    }

    /// Assembles a conjugate graph from stored parts, checking ids and
    /// disjointness of construction edges from `graph`.
    pub fn from_parts(
        graph: &ProximityGraph,
        construction: Vec<Vec<VectorId>>,
        routing: Vec<Vec<RoutingEdge>>,
        route_cap: usize,
    ) -> Result<Self> {
        let n = graph.len();
        if construction.len() != n || routing.len() != n {
            return Err(invalid("conjugate edge lists do not match node count"));
        }
        for u in 0..n {
            let own = graph.neighbors(u as VectorId);
            for &v in &construction[u] {
                if v as usize >= n || v as usize == u {
                    return Err(invalid(format!("bad construction edge {u} -> {v}")));
                }
                if own.contains(&v) {
                    return Err(invalid(format!(
                        "construction edge {u} -> {v} duplicates a proximity edge"
                    )));
                }
            }
            let historical = routing[u]
                .iter()
                .filter(|e| e.source == EdgeSource::HistoricalLog)
                .count();
            if routing[u].len() > historical.max(route_cap) {
                return Err(invalid(format!("node {u} exceeds routing cap {route_cap}")));
            }
            for e in &routing[u] {
                if e.target as usize >= n || e.target as usize == u {
                    return Err(invalid(format!("bad routing edge {u} -> {}", e.target)));
                }
                if e.source == EdgeSource::Construction {
                    return Err(invalid("routing edge tagged as construction"));
                }
            }
        }
        Ok(ConjugateGraph {
            construction,
            routing,
            route_cap,
        })
    }

    pub fn len(&self) -> usize {
        self.construction.len()
    }

    pub fn is_empty(&self) -> bool {
        self.construction.is_empty()
    }

    pub fn route_cap(&self) -> usize {
        self.route_cap
    }

    pub fn construction_edges(&self, id: VectorId) -> &[VectorId] {
        &self.construction[id as usize]
    }

    pub fn routing_edges(&self, id: VectorId) -> &[RoutingEdge] {
        &self.routing[id as usize]
    }

    /// Construction targets followed by routing targets, without repeats.
    pub fn neighbors(&self, id: VectorId) -> Vec<VectorId> {
        let mut out = self.construction[id as usize].clone();
        for e in &self.routing[id as usize] {
            if !out.contains(&e.target) {
                out.push(e.target);
            }
        }
        out
    }

    /// Out-degree in the conjugate graph (both partitions).
    pub fn degree(&self, id: VectorId) -> usize {
        self.neighbors(id).len()
    }

    pub fn construction_edge_count(&self) -> usize {
        self.construction.iter().map(Vec::len).sum()
    }

    pub fn routing_edge_count(&self, source: Option<EdgeSource>) -> usize {
        self.routing
            .iter()
            .flatten()
            .filter(|e| source.is_none_or(|s| e.source == s))
            .count()
    }

    /// Every routing edge as `(from, to, source)`, sorted.
    pub fn routing_triples(&self) -> Vec<(VectorId, VectorId, EdgeSource)> {
        let mut out: Vec<_> = self
            .routing
            .iter()
            .enumerate()
            .flat_map(|(u, list)| {
                list.iter()
                    .map(move |e| (u as VectorId, e.target, e.source))
            })
            .collect();
        out.sort_unstable();
        out
    }
}

/// Turns the construction log into construction edges: each node keeps its
/// logged neighbors that are not already proximity neighbors, nearest first,
/// capped at the graph's max degree.
pub fn finalize_construction_log(
    graph: &ProximityGraph,
    log: &ConstructionLog,
) -> Result<ConjugateGraph> {
    if log.len() != graph.len() {
        return Err(invalid(format!(
            "construction log has {} entries for {} nodes",
            log.len(),
            graph.len()
        )));
    }
    let cap = graph.max_degree();
    let construction = (0..graph.len() as VectorId)
        .map(|u| {
            let own = graph.neighbors(u);
            let mut kept: Vec<VectorId> = Vec::new();
            for n in log.entry(u) {
                if kept.len() == cap {
                    break;
                }
                if n.id != u && !own.contains(&n.id) && !kept.contains(&n.id) {
                    kept.push(n.id);
                }
            }
            kept
        })
        .collect();
    Ok(ConjugateGraph {
        construction,
        routing: vec![Vec::new(); graph.len()],
        route_cap: cap,
    })
}

/// One recorded search: the query, the beam it ran with, where it converged,
/// and its true nearest neighbor.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchLogEntry {
    pub query: Vec<f32>,
    pub beam: usize,
    pub local_opt: VectorId,
    pub global_opt: VectorId,
}

/// Probe generation settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenParams {
    /// Weight of the base point in a probe, in (0.5, 1).
    pub omega: f64,
    /// Probes per base point (k_g); 0 disables probing.
    pub queries_per_base: usize,
    /// Beam width of the probe searches (L2).
    pub beam: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            omega: 0.51,
            queries_per_base: 5,
            beam: 100,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.5 && self.omega < 1.0) {
            return Err(invalid(format!(
                "omega = {} must lie in (0.5, 1)",
                self.omega
            )));
        }
        if self.beam == 0 {
            return Err(invalid("probe beam L2 must be at least 1"));
        }
        Ok(())
    }
}

/// `omega * base + (1 - omega) * other`, componentwise.
pub fn generate_query(base: &[f32], other: &[f32], omega: f64) -> Result<Vec<f32>> {
    if base.len() != other.len() {
        return Err(invalid(format!(
            "dimension mismatch: {} vs {}",
            base.len(),
            other.len()
        )));
    }
    if !(omega > 0.5 && omega < 1.0) {
        return Err(invalid(format!("omega = {omega} must lie in (0.5, 1)")));
    }
    Ok(blend(base, other, omega))
}

pub(crate) fn blend(base: &[f32], other: &[f32], omega: f64) -> Vec<f32> {
    base.iter()
        .zip(other)
        .map(|(&b, &k)| (omega * b as f64 + (1.0 - omega) * k as f64) as f32)
        .collect()
}

/// Approximate k-NN of a base point: proximity neighbors together with
/// construction edges, nearest `k` by distance.
pub fn approximate_knn(
    ds: &VectorDataset,
    graph: &ProximityGraph,
    conj: &ConjugateGraph,
    id: VectorId,
    k: usize,
) -> Vec<Neighbor> {
    let mut out: Vec<Neighbor> = graph
        .neighbors(id)
        .iter()
        .chain(conj.construction_edges(id))
        .map(|&v| Neighbor::new(v, ds.dist(id, v)))
        .collect();
    out.sort_unstable();
    out.dedup_by_key(|n| n.id);
    out.truncate(k);
    out
}

/// A self-generated probe and what the proximity graph did with it.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub base: VectorId,
    pub partner: VectorId,
    pub query: Vec<f32>,
    pub local_opt: VectorId,
    /// Nearest of the base point and its approximate neighbors.
    pub approx_global_opt: VectorId,
}

/// Generates and runs the `k_g` probes of one base point.
pub fn probe_base_point(
    ds: &VectorDataset,
    graph: &ProximityGraph,
    conj: &ConjugateGraph,
    gp: &GenParams,
    base: VectorId,
) -> Vec<Probe> {
    let ann = approximate_knn(ds, graph, conj, base, gp.queries_per_base);
    let k = PROBE_RESULT_DEPTH.min(gp.beam);
    ann.iter()
        .map(|partner| {
            let query = blend(ds.vector(base), ds.vector(partner.id), gp.omega);
            let out = search_adjacency(ds, graph.adjacency(), &[graph.entry()], &query, gp.beam, k);
            let approx_global_opt = std::iter::once(base)
                .chain(ann.iter().map(|n| n.id))
                .map(|v| Neighbor::new(v, ds.dist_to(v, &query)))
                .min()
                .map(|n| n.id)
                .unwrap_or(base);
            Probe {
                base,
                partner: partner.id,
                query,
                local_opt: out.local_optimum,
                approx_global_opt,
            }
        })
        .collect()
}

/// Routing edges added (after dedup) and evicted by an update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct UpdateStats {
    pub historical_added: usize,
    pub generated_added: usize,
    pub evicted: usize,
    pub probes: usize,
}

/// Learns routing edges from historical search logs and self-generated probes.
///
/// Every historical entry whose local optimum differs from its global optimum
/// yields a directed edge `local -> global`. For each base point, one probe is
/// formed per approximate neighbor; when the probe's greedy local optimum is
/// not the nearest of the base point and those neighbors, an edge from the
/// local optimum to that nearest point is added. Edges are deduplicated, with
/// a historical tag taking precedence over a generated one. Historical edges
/// are never evicted; generated edges fill the remaining slots up to
/// `route_cap`, nearest to the source first.
pub fn update_from_logs(
    ds: &VectorDataset,
    graph: &ProximityGraph,
    conj: &ConjugateGraph,
    gp: &GenParams,
    historical: &[SearchLogEntry],
) -> Result<(ConjugateGraph, UpdateStats)> {
    let n = graph.len();
    if ds.len() != n || conj.len() != n {
        return Err(invalid(
            "dataset, proximity graph and conjugate graph sizes differ",
        ));
    }
    if gp.queries_per_base > 0 {
        gp.validate()?;
    }
    for (i, e) in historical.iter().enumerate() {
        if e.local_opt as usize >= n || e.global_opt as usize >= n {
            return Err(invalid(format!(
                "log entry {i} references an id outside the dataset"
            )));
        }
        if e.beam == 0 {
            return Err(invalid(format!("log entry {i} has beam 0")));
        }
    }

    let mut learned: Vec<(VectorId, VectorId, EdgeSource)> = historical
        .iter()
        .filter(|e| e.local_opt != e.global_opt)
        .map(|e| (e.local_opt, e.global_opt, EdgeSource::HistoricalLog))
        .collect();

    let mut probes = 0usize;
    if gp.queries_per_base > 0 {
        let per_base: Vec<Vec<Probe>> = (0..n as VectorId)
            .into_par_iter()
            .map(|b| probe_base_point(ds, graph, conj, gp, b))
            .collect();
        for p in per_base.iter().flatten() {
            probes += 1;
            if p.local_opt != p.approx_global_opt {
                learned.push((p.local_opt, p.approx_global_opt, EdgeSource::GeneratedLog));
            }
        }
    }

    let mut stats = UpdateStats {
        probes,
        ..UpdateStats::default()
    };
    let mut by_source: BTreeMap<VectorId, BTreeMap<VectorId, EdgeSource>> = BTreeMap::new();
    for (u, list) in conj.routing.iter().enumerate() {
        if !list.is_empty() {
            let slot = by_source.entry(u as VectorId).or_default();
            for e in list {
                slot.insert(e.target, e.source);
            }
        }
    }
    for (from, to, source) in learned {
        let slot = by_source.entry(from).or_default();
        match slot.get(&to) {
            None => {
                slot.insert(to, source);
                match source {
                    EdgeSource::HistoricalLog => stats.historical_added += 1,
                    _ => stats.generated_added += 1,
                }
            }
            Some(&existing) if source > existing => {
                slot.insert(to, source);
            }
            _ => {}
        }
    }

    let mut routing = vec![Vec::new(); n];
    for (from, targets) in by_source {
        let mut edges: Vec<(bool, Neighbor, EdgeSource)> = targets
            .into_iter()
            .map(|(to, s)| {
                (
                    s != EdgeSource::HistoricalLog,
                    Neighbor::new(to, ds.dist(from, to)),
                    s,
                )
            })
            .collect();
        edges.sort_unstable_by_key(|a| (a.0, a.1));
        let historical = edges.iter().take_while(|e| !e.0).count();
        let keep = historical.max(conj.route_cap);
        if edges.len() > keep {
            stats.evicted += edges.len() - keep;
            edges.truncate(keep);
        }
        edges.sort_unstable_by_key(|a| a.1);
        routing[from as usize] = edges
            .into_iter()
            .map(|(_, nb, source)| RoutingEdge {
                target: nb.id,
                source,
            })
            .collect();
    }

    let updated = ConjugateGraph {
        construction: conj.construction.clone(),
        routing,
        route_cap: conj.route_cap,
    };
    Ok((updated, stats))
}

/// Greedy search on the proximity graph followed by two conjugate hops.
///
/// The first hop moves from the local optimum to the nearest of itself and
/// its conjugate neighbors; the second merges that node and its conjugate
/// neighbors into the result pool before taking the top `k`.
pub fn enhanced_search(
    ds: &VectorDataset,
    graph: &ProximityGraph,
    conj: &ConjugateGraph,
    initial: &[VectorId],
    query: &[f32],
    beam: usize,
    k: usize,
) -> Result<SearchOutcome> {
    check_search_args(ds, graph.len(), initial, query, beam, k)?;
    if conj.len() != graph.len() {
        return Err(invalid("conjugate graph size differs from proximity graph"));
    }
    let (base, mut seen) = search_tracked(ds, graph.adjacency(), initial, query, beam, k);
    let SearchOutcome {
        results,
        mut visited,
        local_optimum,
    } = base;

    let mut scored: Vec<Neighbor> = Vec::new();
    let mut score = |id: VectorId, scored: &mut Vec<Neighbor>| -> Neighbor {
        if let Some(n) = scored.iter().find(|n| n.id == id) {
            return *n;
        }
        let n = Neighbor::new(id, ds.dist_to(id, query));
        scored.push(n);
        if seen.insert(id) {
            visited.push(n);
        }
        n
    };

    let mut hop = score(local_optimum, &mut scored);
    for v in conj.neighbors(local_optimum) {
        hop = hop.min(score(v, &mut scored));
    }

    let mut pool = results;
    let mut extra = vec![hop];
    for v in conj.neighbors(hop.id) {
        extra.push(score(v, &mut scored));
    }
    for n in extra {
        if !pool.iter().any(|p| p.id == n.id) {
            pool.push(n);
        }
    }
    pool.sort_unstable();
    pool.truncate(k);

    Ok(SearchOutcome {
        local_optimum: pool[0].id,
        results: pool,
        visited,
    })
}
