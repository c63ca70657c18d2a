mod common;

use std::collections::HashSet;

use common::{batch_recall, gaussian_instance, params, Instance};
use conjgraph::conjugate::probe_base_point;
use conjgraph::oracle::recall_vs_truth;
use conjgraph::{
    enhanced_search, exact_knn, generate_noisy_queries, greedy_search, update_from_logs,
    ConjugateGraph, EdgeSource, GenParams, GroundTruth, Metric, ProximityGraph, SearchLogEntry,
    VectorDataset, VectorId,
};
use proptest::prelude::*;

fn no_probes() -> GenParams {
    GenParams {
        queries_per_base: 0,
        ..GenParams::default()
    }
}

fn log_for(inst: &Instance, queries: &[Vec<f32>], beam: usize) -> Vec<SearchLogEntry> {
    let entry = [inst.graph.entry()];
    queries
        .iter()
        .map(|q| SearchLogEntry {
            query: q.clone(),
            beam,
            local_opt: greedy_search(&inst.ds, &inst.graph, &entry, q, beam, 1)
                .unwrap()
                .local_optimum,
            global_opt: exact_knn(&inst.ds, q, 1).unwrap()[0].id,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn enhanced_never_loses_recall(seed in any::<u64>(), beam in 10usize..40, kg in 0usize..3, logged in 0usize..40) {
        let inst = gaussian_instance(400, 12, seed, &params(24, 6));
        let queries = generate_noisy_queries(&inst.ds, 0.5, 1, seed ^ 7).unwrap();
        let log = log_for(&inst, &queries[..logged], 10);
        let gp = GenParams { queries_per_base: kg, beam: 10, ..GenParams::default() };
        let (conj, _) = update_from_logs(&inst.ds, &inst.graph, &inst.conj, &gp, &log).unwrap();
        let entry = [inst.graph.entry()];
        for q in &queries[..60] {
            let truth = exact_knn(&inst.ds, q, 10).unwrap();
            let base = greedy_search(&inst.ds, &inst.graph, &entry, q, beam, 10).unwrap();
            let enh = enhanced_search(&inst.ds, &inst.graph, &conj, &entry, q, beam, 10).unwrap();
            for k in [1, 10] {
                prop_assert!(recall_vs_truth(&enh.results, &truth, k) >= recall_vs_truth(&base.results, &truth, k));
            }
            prop_assert!(enh.results[0] <= base.results[0]);
            // base trace is a prefix; the extras are bounded by two conjugate lists
            prop_assert_eq!(&enh.visited[..base.visited.len()], &base.visited[..]);
            let extra = enh.visited.len() - base.visited.len();
            prop_assert!(extra <= conj.degree(base.local_optimum) + conj.degree(enh.local_optimum));
            let scored: HashSet<VectorId> = enh.visited.iter().map(|n| n.id).collect();
            prop_assert_eq!(scored.len(), enh.visited.len());
            prop_assert!(enh.results.iter().all(|n| scored.contains(&n.id)));
            prop_assert!(enh.results.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn routing_edges_respect_cap_and_budget(seed in any::<u64>(), kg in 0usize..6, logged in 0usize..200) {
        let inst = gaussian_instance(300, 10, seed, &params(20, 5));
        let queries = generate_noisy_queries(&inst.ds, 0.8, 1, seed).unwrap();
        let log = log_for(&inst, &queries[..logged], 5);
        let gp = GenParams { queries_per_base: kg, beam: 10, ..GenParams::default() };
        let (conj, stats) = update_from_logs(&inst.ds, &inst.graph, &inst.conj, &gp, &log).unwrap();
        // nodes with fewer than kg approximate neighbors issue fewer probes
        prop_assert!(stats.probes <= kg * 300);
        prop_assert!(conj.routing_edge_count(Some(EdgeSource::GeneratedLog)) <= kg * 300);
        prop_assert!(stats.generated_added <= stats.probes);
        prop_assert_eq!(
            conj.routing_edge_count(None) + stats.evicted,
            stats.generated_added + stats.historical_added
        );
        for u in 0..300u32 {
            let edges = conj.routing_edges(u);
            let historical = edges.iter().filter(|e| e.source == EdgeSource::HistoricalLog).count();
            prop_assert!(edges.len() <= historical.max(conj.route_cap()));
            prop_assert!(edges.iter().all(|e| e.target != u && e.source != EdgeSource::Construction));
            let d: Vec<f32> = edges.iter().map(|e| inst.ds.dist(u, e.target)).collect();
            prop_assert!(d.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}

#[test]
fn construction_edges_are_disjoint_from_proximity() {
    let inst = gaussian_instance(2000, 16, 12, &params(60, 10));
    let mut total = 0;
    for u in 0..2000u32 {
        let g: HashSet<_> = inst.graph.neighbors(u).iter().copied().collect();
        let c = inst.conj.construction_edges(u);
        total += c.len();
        assert!(c.len() <= 10);
        assert!(c.iter().all(|v| !g.contains(v) && *v != u));
        assert_eq!(c.iter().collect::<HashSet<_>>().len(), c.len());
        // nearest-first subsequence of the log
        let expected: Vec<VectorId> = inst
            .log
            .entry(u)
            .iter()
            .map(|n| n.id)
            .filter(|v| !g.contains(v) && *v != u)
            .take(10)
            .collect();
        assert_eq!(c, &expected[..]);
    }
    assert!(total > 0);
}

#[test]
fn probes_lie_on_the_segment() {
    let inst = gaussian_instance(500, 16, 13, &params(40, 8));
    for omega in [0.51, 0.7, 0.9] {
        let gp = GenParams {
            omega,
            queries_per_base: 5,
            beam: 20,
        };
        for b in (0..500).step_by(37) {
            let probes = probe_base_point(&inst.ds, &inst.graph, &inst.conj, &gp, b);
            assert!(!probes.is_empty() && probes.len() <= 5);
            for p in probes {
                assert_eq!(p.base, b);
                assert_ne!(p.partner, b);
                let xb = inst.ds.vector(p.base);
                let xk = inst.ds.vector(p.partner);
                for ((e, b), k) in p.query.iter().zip(xb).zip(xk) {
                    let want = omega * *b as f64 + (1.0 - omega) * *k as f64;
                    assert!((*e as f64 - want).abs() <= 1e-6 * (1.0 + want.abs()));
                }
                // the recorded target is at least as close as the base point
                let q = &p.query;
                assert!(inst.ds.dist_to(p.approx_global_opt, q) <= inst.ds.dist_to(b, q));
            }
        }
    }
}

#[test]
fn update_is_idempotent() {
    let inst = gaussian_instance(800, 12, 14, &params(30, 6));
    let queries = generate_noisy_queries(&inst.ds, 0.7, 1, 15).unwrap();
    let log = log_for(&inst, &queries[..300], 8);
    let gp = GenParams {
        queries_per_base: 3,
        beam: 12,
        ..GenParams::default()
    };
    let (once, first) = update_from_logs(&inst.ds, &inst.graph, &inst.conj, &gp, &log).unwrap();
    assert!(first.generated_added + first.historical_added > 0);
    let (twice, second) = update_from_logs(&inst.ds, &inst.graph, &once, &gp, &log).unwrap();
    assert_eq!(once, twice);
    // only edges evicted the first time are re-learned, and they are evicted again
    assert_eq!(
        second.generated_added + second.historical_added,
        second.evicted
    );
    assert_eq!(second.evicted, first.evicted);
}

#[test]
fn nothing_to_learn_leaves_graph_unchanged() {
    let inst = gaussian_instance(300, 8, 16, &params(20, 6));
    let (conj, stats) =
        update_from_logs(&inst.ds, &inst.graph, &inst.conj, &no_probes(), &[]).unwrap();
    assert_eq!(conj, inst.conj);
    assert_eq!(stats.probes, 0);
}

#[test]
fn historical_edge_outranks_generated_duplicate() {
    let ds = VectorDataset::from_rows(&[[0.0f32], [1.0], [5.0]], Metric::Euclidean).unwrap();
    let g = ProximityGraph::from_adjacency(vec![vec![1], vec![0], vec![]], 1, 0).unwrap();
    let conj = ConjugateGraph::empty(3, 1);
    let entry = |source_is_hist: bool| SearchLogEntry {
        query: vec![5.0],
        beam: 1,
        local_opt: if source_is_hist { 1 } else { 0 },
        global_opt: 2,
    };
    let (c, _) =
        update_from_logs(&ds, &g, &conj, &no_probes(), &[entry(true), entry(false)]).unwrap();
    assert_eq!(
        c.routing_triples(),
        vec![
            (0, 2, EdgeSource::HistoricalLog),
            (1, 2, EdgeSource::HistoricalLog)
        ]
    );
}

#[test]
fn replayed_failures_are_fixed() {
    let inst = gaussian_instance(3000, 24, 17, &params(40, 8));
    let queries = generate_noisy_queries(&inst.ds, 0.5, 1, 18).unwrap();
    let failing: Vec<SearchLogEntry> = log_for(&inst, &queries[..1500], 10)
        .into_iter()
        .filter(|e| e.local_opt != e.global_opt)
        .collect();
    assert!(
        failing.len() >= 50,
        "only {} failing queries",
        failing.len()
    );
    let (conj, _) =
        update_from_logs(&inst.ds, &inst.graph, &inst.conj, &no_probes(), &failing).unwrap();
    let entry = [inst.graph.entry()];
    for e in &failing {
        let out = enhanced_search(&inst.ds, &inst.graph, &conj, &entry, &e.query, 10, 1).unwrap();
        assert_eq!(out.local_optimum, e.global_opt);
    }
}

/// Two clusters joined only through a far-side bridge node. Small beams drop
/// the bridge and stall in the left cluster.
fn trap() -> (VectorDataset, ProximityGraph) {
    let mut pts: Vec<[f32; 2]> = Vec::new();
    for i in 0..8 {
        pts.push([i as f32 * 0.25, (i % 2) as f32 * 0.3]);
    }
    for i in 0..8 {
        pts.push([10.0 + i as f32 * 0.25, (i % 2) as f32 * 0.3]);
    }
    pts.push([-5.0, 0.0]);
    let ds = VectorDataset::from_rows(&pts, Metric::Euclidean).unwrap();
    let mut adj: Vec<Vec<VectorId>> = vec![Vec::new(); 17];
    for c in [0u32, 8] {
        for u in c..c + 8 {
            adj[u as usize] = (c..c + 8).filter(|&v| v != u).collect();
            adj[u as usize].push(16);
        }
    }
    adj[16] = (0..16).collect();
    (ds, ProximityGraph::from_adjacency(adj, 16, 0).unwrap())
}

#[test]
fn trap_instance_is_escaped_with_logged_edge() {
    let (ds, g) = trap();
    let q = [9.6f32, 0.1];
    let truth = exact_knn(&ds, &q, 10).unwrap();
    assert_eq!(truth[0].id, 8);

    let stuck = greedy_search(&ds, &g, &[0], &q, 2, 2).unwrap();
    assert_eq!(stuck.local_optimum, 7);
    assert_eq!(recall_vs_truth(&stuck.results, &truth, 1), 0.0);
    let wide = greedy_search(&ds, &g, &[0], &q, 10, 2).unwrap();
    assert_eq!(wide.local_optimum, 8);

    let log = [SearchLogEntry {
        query: q.to_vec(),
        beam: 2,
        local_opt: 7,
        global_opt: 8,
    }];
    let conj = ConjugateGraph::empty(17, 4);
    let (conj, stats) = update_from_logs(&ds, &g, &conj, &no_probes(), &log).unwrap();
    assert_eq!(stats.historical_added, 1);
    let fixed = enhanced_search(&ds, &g, &conj, &[0], &q, 2, 2).unwrap();
    assert_eq!(fixed.local_optimum, 8);
    assert!(fixed.visited.len() <= stuck.visited.len() + 1);

    // a nearby unseen query rides the same edge
    let other = enhanced_search(&ds, &g, &conj, &[0], &[10.1, 0.0], 2, 1).unwrap();
    assert!(ds.dist_to(other.local_optimum, &[10.1, 0.0]) < 1.0);
}

#[test]
fn generated_probes_lift_recall_on_clustered_data() {
    let ds =
        conjgraph::synth::embedded_clusters(4000, 32, 16, 20, 0.5, 0.05, Metric::Euclidean, 19)
            .unwrap();
    let inst = common::instance(ds, &params(40, 8));
    let gp = GenParams {
        queries_per_base: 3,
        beam: 10,
        ..GenParams::default()
    };
    let (conj, _) = update_from_logs(&inst.ds, &inst.graph, &inst.conj, &gp, &[]).unwrap();
    let queries = generate_noisy_queries(&inst.ds, 0.5, 1, 20).unwrap()[..400].to_vec();
    let truth = GroundTruth::compute(&inst.ds, &queries, 10).unwrap();
    let base = batch_recall(&inst, None, &queries, &truth, 10);
    let enh = batch_recall(&inst, Some(&conj), &queries, &truth, 10);
    assert!(enh.0 > base.0, "R@1 base {} enhanced {}", base.0, enh.0);
    assert!(enh.1 >= base.1);
}
