#![allow(dead_code)]

use conjgraph::oracle::recall_vs_truth;
use conjgraph::{
    build, enhanced_search, finalize_construction_log, greedy_search, synth, BuildParams,
    ConjugateGraph, ConstructionLog, GroundTruth, Metric, ProximityGraph, VectorDataset,
};

pub struct Instance {
    pub ds: VectorDataset,
    pub graph: ProximityGraph,
    pub log: ConstructionLog,
    pub conj: ConjugateGraph,
}

pub fn params(beam_width: usize, max_degree: usize) -> BuildParams {
    BuildParams {
        beam_width,
        max_degree,
        ..BuildParams::default()
    }
}

pub fn instance(ds: VectorDataset, p: &BuildParams) -> Instance {
    let (graph, log) = build(&ds, p).unwrap();
    let conj = finalize_construction_log(&graph, &log).unwrap();
    Instance {
        ds,
        graph,
        log,
        conj,
    }
}

pub fn gaussian_instance(n: usize, dim: usize, seed: u64, p: &BuildParams) -> Instance {
    instance(synth::gaussian(n, dim, Metric::Euclidean, seed).unwrap(), p)
}

/// Mean Recall@1 and Recall@10 over a batch; `conj = None` runs plain greedy search.
pub fn batch_recall(
    inst: &Instance,
    conj: Option<&ConjugateGraph>,
    queries: &[Vec<f32>],
    truth: &GroundTruth,
    beam: usize,
) -> (f64, f64) {
    let entry = [inst.graph.entry()];
    let (mut r1, mut r10) = (0.0, 0.0);
    for (i, q) in queries.iter().enumerate() {
        let out = match conj {
            Some(c) => enhanced_search(&inst.ds, &inst.graph, c, &entry, q, beam, 10).unwrap(),
            None => greedy_search(&inst.ds, &inst.graph, &entry, q, beam, 10).unwrap(),
        };
        r1 += recall_vs_truth(&out.results, truth.row(i), 1);
        r10 += recall_vs_truth(&out.results, truth.row(i), 10);
    }
    let m = queries.len() as f64;
    (r1 / m, r10 / m)
}
