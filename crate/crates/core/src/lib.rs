//! In-memory graph ANN index whose proximity graph is paired with a
//! *conjugate graph*.
//!
//! The conjugate graph keeps two kinds of edges the proximity graph lacks:
//! near-neighbor edges that pruning removed during construction, and routing
//! edges from the local optima where greedy searches got stuck to the true
//! nearest neighbors of those searches. A query runs ordinary beam search on
//! the proximity graph, hops once through the conjugate graph to escape its
//! local optimum, and then backfills its top-k from the conjugate neighbors of
//! the node it landed on.
//!
//! ```no_run
//! use conjgraph::{build, enhanced_search, finalize_construction_log, update_from_logs};
//! use conjgraph::{synth, BuildParams, GenParams, Metric};
//!
//! let ds = synth::gaussian(5_000, 32, Metric::Euclidean, 7).unwrap();
//! let (graph, log) = build(&ds, &BuildParams::default()).unwrap();
//! let conj = finalize_construction_log(&graph, &log).unwrap();
//! let (conj, _) = update_from_logs(&ds, &graph, &conj, &GenParams::default(), &[]).unwrap();
//! let out = enhanced_search(&ds, &graph, &conj, &[graph.entry()], ds.vector(3), 100, 10).unwrap();
//! assert_eq!(out.results[0].id, 3);
//! ```

pub mod conjugate;
pub mod dataset;
pub mod error;
pub mod graph;
pub mod neighbor;
pub mod observe;
pub mod oracle;
pub mod persist;
pub mod synth;
pub mod vecio;

pub use conjugate::{
    approximate_knn, enhanced_search, finalize_construction_log, generate_query, update_from_logs,
    ConjugateGraph, EdgeSource, GenParams, RoutingEdge, SearchLogEntry, UpdateStats,
};
pub use dataset::{distance, generate_noisy_queries, Metric, VectorDataset, VectorId};
pub use error::{Error, Result};
pub use graph::{
    build, greedy_search, prune, BuildParams, ConstructionLog, ProximityGraph, PruneRule,
    SearchOutcome,
};
pub use neighbor::Neighbor;
pub use oracle::{exact_knn, global_optimum, recall_at_k, GroundTruth};
pub use vecio::{load_vectors, VectorFormat};
