use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use conjgraph::observe::{self, SweepPoint};
use conjgraph::persist::{self, IndexFile};
use conjgraph::vecio::{self, VectorFormat};
use conjgraph::{
    build, enhanced_search, finalize_construction_log, generate_noisy_queries, greedy_search,
    synth, update_from_logs, BuildParams, EdgeSource, Error, GenParams, GroundTruth, Metric,
    PruneRule, SearchLogEntry, VectorDataset, VectorId,
};

pub enum CliError {
    /// Bad flags or parameter values (exit 1).
    Usage(String),
    /// Unreadable or malformed inputs (exit 2).
    Data(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidInput(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn at_path<T>(path: &Path, r: conjgraph::Result<T>) -> CliResult<T> {
    r.map_err(|e| match e {
        Error::Io(io) => CliError::Data(format!("{}: {io}", path.display())),
        e => e.into(),
    })
}

#[derive(Parser)]
#[command(
    name = "conjgraph",
    version,
    about = "Proximity-graph ANN index with a log-driven conjugate graph"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the proximity graph and construction-log conjugate edges.
    Build(BuildArgs),
    /// Add routing edges from generated probes and historical search logs.
    Enhance(EnhanceArgs),
    /// Print top-k neighbors for each query.
    Search(SearchArgs),
    /// QPS / recall sweep over beam widths, base vs enhanced.
    Bench(BenchArgs),
    /// Exhaustive ground truth for a query file.
    Groundtruth(GroundTruthArgs),
    /// Diagnostic analyses of local optima.
    Observe(ObserveArgs),
    /// Noisy copies of base points, for historical or test queries.
    GenQueries(GenQueriesArgs),
    /// Write a search log for queries with known ground truth.
    MakeLog(MakeLogArgs),
    /// Write a synthetic clustered dataset.
    Synth(SynthArgs),
}

#[derive(Args, Clone)]
struct DatasetArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// fvecs, ivecs or csv; inferred from the extension when omitted.
    #[arg(long)]
    format: Option<String>,
    #[arg(long, default_value = "euclidean")]
    metric: String,
}

impl DatasetArgs {
    fn load(&self) -> CliResult<VectorDataset> {
        let format = resolve_format(&self.dataset, self.format.as_deref())?;
        let metric: Metric = self.metric.parse()?;
        at_path(
            &self.dataset,
            vecio::load_vectors(&self.dataset, format, metric),
        )
    }
}

fn resolve_format(path: &Path, explicit: Option<&str>) -> CliResult<VectorFormat> {
    match explicit {
        Some(f) => Ok(f.parse()?),
        None => VectorFormat::from_path(path).ok_or_else(|| {
            usage(format!(
                "cannot infer format of {}; pass --format",
                path.display()
            ))
        }),
    }
}

fn load_queries(path: &Path) -> CliResult<Vec<Vec<f32>>> {
    at_path(path, vecio::load_rows(path, resolve_format(path, None)?))
}

fn dists_path(ids: &Path) -> PathBuf {
    ids.with_extension("dist.fvecs")
}

fn load_truth(path: &Path, ds: &VectorDataset, queries: &[Vec<f32>]) -> CliResult<GroundTruth> {
    let d = dists_path(path);
    let d = d.exists().then_some(d);
    at_path(path, GroundTruth::load(path, d.as_deref(), ds, queries))
}

fn load_index(path: &Path, ds: &VectorDataset) -> CliResult<IndexFile> {
    let idx = at_path(path, IndexFile::load(path))?;
    idx.check_dataset(ds)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(idx)
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<T>()
                .map_err(|_| usage(format!("bad {what} value {t:?}")))
        })
        .collect()
}

fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

#[derive(Args)]
struct BuildArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long, default_value_t = 12)]
    r: usize,
    #[arg(long = "L1", default_value_t = 100)]
    l1: usize,
    #[arg(long, default_value_t = 1.2)]
    alpha: f32,
    #[arg(long = "prune-rule", default_value = "rng_alpha")]
    prune_rule: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output index file.
    #[arg(long)]
    index: PathBuf,
}

fn cmd_build(a: BuildArgs) -> CliResult {
    let prune_rule: PruneRule = a.prune_rule.parse()?;
    let params = BuildParams {
        beam_width: a.l1,
        max_degree: a.r,
        alpha: a.alpha,
        prune_rule,
    };
    params.validate()?;
    let ds = a.data.load()?;
    let start = Instant::now();
    let (graph, log) = build(&ds, &params)?;
    let conjugate = finalize_construction_log(&graph, &log)?;
    let elapsed = start.elapsed().as_secs_f64();
    let file = IndexFile {
        metric: ds.metric(),
        dim: ds.dim(),
        build: params,
        seed: a.seed,
        graph,
        conjugate,
    };
    let sizes = file.save(&a.index)?;
    let vector_bytes = ds.len() * ds.dim() * 4;
    println!("build_time_s={elapsed:.3}");
    println!(
        "nodes={} dim={} entry={}",
        ds.len(),
        ds.dim(),
        file.graph.entry()
    );
    println!(
        "proximity_edges={} construction_edges={}",
        file.graph.edge_count(),
        file.conjugate.construction_edge_count()
    );
    println!(
        "bytes header={} proximity={} construction={} routing={} trailer={} index_total={}",
        sizes.header,
        sizes.proximity,
        sizes.construction,
        sizes.routing,
        sizes.trailer,
        sizes.total()
    );
    println!(
        "bytes vectors={vector_bytes} memory_total={}",
        vector_bytes + sizes.total()
    );
    Ok(())
}

#[derive(Args)]
struct EnhanceArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long)]
    index: PathBuf,
    #[arg(long = "L2", default_value_t = 100)]
    l2: usize,
    #[arg(long, default_value_t = 0.51)]
    omega: f64,
    /// Probes per base point; 0 disables probing.
    #[arg(long, default_value_t = 5)]
    kg: usize,
    /// Historical search log file.
    #[arg(long)]
    logs: Option<PathBuf>,
    /// Historical queries whose optima come from --groundtruth.
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    groundtruth: Option<PathBuf>,
    /// Write here instead of rewriting --index.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn historical_from_truth(
    ds: &VectorDataset,
    idx: &IndexFile,
    queries: &[Vec<f32>],
    truth: &GroundTruth,
    beam: usize,
) -> CliResult<Vec<SearchLogEntry>> {
    let entry = [idx.graph.entry()];
    queries
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let out = greedy_search(ds, &idx.graph, &entry, q, beam, 1)?;
            Ok(SearchLogEntry {
                query: q.clone(),
                beam,
                local_opt: out.local_optimum,
                global_opt: truth.global_optimum(i),
            })
        })
        .collect()
}

fn cmd_enhance(a: EnhanceArgs) -> CliResult {
    let gp = GenParams {
        omega: a.omega,
        queries_per_base: a.kg,
        beam: a.l2,
    };
    if a.kg > 0 {
        gp.validate()?;
    }
    let ds = a.data.load()?;
    let mut idx = load_index(&a.index, &ds)?;
    let mut historical = Vec::new();
    if let Some(p) = &a.logs {
        historical.extend(at_path(p, persist::read_search_log(p, ds.dim()))?);
    }
    match (&a.queries, &a.groundtruth) {
        (Some(q), Some(g)) => {
            let queries = load_queries(q)?;
            let truth = load_truth(g, &ds, &queries)?;
            historical.extend(historical_from_truth(&ds, &idx, &queries, &truth, a.l2)?);
        }
        (None, None) => {}
        _ => return Err(usage("--queries and --groundtruth must be given together")),
    }
    let start = Instant::now();
    let (conj, stats) = update_from_logs(&ds, &idx.graph, &idx.conjugate, &gp, &historical)?;
    let elapsed = start.elapsed().as_secs_f64();
    idx.conjugate = conj;
    idx.save(a.out.as_ref().unwrap_or(&a.index))?;
    println!("update_time_s={elapsed:.3}");
    println!(
        "historical_entries={} probes={}",
        historical.len(),
        stats.probes
    );
    println!(
        "added historical_log={} generated_log={} evicted={}",
        stats.historical_added, stats.generated_added, stats.evicted
    );
    println!(
        "routing_edges historical_log={} generated_log={} construction_edges={}",
        idx.conjugate
            .routing_edge_count(Some(EdgeSource::HistoricalLog)),
        idx.conjugate
            .routing_edge_count(Some(EdgeSource::GeneratedLog)),
        idx.conjugate.construction_edge_count()
    );
    Ok(())
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long = "L", default_value_t = 100)]
    l: usize,
    /// Skip the conjugate-graph stages.
    #[arg(long)]
    plain: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_search(a: SearchArgs) -> CliResult {
    let ds = a.data.load()?;
    let idx = load_index(&a.index, &ds)?;
    let queries = load_queries(&a.queries)?;
    let entry = [idx.graph.entry()];
    let mut w = output(a.out.as_deref())?;
    writeln!(w, "query,rank,id,distance")?;
    for (qi, q) in queries.iter().enumerate() {
        let out = if a.plain {
            greedy_search(&ds, &idx.graph, &entry, q, a.l, a.k)?
        } else {
            enhanced_search(&ds, &idx.graph, &idx.conjugate, &entry, q, a.l, a.k)?
        };
        for (rank, n) in out.results.iter().enumerate() {
            writeln!(w, "{qi},{},{},{}", rank + 1, n.id, n.dist)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    groundtruth: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Comma-separated beam widths.
    #[arg(long = "L", default_value = "10,20,50,100")]
    l: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_bench(a: BenchArgs) -> CliResult {
    let gt = a
        .groundtruth
        .as_ref()
        .ok_or_else(|| usage("bench requires --groundtruth"))?;
    let beams: Vec<usize> = parse_list(&a.l, "L")?;
    let ds = a.data.load()?;
    let idx = load_index(&a.index, &ds)?;
    let queries = load_queries(&a.queries)?;
    let truth = load_truth(gt, &ds, &queries)?;
    let base = observe::qps_recall_sweep(&ds, &idx.graph, None, &queries, &truth, &beams, a.k)?;
    let enh = observe::qps_recall_sweep(
        &ds,
        &idx.graph,
        Some(&idx.conjugate),
        &queries,
        &truth,
        &beams,
        a.k,
    )?;
    let mut w = output(a.out.as_deref())?;
    write_bench(&mut w, &base, &enh)?;
    w.flush()?;
    Ok(())
}

fn write_bench<W: Write>(w: &mut W, base: &[SweepPoint], enh: &[SweepPoint]) -> io::Result<()> {
    writeln!(
        w,
        "L,base_qps,base_recall1,base_recall10,enhanced_qps,enhanced_recall1,enhanced_recall10,gap_recall1"
    )?;
    for (b, e) in base.iter().zip(enh) {
        writeln!(
            w,
            "{},{:.2},{:.6},{:.6},{:.2},{:.6},{:.6},{:.6}",
            b.beam,
            b.qps,
            b.recall1,
            b.recall10,
            e.qps,
            e.recall1,
            e.recall10,
            e.recall1 - b.recall1
        )?;
    }
    Ok(())
}

#[derive(Args)]
struct GroundTruthArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value_t = 100)]
    k: usize,
    /// ids as ivecs; distances go next to it as `<stem>.dist.fvecs`.
    #[arg(long)]
    out: PathBuf,
}

fn cmd_groundtruth(a: GroundTruthArgs) -> CliResult {
    let ds = a.data.load()?;
    let queries = load_queries(&a.queries)?;
    let truth = GroundTruth::compute(&ds, &queries, a.k)?;
    truth.save(&a.out, Some(&dists_path(&a.out)))?;
    println!("queries={} depth={}", truth.len(), truth.depth());
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Analysis {
    Rank,
    Overlap,
    SameOpt,
    ShotRate,
    All,
}

#[derive(Args)]
struct ObserveArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long)]
    index: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    analysis: Analysis,
    /// Queries for the rank and overlap analyses.
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    groundtruth: Option<PathBuf>,
    #[arg(long = "L", default_value_t = 100)]
    l: usize,
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// Comma-separated omegas for the shot-rate analysis.
    #[arg(long, default_value = "0.51,0.6,0.7,0.8,0.9")]
    omega: String,
    /// Neighbor partners per base point for shot-rate probes.
    #[arg(long, default_value_t = 5)]
    kg: usize,
    /// Noise scale (fraction of eta) of same-local-optimum probes.
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    /// Probes per base point for the same-local-optimum analysis.
    #[arg(long, default_value_t = 10)]
    probes: usize,
    /// Number of base points sampled by same-opt and shot-rate.
    #[arg(long, default_value_t = 1000)]
    sample: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; one CSV per analysis.
    #[arg(long)]
    out: PathBuf,
}

fn sample_bases(n: usize, count: usize) -> Vec<VectorId> {
    let count = count.clamp(1, n);
    (0..count).map(|i| (i * n / count) as VectorId).collect()
}

fn cmd_observe(a: ObserveArgs) -> CliResult {
    let needs_queries = matches!(
        a.analysis,
        Analysis::Rank | Analysis::Overlap | Analysis::All
    );
    let (qpath, gpath) = match (needs_queries, &a.queries, &a.groundtruth) {
        (false, _, _) => (None, None),
        (true, Some(q), Some(g)) => (Some(q), Some(g)),
        (true, None, _) => return Err(usage("this analysis requires --queries")),
        (true, _, None) => return Err(usage("this analysis requires --groundtruth")),
    };
    let omegas: Vec<f64> = parse_list(&a.omega, "omega")?;
    let ds = a.data.load()?;
    let idx = load_index(&a.index, &ds)?;
    fs::create_dir_all(&a.out)?;
    let run = |which: Analysis| a.analysis == which || a.analysis == Analysis::All;

    let loaded = match (qpath, gpath) {
        (Some(q), Some(g)) => {
            let queries = load_queries(q)?;
            let truth = load_truth(g, &ds, &queries)?;
            Some((queries, truth))
        }
        _ => None,
    };
    if run(Analysis::Rank) {
        let (queries, truth) = loaded.as_ref().unwrap();
        let hist = observe::local_optimum_rank(
            &ds,
            &idx.graph,
            queries,
            truth,
            a.l,
            truth.depth().max(1),
        )?;
        hist.write_csv(BufWriter::new(fs::File::create(a.out.join("rank.csv"))?))?;
        println!(
            "rank: failing={} successes={} share_rank_le_7={:.4}",
            hist.failing(),
            hist.successes,
            hist.share_within(7)
        );
    }
    if run(Analysis::Overlap) {
        let (queries, _) = loaded.as_ref().unwrap();
        let stats = observe::knn_overlap_rate(&ds, queries, a.k)?;
        let mut w = BufWriter::new(fs::File::create(a.out.join("overlap.csv"))?);
        writeln!(w, "query,overlap")?;
        for (i, v) in stats.per_query.iter().enumerate() {
            writeln!(w, "{i},{v:.6}")?;
        }
        w.flush()?;
        println!("overlap: k={} mean={:.4}", stats.k, stats.mean);
    }
    if run(Analysis::SameOpt) {
        if a.probes < 2 {
            return Err(usage("--probes must be at least 2"));
        }
        let bases = sample_bases(ds.len(), a.sample);
        let sub = VectorDataset::from_rows(
            &bases
                .iter()
                .map(|&b| ds.vector(b).to_vec())
                .collect::<Vec<_>>(),
            ds.metric(),
        )?;
        // eta of the full dataset, applied to the sampled subset
        let scale = a.noise * ds.abs_mean() / sub.abs_mean().max(f64::MIN_POSITIVE);
        let probes = generate_noisy_queries(&sub, scale, a.probes, a.seed)?;
        let groups: Vec<(VectorId, Vec<Vec<f32>>)> = bases
            .iter()
            .enumerate()
            .map(|(i, &b)| (b, probes[i * a.probes..(i + 1) * a.probes].to_vec()))
            .collect();
        let stats = observe::same_local_optimum_rate(&ds, &idx.graph, &groups, a.l)?;
        stats.write_csv(BufWriter::new(fs::File::create(
            a.out.join("same_opt.csv"),
        )?))?;
        if let Some(p) = stats.pooled {
            println!(
                "same_opt: groups={} max={:.4} other_shared={:.4} singleton={:.4}",
                stats.groups.len(),
                p.max_share,
                p.other_shared_share,
                p.singleton_share
            );
        } else {
            println!("same_opt: no failing probes");
        }
    }
    if run(Analysis::ShotRate) {
        let bases = sample_bases(ds.len(), a.sample);
        let rates = observe::shot_rate(&ds, &idx.graph, &omegas, a.kg, a.l, &bases)?;
        observe::write_shot_rate_csv(
            &rates,
            BufWriter::new(fs::File::create(a.out.join("shot_rate.csv"))?),
        )?;
        for r in &rates {
            println!(
                "shot_rate: omega={} global={:.4} nn={:.4} other={:.4}",
                r.omega, r.global_hit, r.nn_hit, r.other
            );
        }
    }
    Ok(())
}

#[derive(Args)]
struct GenQueriesArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Noise half-width as a fraction of eta (mean absolute component).
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    /// Copies per base point.
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Keep only this many evenly spaced queries.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn cmd_gen_queries(a: GenQueriesArgs) -> CliResult {
    let ds = a.data.load()?;
    let mut queries = generate_noisy_queries(&ds, a.noise, a.count, a.seed)?;
    if let Some(limit) = a.limit {
        let total = queries.len();
        let keep = limit.clamp(1, total);
        queries = (0..keep)
            .map(|i| queries[i * total / keep].clone())
            .collect();
    }
    write_rows(&a.out, &queries)?;
    println!("queries={} eta={:.6}", queries.len(), ds.abs_mean());
    Ok(())
}

fn write_rows(path: &Path, rows: &[Vec<f32>]) -> CliResult {
    let rows = rows.iter().map(Vec::as_slice);
    match resolve_format(path, None)? {
        VectorFormat::Fvecs => vecio::write_fvecs(path, rows)?,
        VectorFormat::Csv => vecio::write_csv(path, rows)?,
        VectorFormat::Ivecs => return Err(usage("vectors cannot be written as ivecs")),
    }
    Ok(())
}

#[derive(Args)]
struct MakeLogArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    groundtruth: Option<PathBuf>,
    #[arg(long = "L2", default_value_t = 100)]
    l2: usize,
    /// Keep only entries whose local optimum missed the global optimum.
    #[arg(long)]
    failing_only: bool,
    #[arg(long)]
    out: PathBuf,
}

fn cmd_make_log(a: MakeLogArgs) -> CliResult {
    let gt = a
        .groundtruth
        .as_ref()
        .ok_or_else(|| usage("make-log requires --groundtruth"))?;
    let ds = a.data.load()?;
    let idx = load_index(&a.index, &ds)?;
    let queries = load_queries(&a.queries)?;
    let truth = load_truth(gt, &ds, &queries)?;
    let mut entries = historical_from_truth(&ds, &idx, &queries, &truth, a.l2)?;
    if a.failing_only {
        entries.retain(|e| e.local_opt != e.global_opt);
    }
    persist::write_search_log(&a.out, &entries)?;
    println!("entries={}", entries.len());
    Ok(())
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 20_000)]
    n: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    /// Intrinsic dimension; 0 draws full-dimensional blobs.
    #[arg(long, default_value_t = 16)]
    latent: usize,
    #[arg(long, default_value_t = 50)]
    clusters: usize,
    #[arg(long, default_value_t = 0.5)]
    spread: f32,
    #[arg(long, default_value_t = 0.05)]
    noise: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn cmd_synth(a: SynthArgs) -> CliResult {
    let ds = if a.latent == 0 {
        synth::clustered_gaussian(a.n, a.dim, a.clusters, a.spread, Metric::Euclidean, a.seed)?
    } else {
        synth::embedded_clusters(
            a.n,
            a.dim,
            a.latent,
            a.clusters,
            a.spread,
            a.noise,
            Metric::Euclidean,
            a.seed,
        )?
    };
    write_rows(&a.out, &ds.to_rows())?;
    println!("n={} dim={}", ds.len(), ds.dim());
    Ok(())
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Build(a) => cmd_build(a),
        Command::Enhance(a) => cmd_enhance(a),
        Command::Search(a) => cmd_search(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Groundtruth(a) => cmd_groundtruth(a),
        Command::Observe(a) => cmd_observe(a),
        Command::GenQueries(a) => cmd_gen_queries(a),
        Command::MakeLog(a) => cmd_make_log(a),
        Command::Synth(a) => cmd_synth(a),
    }
}
