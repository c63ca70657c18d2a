mod common;

use common::{gaussian_instance, params};
use conjgraph::persist::{
    format_log_line, parse_log_line, read_search_log, write_search_log, IndexFile, HEADER_LEN,
};
use conjgraph::{
    generate_noisy_queries, greedy_search, update_from_logs, BuildParams, Error, GenParams, Metric,
    PruneRule, SearchLogEntry,
};
use proptest::prelude::*;

fn index(n: usize, seed: u64, kg: usize) -> IndexFile {
    let p = BuildParams {
        prune_rule: if seed.is_multiple_of(2) {
            PruneRule::RngAlpha
        } else {
            PruneRule::Mrng
        },
        ..params(24, 6)
    };
    let inst = gaussian_instance(n, 5, seed, &p);
    let gp = GenParams {
        queries_per_base: kg,
        beam: 8,
        ..GenParams::default()
    };
    let queries = generate_noisy_queries(&inst.ds, 0.8, 1, seed).unwrap();
    let log: Vec<SearchLogEntry> = queries
        .iter()
        .take(20)
        .map(|q| SearchLogEntry {
            query: q.clone(),
            beam: 4,
            local_opt: greedy_search(&inst.ds, &inst.graph, &[inst.graph.entry()], q, 4, 1)
                .unwrap()
                .local_optimum,
            global_opt: conjgraph::global_optimum(&inst.ds, q).unwrap(),
        })
        .collect();
    let (conj, _) = update_from_logs(&inst.ds, &inst.graph, &inst.conj, &gp, &log).unwrap();
    IndexFile {
        metric: Metric::Euclidean,
        dim: 5,
        build: p,
        seed,
        graph: inst.graph,
        conjugate: conj,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn index_round_trips_byte_for_byte(n in 1usize..150, seed in any::<u64>(), kg in 0usize..3) {
        let idx = index(n, seed, kg);
        let (bytes, sizes) = idx.encode().unwrap();
        prop_assert_eq!(sizes.total(), bytes.len());
        prop_assert_eq!(sizes.header, HEADER_LEN);
        let back = IndexFile::decode(&bytes).unwrap();
        prop_assert_eq!(&back, &idx);
        prop_assert_eq!(back.encode().unwrap().0, bytes);
    }

    #[test]
    fn any_flipped_byte_is_rejected(seed in any::<u64>(), pos in any::<prop::sample::Index>(), bit in 0u8..8) {
        let idx = index(40, seed, 1);
        let (mut bytes, _) = idx.encode().unwrap();
        let at = pos.index(bytes.len());
        bytes[at] ^= 1 << bit;
        prop_assert!(matches!(IndexFile::decode(&bytes), Err(Error::CorruptIndex(_))));
    }

    #[test]
    fn log_lines_round_trip(q in proptest::collection::vec(-1e6f32..1e6, 1..10), beam in 1usize..500, l in any::<u32>(), g in any::<u32>()) {
        let e = SearchLogEntry { query: q.clone(), beam, local_opt: l, global_opt: g };
        let line = format_log_line(&e);
        prop_assert_eq!(parse_log_line(&line, 1, q.len()).unwrap(), e);
    }
}

#[test]
fn truncated_and_foreign_files_are_rejected() {
    let (bytes, _) = index(30, 2, 1).encode().unwrap();
    for cut in [0, 3, HEADER_LEN - 1, HEADER_LEN, bytes.len() - 1] {
        assert!(
            matches!(
                IndexFile::decode(&bytes[..cut]),
                Err(Error::CorruptIndex(_))
            ),
            "cut at {cut}"
        );
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(IndexFile::decode(&extra).is_err());
    let mut magic = bytes;
    magic[..4].copy_from_slice(b"NOPE");
    assert!(matches!(
        IndexFile::decode(&magic),
        Err(Error::CorruptIndex(_))
    ));
}

#[test]
fn save_reports_file_length() {
    let idx = index(120, 4, 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.egr");
    let sizes = idx.save(&path).unwrap();
    assert_eq!(
        std::fs::metadata(&path).unwrap().len() as usize,
        sizes.total()
    );
    assert_eq!(IndexFile::load(&path).unwrap(), idx);
    // saving again produces identical bytes
    let first = std::fs::read(&path).unwrap();
    idx.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
}

#[test]
fn check_dataset_catches_mismatches() {
    let idx = index(50, 6, 0);
    let same = conjgraph::synth::gaussian(50, 5, Metric::Euclidean, 6).unwrap();
    idx.check_dataset(&same).unwrap();
    let smaller = conjgraph::synth::gaussian(49, 5, Metric::Euclidean, 6).unwrap();
    assert!(idx.check_dataset(&smaller).is_err());
    let wider = conjgraph::synth::gaussian(50, 6, Metric::Euclidean, 6).unwrap();
    assert!(idx.check_dataset(&wider).is_err());
    assert!(idx
        .check_dataset(&same.with_metric(Metric::Angular).unwrap())
        .is_err());
}

#[test]
fn log_file_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.txt");
    let good = SearchLogEntry {
        query: vec![0.5, -1.25],
        beam: 7,
        local_opt: 3,
        global_opt: 9,
    };
    write_search_log(&path, &[good.clone(), good.clone()]).unwrap();
    assert_eq!(
        read_search_log(&path, 2).unwrap(),
        vec![good.clone(), good.clone()]
    );

    let text = format!(
        "# comment\n\n{}\nQ 1 2 | L2 5 | LOPT x | GOPT 1\n",
        format_log_line(&good)
    );
    std::fs::write(&path, text).unwrap();
    match read_search_log(&path, 2) {
        Err(Error::LogParse { line, .. }) => assert_eq!(line, 4),
        other => panic!("expected parse error, got {other:?}"),
    }
    for bad in [
        "Q 1 | L2 5 | LOPT 1 | GOPT 1",
        "Q 1 2 | L2 0 | LOPT 1 | GOPT 1",
        "Q 1 nan | L2 3 | LOPT 1 | GOPT 1",
        "1 2 | L2 3 | LOPT 1 | GOPT 1",
        "Q 1 2 | L2 3 | LOPT 1",
        "Q 1 2 | L2 3 | GOPT 1 | LOPT 1",
        "Q 1 2 | L2 3 | LOPT 99999999999 | GOPT 1",
    ] {
        assert!(parse_log_line(bad, 1, 2).is_err(), "{bad}");
    }
}
