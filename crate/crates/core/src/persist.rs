//! Index file format and search-log text format.
//!
//! Index file, little-endian throughout:
//!
//! ```text
//! header (48 bytes)
//!   magic      [u8; 4] = "EGRF"
//!   version    u32     = 1
//!   metric     u8      0 euclidean, 1 inner_product, 2 angular
//!   prune_rule u8      0 rng_alpha, 1 mrng
//!   reserved   u16     = 0
//!   n          u32
//!   d          u32
//!   r          u32     proximity max degree
//!   route_cap  u32     routing-edge cap per node
//!   entry      u32
//!   L1         u32
//!   alpha      f32
//!   seed       u64
//! proximity block     n x ( u32 degree, degree x u32 id )
//! construction block  n x ( u32 count,  count x u32 id )
//! routing block       n x ( u32 count,  count x ( u32 id, u8 source ) )
//! trailer             u32 CRC-32 of every preceding byte
//! ```
//!
//! Search log, one entry per line, whitespace-delimited:
//!
//! ```text
//! Q <d floats> | L2 <int> | LOPT <id> | GOPT <id>
//! ```
//!
//! Blank lines and lines starting with `#` are ignored.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::conjugate::{ConjugateGraph, EdgeSource, RoutingEdge, SearchLogEntry};
use crate::dataset::{Metric, VectorDataset, VectorId};
use crate::error::{invalid, Error, Result};
use crate::graph::{BuildParams, ProximityGraph, PruneRule};

pub const MAGIC: [u8; 4] = *b"EGRF";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 48;

/// Proximity graph, conjugate graph and the parameters that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexFile {
    pub metric: Metric,
    pub dim: usize,
    pub build: BuildParams,
    pub seed: u64,
    pub graph: ProximityGraph,
    pub conjugate: ConjugateGraph,
}

/// Byte counts of each serialized section.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SectionSizes {
    pub header: usize,
    pub proximity: usize,
    pub construction: usize,
    pub routing: usize,
    pub trailer: usize,
}

impl SectionSizes {
    pub fn total(&self) -> usize {
        self.header + self.proximity + self.construction + self.routing + self.trailer
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| invalid(format!("{what} = {v} does not fit in 32 bits")))
}

impl IndexFile {
    pub fn encode(&self) -> Result<(Vec<u8>, SectionSizes)> {
        let n = self.graph.len();
        let mut buf = Vec::with_capacity(HEADER_LEN + 8 * n);
        buf.extend_from_slice(&MAGIC);
        put_u32(&mut buf, FORMAT_VERSION);
        buf.push(self.metric.tag());
        buf.push(self.build.prune_rule.tag());
        buf.extend_from_slice(&[0, 0]);
        put_u32(&mut buf, to_u32(n, "n")?);
        put_u32(&mut buf, to_u32(self.dim, "d")?);
        put_u32(&mut buf, to_u32(self.graph.max_degree(), "r")?);
        put_u32(&mut buf, to_u32(self.conjugate.route_cap(), "route_cap")?);
        put_u32(&mut buf, self.graph.entry());
        put_u32(&mut buf, to_u32(self.build.beam_width, "L1")?);
        buf.extend_from_slice(&self.build.alpha.to_le_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        debug_assert_eq!(buf.len(), HEADER_LEN);
        let mut sizes = SectionSizes {
            header: HEADER_LEN,
            trailer: 4,
            ..SectionSizes::default()
        };

        let mark = buf.len();
        for u in 0..n as VectorId {
            let list = self.graph.neighbors(u);
            put_u32(&mut buf, list.len() as u32);
            list.iter().for_each(|&v| put_u32(&mut buf, v));
        }
        sizes.proximity = buf.len() - mark;

        let mark = buf.len();
        for u in 0..n as VectorId {
            let list = self.conjugate.construction_edges(u);
            put_u32(&mut buf, list.len() as u32);
            list.iter().for_each(|&v| put_u32(&mut buf, v));
        }
        sizes.construction = buf.len() - mark;

        let mark = buf.len();
        for u in 0..n as VectorId {
            let list = self.conjugate.routing_edges(u);
            put_u32(&mut buf, list.len() as u32);
            for e in list {
                put_u32(&mut buf, e.target);
                buf.push(e.source.tag());
            }
        }
        sizes.routing = buf.len() - mark;

        let crc = crc32fast::hash(&buf);
        put_u32(&mut buf, crc);
        Ok((buf, sizes))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN + 4 {
            return Err(Error::CorruptIndex("file shorter than header".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(Error::CorruptIndex("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::CorruptIndex("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::CorruptIndex(format!(
                "unsupported version {version}"
            )));
        }
        let metric = Metric::from_tag(r.u8()?)
            .ok_or_else(|| Error::CorruptIndex("bad metric tag".into()))?;
        let prune_rule = PruneRule::from_tag(r.u8()?)
            .ok_or_else(|| Error::CorruptIndex("bad prune-rule tag".into()))?;
        r.take(2)?;
        let n = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let max_degree = r.u32()? as usize;
        let route_cap = r.u32()? as usize;
        let entry = r.u32()?;
        let beam_width = r.u32()? as usize;
        let alpha = f32::from_le_bytes(r.take(4)?.try_into().unwrap());
        let seed = u64::from_le_bytes(r.take(8)?.try_into().unwrap());

        let mut adjacency = Vec::with_capacity(n);
        for _ in 0..n {
            adjacency.push(r.id_list()?);
        }
        let mut construction = Vec::with_capacity(n);
        for _ in 0..n {
            construction.push(r.id_list()?);
        }
        let mut routing = Vec::with_capacity(n);
        for _ in 0..n {
            let count = r.u32()? as usize;
            let mut list = Vec::with_capacity(count.min(1 << 16));
            for _ in 0..count {
                let target = r.u32()?;
                let source = EdgeSource::from_tag(r.u8()?)
                    .ok_or_else(|| Error::CorruptIndex("bad edge source tag".into()))?;
                list.push(RoutingEdge { target, source });
            }
            routing.push(list);
        }
        if r.pos != body.len() {
            return Err(Error::CorruptIndex(format!(
                "{} trailing bytes after routing block",
                body.len() - r.pos
            )));
        }
        let corrupt = |e: Error| Error::CorruptIndex(e.to_string());
        let graph =
            ProximityGraph::from_adjacency(adjacency, max_degree, entry).map_err(corrupt)?;
        let conjugate = ConjugateGraph::from_parts(&graph, construction, routing, route_cap)
            .map_err(corrupt)?;
        Ok(IndexFile {
            metric,
            dim,
            build: BuildParams {
                beam_width,
                max_degree,
                alpha,
                prune_rule,
            },
            seed,
            graph,
            conjugate,
        })
    }

    /// Writes to a sibling temp file and renames it over `path`.
    pub fn save(&self, path: &Path) -> Result<SectionSizes> {
        let (bytes, sizes) = self.encode()?;
        let tmp = temp_sibling(path);
        {
            let mut w = BufWriter::new(fs::File::create(&tmp)?);
            w.write_all(&bytes)?;
            w.flush()?;
            w.get_ref().sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(sizes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }

    /// Checks that `ds` is the dataset this index was built over.
    pub fn check_dataset(&self, ds: &VectorDataset) -> Result<()> {
        if ds.len() != self.graph.len() || ds.dim() != self.dim {
            return Err(invalid(format!(
                "index expects {} vectors of dimension {}, dataset has {} of dimension {}",
                self.graph.len(),
                self.dim,
                ds.len(),
                ds.dim()
            )));
        }
        if ds.metric() != self.metric {
            return Err(invalid(format!(
                "index metric {} differs from dataset metric {}",
                self.metric,
                ds.metric()
            )));
        }
        Ok(())
    }
}

fn temp_sibling(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|s| s.to_os_string())
        .unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < len {
            return Err(Error::CorruptIndex(format!(
                "truncated at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn id_list(&mut self) -> Result<Vec<VectorId>> {
        let count = self.u32()? as usize;
        let raw = self.take(
            count
                .checked_mul(4)
                .ok_or_else(|| Error::CorruptIndex("count overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(4)
            .map(|w| u32::from_le_bytes(w.try_into().unwrap()))
            .collect())
    }
}

/// Parses one search-log line (1-based `line` for error messages).
pub fn parse_log_line(text: &str, line: usize, dim: usize) -> Result<SearchLogEntry> {
    let err = |reason: String| Error::LogParse { line, reason };
    let fields: Vec<&str> = text.split('|').map(str::trim).collect();
    if fields.len() != 4 {
        return Err(err(format!(
            "expected 4 '|'-separated fields, found {}",
            fields.len()
        )));
    }
    let mut q = fields[0].split_whitespace();
    if q.next() != Some("Q") {
        return Err(err("first field must start with Q".into()));
    }
    let query = q
        .map(|t| {
            t.parse::<f32>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("bad query component {t:?}")))
        })
        .collect::<Result<Vec<f32>>>()?;
    if query.len() != dim {
        return Err(err(format!(
            "query has {} components, expected {dim}",
            query.len()
        )));
    }
    let keyed = |field: &str, key: &str| -> Result<u64> {
        let mut it = field.split_whitespace();
        match (it.next(), it.next(), it.next()) {
            (Some(k), Some(v), None) if k == key => v
                .parse::<u64>()
                .map_err(|_| err(format!("bad {key} value {v:?}"))),
            _ => Err(err(format!("expected `{key} <int>`, got {field:?}"))),
        }
    };
    let beam = keyed(fields[1], "L2")? as usize;
    if beam == 0 {
        return Err(err("L2 must be at least 1".into()));
    }
    let id =
        |v: u64, key: &str| u32::try_from(v).map_err(|_| err(format!("{key} id {v} too large")));
    let local_opt = id(keyed(fields[2], "LOPT")?, "LOPT")?;
    let global_opt = id(keyed(fields[3], "GOPT")?, "GOPT")?;
    Ok(SearchLogEntry {
        query,
        beam,
        local_opt,
        global_opt,
    })
}

pub fn format_log_line(e: &SearchLogEntry) -> String {
    let q: Vec<String> = e.query.iter().map(|x| x.to_string()).collect();
    format!(
        "Q {} | L2 {} | LOPT {} | GOPT {}",
        q.join(" "),
        e.beam,
        e.local_opt,
        e.global_opt
    )
}

pub fn read_search_log(path: &Path, dim: usize) -> Result<Vec<SearchLogEntry>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.push(parse_log_line(t, i + 1, dim)?);
    }
    Ok(out)
}

pub fn write_search_log(path: &Path, entries: &[SearchLogEntry]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for e in entries {
        writeln!(w, "{}", format_log_line(e))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conjugate::finalize_construction_log;
    use crate::graph::build;

    fn small_index() -> IndexFile {
        let ds = crate::synth::gaussian(60, 4, Metric::Euclidean, 5).unwrap();
        let params = BuildParams {
            beam_width: 20,
            max_degree: 6,
            ..BuildParams::default()
        };
        let (graph, log) = build(&ds, &params).unwrap();
        let conjugate = finalize_construction_log(&graph, &log).unwrap();
        IndexFile {
            metric: Metric::Euclidean,
            dim: 4,
            build: params,
            seed: 42,
            graph,
            conjugate,
        }
    }

    #[test]
    fn encode_decode_round_trip() {
        let idx = small_index();
        let (bytes, sizes) = idx.encode().unwrap();
        assert_eq!(bytes.len(), sizes.total());
        assert_eq!(IndexFile::decode(&bytes).unwrap(), idx);
    }

    #[test]
    fn any_flipped_byte_is_rejected() {
        let (bytes, _) = small_index().encode().unwrap();
        for pos in [0, 5, HEADER_LEN + 3, bytes.len() / 2, bytes.len() - 1] {
            let mut bad = bytes.clone();
            bad[pos] ^= 0x40;
            assert!(matches!(
                IndexFile::decode(&bad),
                Err(Error::CorruptIndex(_))
            ));
        }
        assert!(IndexFile::decode(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn log_line_round_trip() {
        let e = parse_log_line("Q 1.5 -2 0.25 | L2 50 | LOPT 7 | GOPT 3", 1, 3).unwrap();
        assert_eq!(e.query, vec![1.5, -2.0, 0.25]);
        assert_eq!((e.beam, e.local_opt, e.global_opt), (50, 7, 3));
        assert_eq!(parse_log_line(&format_log_line(&e), 1, 3).unwrap(), e);
    }

    #[test]
    fn malformed_log_lines_report_line_number() {
        for bad in [
            "Q 1 2 | L2 5 | LOPT 1",
            "Q 1 2 | L2 x | LOPT 1 | GOPT 2",
            "Q 1 | L2 5 | LOPT 1 | GOPT 2",
            "X 1 2 | L2 5 | LOPT 1 | GOPT 2",
            "Q 1 2 | L2 0 | LOPT 1 | GOPT 2",
            "Q 1 nan | L2 5 | LOPT 1 | GOPT 2",
        ] {
            match parse_log_line(bad, 9, 2) {
                Err(Error::LogParse { line: 9, .. }) => {}
                other => panic!("{bad:?} gave {other:?}"),
            }
        }
    }
}
