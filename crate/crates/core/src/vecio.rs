//! Readers and writers for the fvecs / ivecs / csv vector formats.
//!
//! fvecs and ivecs are little-endian sequences of records `[i32 d][d x f32|i32]`.
//! csv holds one vector per line as comma-separated decimal floats.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::dataset::{Metric, VectorDataset};
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VectorFormat {
    Fvecs,
    Ivecs,
    Csv,
}

impl FromStr for VectorFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fvecs" => Ok(VectorFormat::Fvecs),
            "ivecs" => Ok(VectorFormat::Ivecs),
            "csv" => Ok(VectorFormat::Csv),
            other => Err(invalid(format!("unknown vector format {other:?}"))),
        }
    }
}

impl VectorFormat {
    /// Guess from the file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        path.extension()
            .and_then(|e| e.to_str())
            .and_then(|e| e.parse().ok())
    }
}

fn ingest_err(path: &Path, offset: usize, reason: impl Into<String>) -> Error {
    Error::Ingest {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason: reason.into(),
    }
}

/// Decodes `[i32 d][d x 4-byte payload]` records, mapping each payload word with `conv`.
fn decode_records<T>(
    path: &Path,
    bytes: &[u8],
    conv: impl Fn([u8; 4]) -> T,
) -> Result<(usize, Vec<T>)> {
    let mut dim: Option<usize> = None;
    let mut out = Vec::new();
    let mut off = 0usize;
    while off < bytes.len() {
        if bytes.len() - off < 4 {
            return Err(ingest_err(path, off, "truncated dimension header"));
        }
        let d = i32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        if d <= 0 {
            return Err(ingest_err(path, off, format!("non-positive dimension {d}")));
        }
        let d = d as usize;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(ingest_err(
                    path,
                    off,
                    format!("record dimension {d} differs from first record's {expected}"),
                ))
            }
            _ => {}
        }
        let body = off + 4;
        let end = body + 4 * d;
        if end > bytes.len() {
            return Err(ingest_err(path, off, "truncated record payload"));
        }
        out.extend(
            bytes[body..end]
                .chunks_exact(4)
                .map(|w| conv(w.try_into().unwrap())),
        );
        off = end;
    }
    match dim {
        Some(d) => Ok((d, out)),
        None => Err(ingest_err(path, 0, "file contains no records")),
    }
}

/// Reads an fvecs file into `(dimension, flat row-major values)`.
pub fn read_fvecs(path: &Path) -> Result<(usize, Vec<f32>)> {
    let bytes = fs::read(path)?;
    decode_records(path, &bytes, f32::from_le_bytes)
}

/// Reads an ivecs file into rows.
pub fn read_ivecs(path: &Path) -> Result<Vec<Vec<i32>>> {
    let bytes = fs::read(path)?;
    let (d, flat) = decode_records(path, &bytes, i32::from_le_bytes)?;
    Ok(flat.chunks_exact(d).map(<[i32]>::to_vec).collect())
}

fn read_csv(path: &Path) -> Result<(usize, Vec<f32>)> {
    let text = fs::read_to_string(path)?;
    let mut dim: Option<usize> = None;
    let mut out = Vec::new();
    let mut off = 0usize;
    for line in text.split_inclusive('\n') {
        let start = off;
        off += line.len();
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut count = 0usize;
        for field in trimmed.split(',') {
            let v: f32 = field.trim().parse().map_err(|_| {
                ingest_err(
                    path,
                    start,
                    format!("cannot parse {:?} as float", field.trim()),
                )
            })?;
            out.push(v);
            count += 1;
        }
        match dim {
            None => dim = Some(count),
            Some(expected) if expected != count => {
                return Err(ingest_err(
                    path,
                    start,
                    format!("row has {count} values, expected {expected}"),
                ))
            }
            _ => {}
        }
    }
    match dim {
        Some(d) => Ok((d, out)),
        None => Err(ingest_err(path, 0, "file contains no rows")),
    }
}

/// Loads a dataset in the given format under `metric`.
pub fn load_vectors(path: &Path, format: VectorFormat, metric: Metric) -> Result<VectorDataset> {
    let (dim, flat) = match format {
        VectorFormat::Fvecs => read_fvecs(path)?,
        VectorFormat::Ivecs => {
            let bytes = fs::read(path)?;
            decode_records(path, &bytes, |w| i32::from_le_bytes(w) as f32)?
        }
        VectorFormat::Csv => read_csv(path)?,
    };
    VectorDataset::from_flat(dim, flat, metric)
}

/// Loads vectors as plain rows (for query files).
pub fn load_rows(path: &Path, format: VectorFormat) -> Result<Vec<Vec<f32>>> {
    let ds = load_vectors(path, format, Metric::Euclidean)?;
    Ok(ds.to_rows())
}

fn write_records<'a, I, T, F>(path: &Path, rows: I, encode: F) -> Result<()>
where
    I: IntoIterator<Item = &'a [T]>,
    T: 'a + Copy,
    F: Fn(T) -> [u8; 4],
{
    let mut w = BufWriter::new(fs::File::create(path)?);
    for row in rows {
        let d = i32::try_from(row.len()).map_err(|_| invalid("row too long for fvecs"))?;
        w.write_all(&d.to_le_bytes())?;
        for &x in row {
            w.write_all(&encode(x))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_fvecs<'a, I>(path: &Path, rows: I) -> Result<()>
where
    I: IntoIterator<Item = &'a [f32]>,
{
    write_records(path, rows, f32::to_le_bytes)
}

pub fn write_ivecs<'a, I>(path: &Path, rows: I) -> Result<()>
where
    I: IntoIterator<Item = &'a [i32]>,
{
    write_records(path, rows, i32::to_le_bytes)
}

pub fn write_csv<'a, I>(path: &Path, rows: I) -> Result<()>
where
    I: IntoIterator<Item = &'a [f32]>,
{
    let mut w = BufWriter::new(fs::File::create(path)?);
    for row in rows {
        let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}
