//! Output files: traces, point clouds, density grids, checkpoints.
//!
//! Every CSV starts with a `# config_hash=<hash>` comment so outputs from
//! different configs cannot be mixed up silently.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use meco_core::model::Slice;
use meco_core::{DenseArray, Layout, ParamVector};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, HarnessError, Result};

/// One row of a training trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: u64,
    /// `‖θ − θ*‖²` where a ground truth exists, NaN otherwise.
    pub mse: f64,
    pub loss_proxy: f64,
    /// `‖v‖` for MECO, `‖grad‖` otherwise.
    pub grad_norm: f64,
    /// NaN for methods without a `u` estimator.
    pub log_u: f64,
    pub clip_events: u64,
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            create_dir(parent)?;
        }
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn hash_line(w: &mut impl Write, path: &Path, hash: &str) -> Result<()> {
    writeln!(w, "# config_hash={hash}").map_err(io_err(path))
}

/// Writes serializable rows as CSV with a header and the hash comment.
pub fn write_rows<T: Serialize>(path: &Path, hash: &str, rows: &[T]) -> Result<()> {
    let mut w = create(path)?;
    hash_line(&mut w, path, hash)?;
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        csv.serialize(r)?;
    }
    csv.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn write_trace(path: &Path, hash: &str, rows: &[TraceRow]) -> Result<()> {
    write_rows(path, hash, rows)
}

/// Column names for a point cloud of dimension `d`: `x, y` in 2-D.
fn point_header(d: usize) -> Vec<String> {
    match d {
        1 => vec!["x".into()],
        2 => vec!["x".into(), "y".into()],
        _ => (0..d).map(|i| format!("x{i}")).collect(),
    }
}

/// Points as CSV with a header row; `hash` adds the comment line.
pub fn write_points(path: &Path, hash: Option<&str>, points: &DenseArray) -> Result<()> {
    let mut w = create(path)?;
    if let Some(h) = hash {
        hash_line(&mut w, path, h)?;
    }
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(point_header(points.cols()))?;
    for row in points.iter_rows() {
        csv.write_record(row.iter().map(|v| v.to_string()))?;
    }
    csv.flush().map_err(io_err(path))?;
    Ok(())
}

/// Reads a CSV of points written by [`write_points`]; comment lines are skipped.
pub fn read_points(path: &Path) -> Result<DenseArray> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
    let cols = rdr.headers()?.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        for field in rec.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| HarnessError::Config(format!("{}: bad number `{field}`", path.display())))?;
            data.push(v);
        }
        rows += 1;
    }
    Ok(DenseArray::matrix(rows, cols, data))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BlockHeader {
    name: String,
    offset: usize,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    config_hash: String,
    len: usize,
    layout: Vec<BlockHeader>,
    /// Extra scalars saved next to θ (e.g. NCE's α).
    extra: serde_json::Map<String, serde_json::Value>,
}

const CHECKPOINT_FORMAT: &str = "meco-params-v1";

/// A loaded checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamVector,
    pub config_hash: String,
    pub extra: serde_json::Map<String, serde_json::Value>,
}

/// One JSON header line, then `len` little-endian `f64`s.
pub fn write_checkpoint(
    path: &Path,
    hash: &str,
    params: &ParamVector,
    extra: serde_json::Map<String, serde_json::Value>,
) -> Result<()> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        config_hash: hash.into(),
        len: params.len(),
        layout: params
            .layout()
            .slices()
            .iter()
            .map(|s| BlockHeader { name: s.name.clone(), offset: s.offset, shape: s.shape.clone() })
            .collect(),
        extra,
    };
    let mut w = create(path)?;
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n").map_err(io_err(path))?;
    for v in params.values() {
        w.write_all(&v.to_le_bytes()).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bad = |reason: String| HarnessError::Checkpoint { path: PathBuf::from(path), reason };
    let mut r = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line).map_err(io_err(path))?;
    if line.last() != Some(&b'\n') {
        return Err(bad("missing header line".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&line).map_err(|e| bad(format!("header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(bad(format!("unknown format `{}`", header.format)));
    }
    let slices = header.layout.into_iter().map(|b| Slice { name: b.name, offset: b.offset, shape: b.shape }).collect();
    let layout = Layout::from_slices(slices).map_err(|e| bad(e.to_string()))?;
    if layout.len() != header.len {
        return Err(bad(format!("layout covers {} values, header says {}", layout.len(), header.len)));
    }
    let mut body = Vec::new();
    r.read_to_end(&mut body).map_err(io_err(path))?;
    if body.len() != 8 * header.len {
        return Err(bad(format!("expected {} bytes of values, found {}", 8 * header.len, body.len())));
    }
    let values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    let params = ParamVector::new(layout, values).map_err(|e| bad(e.to_string()))?;
    Ok(Checkpoint { params, config_hash: header.config_hash, extra: header.extra })
}
