//! Stable CSV and JSON outputs.
//!
//! Every file is written to a temporary sibling and renamed into place.
//! Numbers use Rust's shortest round-trip decimal form, so emitting the same
//! data twice yields identical bytes.
//!
//! | file            | columns / content                                          |
//! |-----------------|------------------------------------------------------------|
//! | `histogram.csv` | `bin_lo,bin_hi,count,pct`                                  |
//! | `bits.csv`      | `bit_index,p_one`                                          |
//! | `curve.csv`     | `b,b_over_K,P`                                             |
//! | `matrix.csv`    | `network,format,policy,mean_abs_dev,pct_worst_bin,pct_best_bin` |
//! | `blocks.csv`    | `block,layer,filter_set,chunk,first_filter,filters,elem_start,elem_end` |
//! | `dutymap.bin`   | little-endian `u32` pairs `(ones, total)`, row-major       |
//! | `dutymap.json`  | geometry plus mean, min, max and fraction within 0.5 ± 0.05 |
//! | `result.json`   | the full run result, including the config echo and hash    |

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;

use crate::aging::{DutyCycleMap, DutySummary, SnmHistogram};
use crate::bitstats::BitDistribution;
use crate::dataflow::BlockPlan;
use crate::error::{Error, Result};
use crate::probmodel::CurvePoint;
use crate::sim::{DeviationReport, MatrixReport, MatrixRow, RunResult};

pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const BITS_FILE: &str = "bits.csv";
pub const CURVE_FILE: &str = "curve.csv";
pub const MATRIX_CSV_FILE: &str = "matrix.csv";
pub const MATRIX_JSON_FILE: &str = "matrix.json";
pub const BLOCKS_FILE: &str = "blocks.csv";
pub const DUTYMAP_FILE: &str = "dutymap.bin";
pub const DUTYMAP_SUMMARY_FILE: &str = "dutymap.json";
pub const RESULT_FILE: &str = "result.json";
pub const COMPARE_FILE: &str = "compare.json";

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn csv_bytes<I, R>(header: &[&str], rows: I) -> Vec<u8>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("report types serialize");
    v.push(b'\n');
    v
}

pub fn histogram_csv(h: &SnmHistogram) -> Vec<u8> {
    csv_bytes(
        &["bin_lo", "bin_hi", "count", "pct"],
        h.bins.iter().map(|b| [num(b.lo), num(b.hi), b.count.to_string(), num(b.pct)]),
    )
}

pub fn bits_csv(d: &BitDistribution) -> Vec<u8> {
    csv_bytes(
        &["bit_index", "p_one"],
        d.p_one.iter().enumerate().map(|(i, &p)| [i.to_string(), num(p)]),
    )
}

pub fn curve_csv(points: &[CurvePoint]) -> Vec<u8> {
    csv_bytes(
        &["b", "b_over_K", "P"],
        points.iter().map(|p| [p.b.to_string(), num(p.b_over_k), num(p.p)]),
    )
}

pub fn matrix_csv(rows: &[MatrixRow]) -> Vec<u8> {
    csv_bytes(
        &["network", "format", "policy", "mean_abs_dev", "pct_worst_bin", "pct_best_bin"],
        rows.iter().map(|r| {
            [
                r.network.clone(),
                r.format.clone(),
                r.policy.clone(),
                num(r.mean_abs_dev),
                num(r.pct_worst_bin),
                num(r.pct_best_bin),
            ]
        }),
    )
}

pub fn block_map_csv(plan: &BlockPlan) -> Vec<u8> {
    csv_bytes(
        &["block", "layer", "filter_set", "chunk", "first_filter", "filters", "elem_start", "elem_end"],
        plan.blocks.iter().enumerate().map(|(i, b)| {
            [i, b.layer, b.filter_set, b.chunk, b.first_filter, b.filters, b.elem_start, b.elem_end].map(|v| v.to_string())
        }),
    )
}

/// Contents of `dutymap.json`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DutyMapHeader {
    pub rows: usize,
    pub word_bits: usize,
    #[serde(flatten)]
    pub summary: DutySummary,
}

pub fn emit_duty_map(map: &DutyCycleMap, dir: &Path) -> Result<Vec<PathBuf>> {
    let header = DutyMapHeader { rows: map.rows, word_bits: map.word_bits, summary: map.summary() };
    let bin = dir.join(DUTYMAP_FILE);
    let json = dir.join(DUTYMAP_SUMMARY_FILE);
    write_atomic(&bin, &map.to_bytes())?;
    write_atomic(&json, &json_bytes(&header))?;
    Ok(vec![bin, json])
}

pub fn load_duty_map(dir: &Path) -> Result<DutyCycleMap> {
    let json = dir.join(DUTYMAP_SUMMARY_FILE);
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let header: DutyMapHeader =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", json.display())))?;
    let map = DutyCycleMap::load(dir.join(DUTYMAP_FILE), header.word_bits)?;
    if map.rows != header.rows {
        return Err(Error::invalid(format!("{} declares {} rows, dump has {}", json.display(), header.rows, map.rows)));
    }
    Ok(map)
}

/// Writes `result.json`, `histogram.csv`, `dutymap.bin` and `dutymap.json`.
pub fn emit_run(result: &RunResult, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = vec![dir.join(RESULT_FILE), dir.join(HISTOGRAM_FILE)];
    write_atomic(&files[0], &json_bytes(result))?;
    write_atomic(&files[1], &histogram_csv(&result.histogram))?;
    files.extend(emit_duty_map(&result.duty_map, dir)?);
    Ok(files)
}

/// Reads back a directory written by [`emit_run`].
pub fn load_run(dir: &Path) -> Result<RunResult> {
    let path = dir.join(RESULT_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut result: RunResult =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    result.duty_map = load_duty_map(dir)?;
    Ok(result)
}

pub fn emit_bits(dist: &BitDistribution, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(BITS_FILE);
    write_atomic(&path, &bits_csv(dist))?;
    Ok(path)
}

pub fn emit_curve(points: &[CurvePoint], dir: &Path) -> Result<PathBuf> {
    let path = dir.join(CURVE_FILE);
    write_atomic(&path, &curve_csv(points))?;
    Ok(path)
}

pub fn emit_matrix(report: &MatrixReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let csv = dir.join(MATRIX_CSV_FILE);
    let json = dir.join(MATRIX_JSON_FILE);
    write_atomic(&csv, &matrix_csv(&report.rows()))?;
    write_atomic(&json, &json_bytes(report))?;
    Ok(vec![csv, json])
}

pub fn emit_block_map(plan: &BlockPlan, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(BLOCKS_FILE);
    write_atomic(&path, &block_map_csv(plan))?;
    Ok(path)
}

pub fn emit_comparison(report: &DeviationReport, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(COMPARE_FILE);
    write_atomic(&path, &json_bytes(report))?;
    Ok(path)
}

/// Pretty JSON with a trailing newline, as written to report files.
pub fn to_json(value: &impl Serialize) -> String {
    String::from_utf8(json_bytes(value)).expect("JSON is UTF-8")
}
