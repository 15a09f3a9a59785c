//! Per-cell duty-cycle accounting and SNM degradation.
//!
//! Counting is exact: every cell carries an integer count of dwell units
//! spent storing '1', and every row a count of dwell units written. Words are
//! added through bit-sliced vertical counters (one `u64` plane per counter
//! bit, 64 cells per limb), which are flushed into the per-cell `u32`
//! counters before they can overflow.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataflow::{MemoryGeometry, WriteStream};
use crate::encoders::{EncodingPolicy, Encoder};
use crate::error::{Error, Result};

const PLANES: usize = 8;
const FLUSH_AT: u32 = (1 << PLANES) - 1;

/// Exact per-cell counters.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DutyCycleMap {
    pub rows: usize,
    pub word_bits: usize,
    /// Row-major, `rows · word_bits` entries.
    pub ones: Vec<u32>,
    /// Dwell units written per row; shared by every cell of the row.
    pub row_dwell: Vec<u32>,
}

impl DutyCycleMap {
    pub fn zeroed(rows: usize, word_bits: usize) -> Self {
        DutyCycleMap {
            rows,
            word_bits,
            ones: vec![0; rows * word_bits],
            row_dwell: vec![0; rows],
        }
    }

    pub fn cells(&self) -> usize {
        self.ones.len()
    }

    pub fn total_dwell(&self, cell: usize) -> u32 {
        self.row_dwell[cell / self.word_bits]
    }

    pub fn duty_cycle(&self, cell: usize) -> f64 {
        self.ones[cell] as f64 / self.total_dwell(cell) as f64
    }

    /// `(ones, total)` for every cell, row-major.
    pub fn pairs(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.ones
            .iter()
            .enumerate()
            .map(move |(i, &o)| (o, self.row_dwell[i / self.word_bits]))
    }

    /// Returns `self · factor + other` cell by cell.
    pub fn scaled_add(&self, factor: u64, other: &DutyCycleMap) -> Result<DutyCycleMap> {
        if (self.rows, self.word_bits) != (other.rows, other.word_bits) {
            return Err(Error::invalid("duty maps have different shapes"));
        }
        let combine = |a: u32, b: u32| -> Result<u32> {
            let v = a as u64 * factor + b as u64;
            u32::try_from(v).map_err(|_| Error::CounterOverflow(v))
        };
        Ok(DutyCycleMap {
            rows: self.rows,
            word_bits: self.word_bits,
            ones: self
                .ones
                .iter()
                .zip(&other.ones)
                .map(|(&a, &b)| combine(a, b))
                .collect::<Result<_>>()?,
            row_dwell: self
                .row_dwell
                .iter()
                .zip(&other.row_dwell)
                .map(|(&a, &b)| combine(a, b))
                .collect::<Result<_>>()?,
        })
    }

    /// Little-endian `u32` pairs `(ones, total)`, row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.cells() * 8);
        for (o, t) in self.pairs() {
            out.extend_from_slice(&o.to_le_bytes());
            out.extend_from_slice(&t.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], word_bits: usize) -> Result<Self> {
        if word_bits == 0 || bytes.len() % (8 * word_bits) != 0 {
            return Err(Error::invalid(format!(
                "duty map of {} bytes is not a whole number of {word_bits}-cell rows",
                bytes.len()
            )));
        }
        let rows = bytes.len() / (8 * word_bits);
        let mut map = DutyCycleMap::zeroed(rows, word_bits);
        for (i, pair) in bytes.chunks_exact(8).enumerate() {
            let ones = u32::from_le_bytes(pair[..4].try_into().unwrap());
            let total = u32::from_le_bytes(pair[4..].try_into().unwrap());
            let row = i / word_bits;
            if i % word_bits == 0 {
                map.row_dwell[row] = total;
            } else if map.row_dwell[row] != total {
                return Err(Error::invalid(format!("row {row} has inconsistent totals")));
            }
            if ones > total {
                return Err(Error::invalid(format!("cell {i}: ones {ones} exceed total {total}")));
            }
            map.ones[i] = ones;
        }
        Ok(map)
    }

    pub fn load(path: impl AsRef<Path>, word_bits: usize) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, word_bits)
    }

    pub fn summary(&self) -> DutySummary {
        let n = self.cells();
        let mut sum = 0.0;
        let mut dev = 0.0;
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut near = 0usize;
        let mut written = 0usize;
        for (o, t) in self.pairs() {
            if t == 0 {
                continue;
            }
            written += 1;
            let d = o as f64 / t as f64;
            sum += d;
            dev += (d - 0.5).abs();
            min = min.min(d);
            max = max.max(d);
            // |o/t − 0.5| ≤ 0.05  ⇔  |20·o − 10·t| ≤ t, exactly.
            if (20 * o as i64 - 10 * t as i64).abs() <= t as i64 {
                near += 1;
            }
        }
        let w = written.max(1) as f64;
        DutySummary {
            cells: n as u64,
            written_cells: written as u64,
            mean: sum / w,
            min: if written > 0 { min } else { 0.0 },
            max: if written > 0 { max } else { 0.0 },
            mean_abs_dev: dev / w,
            frac_within_0_05: near as f64 / w,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DutySummary {
    pub cells: u64,
    pub written_cells: u64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Mean of `|d − 0.5|`.
    pub mean_abs_dev: f64,
    /// Fraction of cells with `|d − 0.5| ≤ 0.05`.
    pub frac_within_0_05: f64,
}

/// Bit-sliced duty-cycle accumulator.
#[derive(Debug, Clone)]
pub struct DutyAccumulator {
    map: DutyCycleMap,
    limbs: usize,
    planes: Vec<u64>,
    pending: Vec<u32>,
}

impl DutyAccumulator {
    pub fn new(geometry: &MemoryGeometry) -> Self {
        let limbs = geometry.limbs_per_row();
        DutyAccumulator {
            map: DutyCycleMap::zeroed(geometry.rows, geometry.word_bits),
            limbs,
            planes: vec![0; geometry.rows * limbs * PLANES],
            pending: vec![0; geometry.rows],
        }
    }

    pub fn rows(&self) -> usize {
        self.map.rows
    }

    pub fn add(&mut self, row: usize, word: &[u64], dwell: u32) -> Result<()> {
        if row >= self.map.rows {
            return Err(Error::RowOutOfRange { row, rows: self.map.rows });
        }
        let total = self.map.row_dwell[row] as u64 + self.pending[row] as u64 + dwell as u64;
        if total > u32::MAX as u64 {
            return Err(Error::CounterOverflow(total));
        }
        if dwell != 1 {
            self.flush_row(row);
            let base = row * self.map.word_bits;
            for (l, &limb) in word.iter().enumerate() {
                let mut bits = limb;
                while bits != 0 {
                    self.map.ones[base + l * 64 + bits.trailing_zeros() as usize] += dwell;
                    bits &= bits - 1;
                }
            }
            self.map.row_dwell[row] += dwell;
            return Ok(());
        }
        let planes = &mut self.planes[row * self.limbs * PLANES..(row + 1) * self.limbs * PLANES];
        for (l, &limb) in word.iter().enumerate() {
            let mut carry = limb;
            for p in planes[l * PLANES..(l + 1) * PLANES].iter_mut() {
                if carry == 0 {
                    break;
                }
                let c = *p & carry;
                *p ^= carry;
                carry = c;
            }
        }
        self.pending[row] += 1;
        if self.pending[row] == FLUSH_AT {
            self.flush_row(row);
        }
        Ok(())
    }

    fn flush_row(&mut self, row: usize) {
        if self.pending[row] == 0 {
            return;
        }
        let base = row * self.map.word_bits;
        let planes = &mut self.planes[row * self.limbs * PLANES..(row + 1) * self.limbs * PLANES];
        for l in 0..self.limbs {
            for (p, plane) in planes[l * PLANES..(l + 1) * PLANES].iter_mut().enumerate() {
                let mut bits = *plane;
                while bits != 0 {
                    self.map.ones[base + l * 64 + bits.trailing_zeros() as usize] += 1 << p;
                    bits &= bits - 1;
                }
                *plane = 0;
            }
        }
        self.map.row_dwell[row] += self.pending[row];
        self.pending[row] = 0;
    }

    /// Current counts, leaving the accumulator usable.
    pub fn snapshot(&mut self) -> DutyCycleMap {
        for r in 0..self.map.rows {
            self.flush_row(r);
        }
        self.map.clone()
    }

    pub fn finish(mut self) -> DutyCycleMap {
        for r in 0..self.map.rows {
            self.flush_row(r);
        }
        self.map
    }
}

/// Replays `stream` through a fresh encoder for `policy` and counts every
/// stored bit.
///
/// Deterministic policies return to their initial state after a bounded
/// number of inferences `p`; the counts over `q·p + r` inferences are then
/// `q·A(p) + A(r)`, so only `p + r` inferences are simulated.
pub fn accumulate(stream: &WriteStream<'_>, policy: &EncodingPolicy, geometry: &MemoryGeometry) -> Result<DutyCycleMap> {
    check_counter_budget(stream)?;
    let mut enc = Encoder::new(*policy, geometry.word_bits, geometry.rows)?;
    let mut acc = DutyAccumulator::new(geometry);
    let k = stream.k_inf() as u64;
    if !policy.is_deterministic() {
        replay(stream, 0..stream.total_blocks(), &mut enc, &mut acc)?;
        return Ok(acc.finish());
    }
    let slots = stream.config.slots() as u64;
    let n = stream.inferences as u64;
    for i in 1..=n {
        replay(stream, (i - 1) * k..i * k, &mut enc, &mut acc)?;
        if i < n && (i * k) % slots == 0 && enc.is_at_initial_state() {
            let (q, r) = (n / i, n % i);
            let period = acc.snapshot();
            replay(stream, i * k..(i + r) * k, &mut enc, &mut acc)?;
            return period.scaled_add(q - 1, &acc.finish());
        }
    }
    Ok(acc.finish())
}

/// Streams blocks `range` (stream indices) through `enc` into `acc`.
pub(crate) fn replay(
    stream: &WriteStream<'_>,
    range: std::ops::Range<u64>,
    enc: &mut Encoder,
    acc: &mut DutyAccumulator,
) -> Result<()> {
    let rows = stream.config.block_rows();
    let k = stream.k_inf() as u64;
    let mut scratch = vec![0u64; stream.blocks.limbs_per_row];
    for t in range {
        let bi = (t % k) as usize;
        let base = stream.base_row(t);
        let dwell = stream.dwell[bi];
        for r in 0..rows {
            scratch.copy_from_slice(stream.blocks.row(bi, r));
            enc.encode_in_place(&mut scratch, base + r)?;
            acc.add(base + r, &scratch, dwell)?;
        }
        enc.end_block();
    }
    Ok(())
}

/// Rejects streams whose per-row dwell would not fit the 32-bit counters.
pub fn check_counter_budget(stream: &WriteStream<'_>) -> Result<()> {
    let worst = stream.dwell_per_row().into_iter().max().unwrap_or(0);
    if worst > u32::MAX as u64 {
        return Err(Error::CounterOverflow(worst));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SnmCurve {
    /// `deg(d) = best + (worst − best)·|2d − 1|`.
    Linear,
    /// Piecewise-linear `(duty_cycle, degradation %)` points sorted by duty
    /// cycle, spanning `[0, 1]`.
    Table { points: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnmModel {
    pub best_degradation_pct: f64,
    pub worst_degradation_pct: f64,
    pub curve: SnmCurve,
}

/// SNM degradation after seven years at 50 % duty-cycle.
pub const BEST_DEGRADATION_PCT: f64 = 10.82;
/// SNM degradation after seven years at 0 % or 100 % duty-cycle.
pub const WORST_DEGRADATION_PCT: f64 = 26.12;

impl Default for SnmModel {
    fn default() -> Self {
        SnmModel {
            best_degradation_pct: BEST_DEGRADATION_PCT,
            worst_degradation_pct: WORST_DEGRADATION_PCT,
            curve: SnmCurve::Linear,
        }
    }
}

impl SnmModel {
    pub fn from_table(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("SNM table needs at least two points"));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::invalid("SNM table duty-cycles must be strictly increasing"));
        }
        if points[0].0 != 0.0 || points[points.len() - 1].0 != 1.0 {
            return Err(Error::invalid("SNM table must span duty-cycles 0 through 1"));
        }
        if points.iter().any(|p| !p.1.is_finite()) {
            return Err(Error::invalid("SNM table values must be finite"));
        }
        let best = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let worst = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        Ok(SnmModel {
            best_degradation_pct: best,
            worst_degradation_pct: worst,
            curve: SnmCurve::Table { points },
        })
    }

    /// Reads a two-column CSV `duty_cycle,degradation_pct`; a non-numeric
    /// first line is taken as a header.
    pub fn load_table_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut points = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split(',').map(str::trim);
            let parsed = (cols.next().map(str::parse::<f64>), cols.next().map(str::parse::<f64>));
            match parsed {
                (Some(Ok(d)), Some(Ok(v))) => points.push((d, v)),
                _ if i == 0 => continue,
                _ => return Err(Error::invalid(format!("{}:{}: expected `duty,deg`", path.display(), i + 1))),
            }
        }
        Self::from_table(points)
    }

    pub fn degradation(&self, duty: f64) -> f64 {
        match &self.curve {
            SnmCurve::Linear => {
                let x = (2.0 * duty - 1.0).abs();
                self.best_degradation_pct * (1.0 - x) + self.worst_degradation_pct * x
            }
            SnmCurve::Table { points } => {
                let d = duty.clamp(0.0, 1.0);
                let i = points.partition_point(|p| p.0 <= d).clamp(1, points.len() - 1);
                let (x0, y0) = points[i - 1];
                let (x1, y1) = points[i];
                let t = (d - x0) / (x1 - x0);
                y0 * (1.0 - t) + y1 * t
            }
        }
    }

    /// Histogram range.
    pub fn range(&self) -> (f64, f64) {
        (self.best_degradation_pct, self.worst_degradation_pct)
    }
}

/// Degradation of every cell.
pub fn snm_of(map: &DutyCycleMap, model: &SnmModel) -> Result<Vec<f64>> {
    if let Some(row) = map.row_dwell.iter().position(|&t| t == 0) {
        return Err(Error::invalid(format!("row {row} was never written; duty-cycle undefined")));
    }
    Ok(map.pairs().map(|(o, t)| model.degradation(o as f64 / t as f64)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
    pub pct: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SnmHistogram {
    pub bins: Vec<HistogramBin>,
    pub cells: u64,
}

pub const DEFAULT_BINS: usize = 32;

impl SnmHistogram {
    pub fn best_bin_pct(&self) -> f64 {
        self.bins.first().map_or(0.0, |b| b.pct)
    }

    pub fn worst_bin_pct(&self) -> f64 {
        self.bins.last().map_or(0.0, |b| b.pct)
    }
}

/// Half-open uniform bins over `[lo, hi]`, last bin closed. Values outside
/// the range land in the nearest edge bin.
pub fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Result<SnmHistogram> {
    if values.is_empty() {
        return Err(Error::Empty("degradation values"));
    }
    if bins == 0 || !(hi > lo) {
        return Err(Error::invalid(format!("need bins ≥ 1 and lo < hi, got {bins} over [{lo}, {hi}]")));
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &v in values {
        let i = ((v - lo) / width).floor();
        let i = if i.is_nan() { 0 } else { (i.max(0.0) as usize).min(bins - 1) };
        counts[i] += 1;
    }
    let n = values.len() as u64;
    let bins = counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            lo: lo + width * i as f64,
            hi: if i + 1 == bins { hi } else { lo + width * (i + 1) as f64 },
            count,
            pct: 100.0 * count as f64 / n as f64,
        })
        .collect();
    Ok(SnmHistogram { bins, cells: n })
}
