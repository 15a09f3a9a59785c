//! Memory geometry, block partitioning and the per-inference write stream.
//!
//! A layer's filters are grouped into sets of `f`. Each set is cut into
//! chunks of `block_rows · N` consecutive weights per filter (channel-major,
//! then row-major spatial, i.e. the canonical tensor order). One block holds
//! one chunk of every filter in the set, interleaved so that memory row `r`
//! carries weights `r·N .. (r+1)·N` of each of the `f` filters:
//!
//! ```text
//!   row r: | filter 0: N weights | filter 1: N weights | ... | filter f-1 |
//!           ^ bit 0
//! ```
//!
//! Blocks are emitted set by set, and within a set chunk by chunk. Missing
//! filters and the tail of a partial chunk are padded with zero words.
//!
//! The baseline accelerator overwrites the whole memory with each block. The
//! TPU-like accelerator streams `f × f` tiles through a circular FIFO of
//! `fifo_tiles` slots; tile `t` of the stream lands in slot `t mod fifo_tiles`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::weights::{LayerSpec, WeightWords};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryGeometry {
    pub total_bits: u64,
    pub word_bits: usize,
    pub rows: usize,
}

impl MemoryGeometry {
    pub fn new(total_bits: u64, word_bits: usize) -> Result<Self> {
        if word_bits == 0 || total_bits == 0 || total_bits % word_bits as u64 != 0 {
            return Err(Error::invalid(format!(
                "word width {word_bits} must divide memory size {total_bits} bits"
            )));
        }
        Ok(MemoryGeometry {
            total_bits,
            word_bits,
            rows: (total_bits / word_bits as u64) as usize,
        })
    }

    pub fn cells(&self) -> u64 {
        self.total_bits
    }

    pub fn limbs_per_row(&self) -> usize {
        self.word_bits.div_ceil(64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AcceleratorKind {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "tpu-like")]
    TpuLike,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceleratorConfig {
    pub kind: AcceleratorKind,
    /// Filters processed in parallel.
    pub filters: usize,
    /// Weights per filter per memory word (multipliers per PE on the baseline).
    pub weights_per_filter: usize,
    pub bits_per_weight: u32,
    pub geometry: MemoryGeometry,
    /// FIFO depth in tiles; 0 for the baseline.
    pub fifo_tiles: usize,
}

impl AcceleratorConfig {
    /// Whole-memory blocks, one word = `f · N` weights.
    pub fn baseline(memory_bytes: u64, filters: usize, weights_per_filter: usize, bits_per_weight: u32) -> Result<Self> {
        let word_bits = filters * weights_per_filter * bits_per_weight as usize;
        let cfg = AcceleratorConfig {
            kind: AcceleratorKind::Baseline,
            filters,
            weights_per_filter,
            bits_per_weight,
            geometry: MemoryGeometry::new(memory_bytes * 8, word_bits)?,
            fifo_tiles: 0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Weight FIFO of `fifo_tiles` tiles, each `f × f` weights; one word is
    /// one tile row of `f` weights.
    pub fn tpu_like(filters: usize, fifo_tiles: usize, bits_per_weight: u32) -> Result<Self> {
        let word_bits = filters * bits_per_weight as usize;
        let total_bits = (fifo_tiles * filters * word_bits) as u64;
        let cfg = AcceleratorConfig {
            kind: AcceleratorKind::TpuLike,
            filters,
            weights_per_filter: 1,
            bits_per_weight,
            geometry: MemoryGeometry::new(total_bits, word_bits)?,
            fifo_tiles,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.filters == 0 || self.weights_per_filter == 0 {
            return Err(Error::invalid("f and N must be at least 1"));
        }
        if !matches!(self.bits_per_weight, 8 | 32) {
            return Err(Error::invalid(format!("unsupported weight width {}", self.bits_per_weight)));
        }
        let word = self.filters * self.weights_per_filter * self.bits_per_weight as usize;
        if word != self.geometry.word_bits {
            return Err(Error::invalid(format!(
                "word width {} does not match f·N·bits = {word}",
                self.geometry.word_bits
            )));
        }
        MemoryGeometry::new(self.geometry.total_bits, self.geometry.word_bits)?;
        match self.kind {
            AcceleratorKind::Baseline => {}
            AcceleratorKind::TpuLike => {
                if self.fifo_tiles == 0 {
                    return Err(Error::invalid("TPU-like FIFO needs at least one tile"));
                }
                if self.weights_per_filter != 1 {
                    return Err(Error::invalid("TPU-like words hold one weight per filter"));
                }
                if self.geometry.rows != self.fifo_tiles * self.filters {
                    return Err(Error::invalid(format!(
                        "TPU-like memory must hold {} tiles of {} rows, has {} rows",
                        self.fifo_tiles, self.filters, self.geometry.rows
                    )));
                }
            }
        }
        Ok(())
    }

    /// Rows written by one block.
    pub fn block_rows(&self) -> usize {
        match self.kind {
            AcceleratorKind::Baseline => self.geometry.rows,
            AcceleratorKind::TpuLike => self.filters,
        }
    }

    /// Weights of one filter carried by one block.
    pub fn chunk_len(&self) -> usize {
        self.block_rows() * self.weights_per_filter
    }

    pub fn block_capacity_weights(&self) -> usize {
        self.chunk_len() * self.filters
    }

    /// Slots a block can land in; 1 for the baseline.
    pub fn slots(&self) -> usize {
        match self.kind {
            AcceleratorKind::Baseline => 1,
            AcceleratorKind::TpuLike => self.fifo_tiles,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockDesc {
    pub layer: usize,
    pub filter_set: usize,
    pub chunk: usize,
    pub first_filter: usize,
    /// Real filters in the set (the remainder up to `f` is padding).
    pub filters: usize,
    /// Element range within each filter, end exclusive.
    pub elem_start: usize,
    pub elem_end: usize,
}

impl BlockDesc {
    pub fn weights(&self) -> usize {
        self.filters * (self.elem_end - self.elem_start)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockPlan {
    pub config: AcceleratorConfig,
    pub layers: Vec<LayerSpec>,
    pub blocks: Vec<BlockDesc>,
}

impl BlockPlan {
    /// Blocks written per inference.
    pub fn k_inf(&self) -> usize {
        self.blocks.len()
    }

    pub fn weight_slots(&self) -> usize {
        self.blocks.len() * self.config.block_capacity_weights()
    }

    pub fn padding_fraction(&self) -> f64 {
        let real: usize = self.blocks.iter().map(BlockDesc::weights).sum();
        1.0 - real as f64 / self.weight_slots() as f64
    }

    /// Flat index into the layer tensor for slot `(row, filter, k)` of block
    /// `b`, or `None` for padding.
    pub fn source_index(&self, b: &BlockDesc, row: usize, filter: usize, k: usize) -> Option<usize> {
        if filter >= b.filters {
            return None;
        }
        let e = b.elem_start + row * self.config.weights_per_filter + k;
        if e >= b.elem_end {
            return None;
        }
        Some((b.first_filter + filter) * self.layers[b.layer].filter_len() + e)
    }

    /// Materializes every block's rows.
    pub fn render(&self, words: &WeightWords) -> Result<Blocks> {
        if words.layers.len() != self.layers.len() {
            return Err(Error::invalid("word arrays do not match the planned layers"));
        }
        if words.bits_per_weight != self.config.bits_per_weight {
            return Err(Error::invalid("word width does not match the accelerator config"));
        }
        let cfg = &self.config;
        let bpw = cfg.bits_per_weight as usize;
        let limbs = cfg.geometry.limbs_per_row();
        let block_rows = cfg.block_rows();
        let mut data = vec![0u64; self.blocks.len() * block_rows * limbs];
        for (bi, b) in self.blocks.iter().enumerate() {
            let tensor = &words.layers[b.layer];
            let base = bi * block_rows * limbs;
            for row in 0..block_rows {
                let out = &mut data[base + row * limbs..base + (row + 1) * limbs];
                for j in 0..b.filters {
                    for k in 0..cfg.weights_per_filter {
                        if let Some(src) = self.source_index(b, row, j, k) {
                            let bit = (j * cfg.weights_per_filter + k) * bpw;
                            out[bit / 64] |= (tensor[src] as u64) << (bit % 64);
                        }
                    }
                }
            }
        }
        Ok(Blocks {
            rows_per_block: block_rows,
            word_bits: cfg.geometry.word_bits,
            limbs_per_row: limbs,
            data,
        })
    }
}

/// Partitions every layer into memory blocks in write order.
pub fn partition_blocks(layers: &[LayerSpec], words: &WeightWords, config: &AcceleratorConfig) -> Result<BlockPlan> {
    config.validate()?;
    if layers.len() != words.layers.len() {
        return Err(Error::invalid("layer list and word arrays differ in length"));
    }
    let f = config.filters;
    let chunk = config.chunk_len();
    let mut blocks = Vec::new();
    for (li, layer) in layers.iter().enumerate() {
        if layer.filters() == 0 {
            return Err(Error::invalid(format!("layer {li} has no filters")));
        }
        if words.layers[li].len() != layer.element_count() {
            return Err(Error::ShapeMismatch {
                layer: li,
                expected: layer.element_count(),
                actual: words.layers[li].len(),
            });
        }
        let len = layer.filter_len();
        for set in 0..layer.filters().div_ceil(f) {
            let first = set * f;
            let filters = f.min(layer.filters() - first);
            for c in 0..len.div_ceil(chunk) {
                blocks.push(BlockDesc {
                    layer: li,
                    filter_set: set,
                    chunk: c,
                    first_filter: first,
                    filters,
                    elem_start: c * chunk,
                    elem_end: ((c + 1) * chunk).min(len),
                });
            }
        }
    }
    Ok(BlockPlan {
        config: *config,
        layers: layers.to_vec(),
        blocks,
    })
}

/// Rendered block contents, `rows_per_block` rows of `limbs_per_row` limbs
/// each, blocks back to back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Blocks {
    pub rows_per_block: usize,
    pub word_bits: usize,
    pub limbs_per_row: usize,
    pub data: Vec<u64>,
}

impl Blocks {
    pub fn len(&self) -> usize {
        self.data.len() / (self.rows_per_block * self.limbs_per_row)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, block: usize, row: usize) -> &[u64] {
        let start = (block * self.rows_per_block + row) * self.limbs_per_row;
        &self.data[start..start + self.limbs_per_row]
    }

    /// `count` blocks of independent bits, each '1' with probability `rho`.
    /// Stands in for a network whose bits are i.i.d.
    pub fn random(config: &AcceleratorConfig, count: usize, rho: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::invalid(format!("rho must lie in [0,1], got {rho}")));
        }
        if count == 0 {
            return Err(Error::invalid("need at least one block"));
        }
        let rows = config.block_rows();
        let word_bits = config.geometry.word_bits;
        let limbs = config.geometry.limbs_per_row();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = vec![0u64; count * rows * limbs];
        for r in 0..count * rows {
            for bit in 0..word_bits {
                if rng.random::<f64>() < rho {
                    data[r * limbs + bit / 64] |= 1 << (bit % 64);
                }
            }
        }
        Ok(Blocks {
            rows_per_block: rows,
            word_bits,
            limbs_per_row: limbs,
            data,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteEvent<'a> {
    /// Position of this write in the whole stream.
    pub seq: u64,
    /// Stream index of the block this write belongs to.
    pub block: u64,
    pub row: usize,
    pub word: &'a [u64],
    pub dwell_units: u32,
}

/// The ordered writes of `inferences` repetitions of the block sequence.
#[derive(Debug, Clone)]
pub struct WriteStream<'a> {
    pub blocks: &'a Blocks,
    pub config: AcceleratorConfig,
    pub inferences: u32,
    /// Dwell per block of one inference; uniform unless overridden.
    pub dwell: Vec<u32>,
}

pub fn build_write_stream<'a>(blocks: &'a Blocks, config: &AcceleratorConfig, inferences: u32) -> Result<WriteStream<'a>> {
    if inferences < 1 {
        return Err(Error::invalid("at least one inference is required"));
    }
    if blocks.is_empty() {
        return Err(Error::Empty("block list"));
    }
    if blocks.rows_per_block != config.block_rows() || blocks.word_bits != config.geometry.word_bits {
        return Err(Error::invalid("blocks were rendered for a different geometry"));
    }
    Ok(WriteStream {
        blocks,
        config: *config,
        inferences,
        dwell: vec![1; blocks.len()],
    })
}

impl<'a> WriteStream<'a> {
    /// Replaces the uniform dwell with a per-block one.
    pub fn with_block_dwell(mut self, dwell: Vec<u32>) -> Result<Self> {
        if dwell.len() != self.blocks.len() || dwell.iter().any(|&d| d == 0) {
            return Err(Error::invalid("need one positive dwell value per block"));
        }
        self.dwell = dwell;
        Ok(self)
    }

    pub fn k_inf(&self) -> usize {
        self.blocks.len()
    }

    pub fn total_blocks(&self) -> u64 {
        self.k_inf() as u64 * self.inferences as u64
    }

    /// First memory row covered by stream block `t`.
    pub fn base_row(&self, t: u64) -> usize {
        (t % self.config.slots() as u64) as usize * self.config.block_rows()
    }

    /// Visits blocks in stream order as `(stream index, block index in the
    /// inference, first memory row)`.
    pub fn for_each_block(&self, mut f: impl FnMut(u64, usize, usize)) {
        let k = self.k_inf();
        for t in 0..self.total_blocks() {
            f(t, (t % k as u64) as usize, self.base_row(t));
        }
    }

    pub fn for_each(&self, mut f: impl FnMut(WriteEvent<'_>)) {
        let rows = self.config.block_rows();
        self.for_each_block(|t, bi, base| {
            for r in 0..rows {
                f(WriteEvent {
                    seq: t * rows as u64 + r as u64,
                    block: t,
                    row: base + r,
                    word: self.blocks.row(bi, r),
                    dwell_units: self.dwell[bi],
                });
            }
        });
    }

    /// Total dwell each memory row receives over the whole stream.
    pub fn dwell_per_row(&self) -> Vec<u64> {
        let mut per_row = vec![0u64; self.config.geometry.rows];
        let rows = self.config.block_rows();
        self.for_each_block(|_, bi, base| {
            for d in &mut per_row[base..base + rows] {
                *d += self.dwell[bi] as u64;
            }
        });
        per_row
    }

    /// Number of inferences after which stream placement repeats.
    pub fn placement_period(&self) -> u64 {
        let slots = self.config.slots() as u64;
        slots / gcd(self.k_inf() as u64 % slots, slots).max(1)
    }
}

pub(crate) fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::LayerSpec;

    fn words_for(layers: &[LayerSpec], bpw: u32) -> WeightWords {
        // Distinct nonzero payloads so coverage can be checked by value.
        let mut next = 0u32;
        let layers = layers
            .iter()
            .map(|l| {
                (0..l.element_count())
                    .map(|_| {
                        next += 1;
                        next
                    })
                    .collect()
            })
            .collect();
        WeightWords { bits_per_weight: bpw, layers }
    }

    #[test]
    fn geometry_arithmetic() {
        let g = MemoryGeometry::new(512 * 1024 * 8, 512).unwrap();
        assert_eq!(g.rows, 8192);
        assert_eq!(g.cells(), 4_194_304);
        assert!(MemoryGeometry::new(1000, 3).is_err());
    }

    #[test]
    fn fc_layer_two_sets_one_chunk_each() {
        // 2048-weight blocks at f = 8 give 256-weight chunks per filter.
        let layers = [LayerSpec::fc(10, 256)];
        let cfg = AcceleratorConfig::baseline(2048, 8, 8, 8).unwrap();
        assert_eq!(cfg.block_capacity_weights(), 2048);
        assert_eq!(cfg.chunk_len(), 256);
        let plan = partition_blocks(&layers, &words_for(&layers, 8), &cfg).unwrap();
        assert_eq!(plan.k_inf(), 2);
        assert_eq!(plan.blocks[0].filters, 8);
        assert_eq!(plan.blocks[1].filters, 2);
        assert_eq!((plan.blocks[1].elem_start, plan.blocks[1].elem_end), (0, 256));
    }

    #[test]
    fn small_conv_fits_one_block() {
        let layers = [LayerSpec::conv(16, 1, 5, 5)];
        // 512 weights of capacity, 32 per filter.
        let cfg = AcceleratorConfig::baseline(512, 16, 1, 8).unwrap();
        assert!(cfg.block_capacity_weights() >= 400);
        let plan = partition_blocks(&layers, &words_for(&layers, 8), &cfg).unwrap();
        assert_eq!(plan.k_inf(), 1);
    }

    #[test]
    fn custom_net_on_tpu_like() {
        let layers = crate::weights::custom_mnist_layers();
        let cfg = AcceleratorConfig::tpu_like(256, 4, 8).unwrap();
        assert_eq!(cfg.geometry.total_bits, 256 * 1024 * 8);
        let plan = partition_blocks(&layers, &words_for(&layers, 8), &cfg).unwrap();
        // 1 + ceil(400/256) + ceil(800/256) + 1
        assert_eq!(plan.k_inf(), 8);
    }

    #[test]
    fn render_places_weights_interleaved() {
        let layers = [LayerSpec::fc(3, 4)];
        let w = words_for(&layers, 8); // filter j element e = 4j + e + 1
        // 8-byte memory, word = 2 filters × 2 weights × 8 bits = 32 bits, 2 rows.
        let cfg = AcceleratorConfig::baseline(8, 2, 2, 8).unwrap();
        assert_eq!(cfg.geometry.rows, 2);
        let plan = partition_blocks(&layers, &w, &cfg).unwrap();
        assert_eq!(plan.k_inf(), 2);
        let blocks = plan.render(&w).unwrap();
        // Block 0, row 0: f0 e0, f0 e1, f1 e0, f1 e1.
        assert_eq!(blocks.row(0, 0)[0], 0x06_05_02_01);
        assert_eq!(blocks.row(0, 1)[0], 0x08_07_04_03);
        // Block 1 holds filter 2 only; filter slot 1 is padding.
        assert_eq!(blocks.row(1, 0)[0], 0x00_00_0A_09);
    }

    #[test]
    fn every_weight_appears_exactly_once() {
        let layers = vec![LayerSpec::conv(5, 3, 3, 3), LayerSpec::fc(7, 40), LayerSpec::conv(20, 2, 1, 1)];
        let w = words_for(&layers, 32);
        let cfg = AcceleratorConfig::baseline(8 * 4 * 4 * 4, 4, 2, 32).unwrap();
        let plan = partition_blocks(&layers, &w, &cfg).unwrap();
        let mut seen = vec![0u32; w.all().count()];
        for b in &plan.blocks {
            for row in 0..cfg.block_rows() {
                for j in 0..cfg.filters {
                    for k in 0..cfg.weights_per_filter {
                        if let Some(src) = plan.source_index(b, row, j, k) {
                            let v = w.layers[b.layer][src];
                            seen[v as usize - 1] += 1;
                        }
                    }
                }
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        let total: usize = plan.blocks.iter().map(BlockDesc::weights).sum();
        assert_eq!(total, w.all().count());
    }

    #[test]
    fn stream_rows_and_fifo_slots() {
        let cfg = AcceleratorConfig::tpu_like(2, 4, 8).unwrap();
        let blocks = Blocks::random(&cfg, 10, 0.5, 1).unwrap();
        let s = build_write_stream(&blocks, &cfg, 1).unwrap();
        let mut slot0 = Vec::new();
        s.for_each_block(|t, _, base| {
            if base == 0 {
                slot0.push(t)
            }
        });
        assert_eq!(slot0, vec![0, 4, 8]);
        assert!(build_write_stream(&blocks, &cfg, 0).is_err());
    }

    #[test]
    fn single_block_writes_every_row_once() {
        let cfg = AcceleratorConfig::baseline(64, 2, 2, 8).unwrap();
        let blocks = Blocks::random(&cfg, 1, 0.5, 1).unwrap();
        let s = build_write_stream(&blocks, &cfg, 1).unwrap();
        let mut rows = Vec::new();
        s.for_each(|e| rows.push(e.row));
        assert_eq!(rows, (0..cfg.geometry.rows).collect::<Vec<_>>());
    }

    #[test]
    fn placement_period() {
        let cfg = AcceleratorConfig::tpu_like(2, 4, 8).unwrap();
        for (k, p) in [(8, 1), (6, 2), (5, 4), (4, 1)] {
            let blocks = Blocks::random(&cfg, k, 0.5, 1).unwrap();
            let s = build_write_stream(&blocks, &cfg, 3).unwrap();
            assert_eq!(s.placement_period(), p, "K_inf = {k}");
        }
    }
}
