//! End-to-end runs: network, quantization, dataflow, encoding and aging.
//!
//! A run is described by a TOML file:
//!
//! ```toml
//! name = "mnist-tpu-trbg"
//! format = "int8-sym"          # float32 | int8-sym | int8-asym
//! inferences = 100
//! seed = 1
//! policy = "trbg"              # none | inversion | barrel | trbg
//! trbg.bias = 0.5
//! trbg.m = 4
//! trbg.balancing = true
//! barrel.max_shift = 7
//! output_dir = "out/mnist-tpu-trbg"
//!
//! [network]
//! source = "builtin"           # builtin | manifest | layers | random-bits
//! name = "custom-mnist"
//!
//! [accelerator]
//! kind = "tpu-like"            # baseline | tpu-like
//! filters = 256
//! fifo_tiles = 4
//!
//! [snm]
//! bins = 32
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aging::{accumulate, histogram, snm_of, DutyCycleMap, DutySummary, SnmHistogram, SnmModel, DEFAULT_BINS};
use crate::dataflow::{build_write_stream, partition_blocks, AcceleratorConfig, AcceleratorKind, BlockPlan, Blocks};
use crate::encoders::{BalanceClock, EncodingPolicy, TrbgParams};
use crate::error::{Error, Result};
use crate::probmodel::p_duty_deviation;
use crate::weights::{
    alexnet_layers, custom_mnist_layers, fit_quantization, load_network, parse_layer_list, quantize_to_words,
    synthesize_network, NetworkSpec, QuantFormat, WeightDistribution,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Weights used when a network is synthesized and no distribution is given.
pub const DEFAULT_DISTRIBUTION: WeightDistribution = WeightDistribution::Gaussian { mean: 0.0, std: 0.05 };

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NetworkRef {
    /// `custom-mnist` or `alexnet`, filled with synthesized weights.
    Builtin {
        name: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        distribution: Option<WeightDistribution>,
    },
    Manifest { path: PathBuf },
    /// Layer list such as `"CONV(16,1,5,5), FC(10,256)"`, synthesized.
    Layers {
        layers: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        distribution: Option<WeightDistribution>,
    },
    /// `blocks` blocks of i.i.d. bits, each '1' with probability `rho`.
    RandomBits { rho: f64, blocks: usize },
}

impl NetworkRef {
    pub fn label(&self) -> String {
        match self {
            NetworkRef::Builtin { name, .. } => name.clone(),
            NetworkRef::Manifest { path } => path.display().to_string(),
            NetworkRef::Layers { name, layers, .. } => name.clone().unwrap_or_else(|| layers.clone()),
            NetworkRef::RandomBits { rho, .. } => format!("random-bits(rho={rho})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceleratorSection {
    pub kind: AcceleratorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filters: Option<usize>,
    /// Baseline only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_per_filter: Option<usize>,
    /// Baseline only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_bytes: Option<u64>,
    /// TPU-like only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fifo_tiles: Option<usize>,
}

impl AcceleratorSection {
    pub fn baseline_512kb() -> Self {
        AcceleratorSection {
            kind: AcceleratorKind::Baseline,
            filters: Some(8),
            weights_per_filter: Some(8),
            memory_bytes: Some(512 * 1024),
            fifo_tiles: None,
        }
    }

    /// TPU-like FIFO of four 128×128 tiles: 64 KB at 8 bits per weight.
    pub fn desk_64kb() -> Self {
        Self::tpu_like(128, 4)
    }

    pub fn tpu_like(filters: usize, fifo_tiles: usize) -> Self {
        AcceleratorSection {
            kind: AcceleratorKind::TpuLike,
            filters: Some(filters),
            weights_per_filter: None,
            memory_bytes: None,
            fifo_tiles: Some(fifo_tiles),
        }
    }

    pub fn resolve(&self, bits_per_weight: u32) -> Result<AcceleratorConfig> {
        match self.kind {
            AcceleratorKind::Baseline => {
                if self.fifo_tiles.is_some() {
                    return Err(Error::Config("fifo_tiles applies only to the tpu-like accelerator".into()));
                }
                AcceleratorConfig::baseline(
                    self.memory_bytes.unwrap_or(512 * 1024),
                    self.filters.unwrap_or(8),
                    self.weights_per_filter.unwrap_or(8),
                    bits_per_weight,
                )
            }
            AcceleratorKind::TpuLike => {
                if self.memory_bytes.is_some() || self.weights_per_filter.is_some() {
                    return Err(Error::Config(
                        "the tpu-like memory is sized by filters and fifo_tiles alone".into(),
                    ));
                }
                AcceleratorConfig::tpu_like(self.filters.unwrap_or(256), self.fifo_tiles.unwrap_or(4), bits_per_weight)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    #[default]
    None,
    Inversion,
    Barrel,
    Trbg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrbgSection {
    #[serde(default = "default_bias")]
    pub bias: f64,
    #[serde(default = "default_m")]
    pub m: u32,
    #[serde(default = "default_true")]
    pub balancing: bool,
    #[serde(default)]
    pub clock: BalanceClock,
    /// Overrides the generator seed derived from the run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_bias() -> f64 {
    0.5
}
fn default_m() -> u32 {
    4
}
fn default_true() -> bool {
    true
}

impl Default for TrbgSection {
    fn default() -> Self {
        TrbgSection {
            bias: default_bias(),
            m: default_m(),
            balancing: true,
            clock: BalanceClock::default(),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrelSection {
    #[serde(default = "default_max_shift")]
    pub max_shift: u32,
}

fn default_max_shift() -> u32 {
    7
}

impl Default for BarrelSection {
    fn default() -> Self {
        BarrelSection { max_shift: default_max_shift() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnmSection {
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// CSV of `duty_cycle,degradation_pct` replacing the linear curve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
}

fn default_bins() -> usize {
    DEFAULT_BINS
}

impl Default for SnmSection {
    fn default() -> Self {
        SnmSection { bins: DEFAULT_BINS, table: None }
    }
}

fn default_inferences() -> u32 {
    100
}

fn default_format() -> QuantFormat {
    QuantFormat::Int8Sym
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub network: NetworkRef,
    #[serde(default = "default_format")]
    pub format: QuantFormat,
    pub accelerator: AcceleratorSection,
    #[serde(default = "default_inferences")]
    pub inferences: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub policy: PolicyKind,
    #[serde(default)]
    pub trbg: TrbgSection,
    #[serde(default)]
    pub barrel: BarrelSection,
    #[serde(default)]
    pub snm: SnmSection,
    /// Dwell units of every block of each layer, one entry per layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_dwell: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn new(network: NetworkRef, format: QuantFormat, accelerator: AcceleratorSection, policy: PolicyKind) -> Self {
        RunConfig {
            name: None,
            network,
            format,
            accelerator,
            inferences: default_inferences(),
            seed: 0,
            policy,
            trbg: TrbgSection::default(),
            barrel: BarrelSection::default(),
            snm: SnmSection::default(),
            layer_dwell: None,
            output_dir: None,
            base_dir: PathBuf::new(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn resolve_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_path(&self) -> Option<PathBuf> {
        self.output_dir.as_deref().map(|p| self.resolve_path(p))
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            format!("{}/{}/{}", self.network.label(), self.format, self.policy().map_or_else(|_| "?".into(), |p| p.label()))
        })
    }

    pub fn policy(&self) -> Result<EncodingPolicy> {
        Ok(match self.policy {
            PolicyKind::None => EncodingPolicy::None,
            PolicyKind::Inversion => EncodingPolicy::Inversion,
            PolicyKind::Barrel => EncodingPolicy::Barrel { max_shift: self.barrel.max_shift },
            PolicyKind::Trbg => EncodingPolicy::Trbg(TrbgParams {
                bias: self.trbg.bias,
                m: self.trbg.m,
                balancing: self.trbg.balancing,
                seed: self.trbg.seed.unwrap_or_else(|| derive_seed(self.seed, STREAM_TRBG)),
                clock: self.trbg.clock,
            }),
        })
    }

    pub fn validate(&self) -> Result<AcceleratorConfig> {
        if self.inferences < 1 {
            return Err(Error::invalid("inferences must be at least 1"));
        }
        if self.snm.bins == 0 {
            return Err(Error::invalid("snm.bins must be at least 1"));
        }
        let acc = self.accelerator.resolve(self.format.bits_per_weight())?;
        self.policy()?.validate(acc.geometry.word_bits)?;
        if let NetworkRef::RandomBits { rho, blocks } = self.network {
            if !(0.0..=1.0).contains(&rho) || blocks == 0 {
                return Err(Error::invalid("random-bits needs rho in [0,1] and at least one block"));
            }
            if self.layer_dwell.is_some() {
                return Err(Error::Config("layer_dwell needs a layered network".into()));
            }
        }
        Ok(acc)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("run config serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn load_network(&self) -> Result<Option<NetworkSpec>> {
        let seed = derive_seed(self.seed, STREAM_WEIGHTS);
        Ok(Some(match &self.network {
            NetworkRef::Builtin { name, distribution } => {
                let layers = match name.to_ascii_lowercase().as_str() {
                    "custom-mnist" | "mnist" => custom_mnist_layers(),
                    "alexnet" => alexnet_layers(),
                    _ => return Err(Error::Config(format!("unknown builtin network `{name}`"))),
                };
                synthesize_network(name.clone(), &layers, distribution.unwrap_or(DEFAULT_DISTRIBUTION), seed)?
            }
            NetworkRef::Manifest { path } => load_network(self.resolve_path(path))?,
            NetworkRef::Layers { layers, name, distribution } => synthesize_network(
                name.clone().unwrap_or_else(|| "layers".into()),
                &parse_layer_list(layers)?,
                distribution.unwrap_or(DEFAULT_DISTRIBUTION),
                seed,
            )?,
            NetworkRef::RandomBits { .. } => return Ok(None),
        }))
    }

    pub fn snm_model(&self) -> Result<SnmModel> {
        match &self.snm.table {
            Some(p) => SnmModel::load_table_csv(self.resolve_path(p)),
            None => Ok(SnmModel::default()),
        }
    }
}

const STREAM_WEIGHTS: u64 = 1;
const STREAM_TRBG: u64 = 2;
const STREAM_BITS: u64 = 3;

/// Independent sub-seeds from one run seed (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunResult {
    pub tool_version: String,
    pub label: String,
    pub config_hash: String,
    pub seed: u64,
    pub network: String,
    pub format: Option<QuantFormat>,
    pub policy: String,
    pub k_inf: usize,
    pub inferences: u32,
    pub total_blocks: u64,
    /// Largest per-cell total dwell (`K`).
    pub total_k: u64,
    /// Smallest per-cell total dwell; equals `total_k` unless the FIFO was
    /// left partially filled.
    pub min_k: u64,
    pub rows: usize,
    pub word_bits: usize,
    pub cells: u64,
    pub padding_fraction: f64,
    /// Fraction of '1' bits in the unencoded blocks, padding included.
    pub source_rho: f64,
    pub summary: DutySummary,
    pub histogram: SnmHistogram,
    pub config: Option<RunConfig>,
    #[serde(skip)]
    pub wall_time: Duration,
    #[serde(skip)]
    pub duty_map: DutyCycleMap,
}

/// Equality ignores `wall_time`.
impl PartialEq for RunResult {
    fn eq(&self, other: &Self) -> bool {
        self.duty_map == other.duty_map
            && serde_json::to_value(self).ok() == serde_json::to_value(other).ok()
    }
}

fn source_blocks(cfg: &RunConfig, acc: &AcceleratorConfig) -> Result<(Blocks, f64, Vec<u32>, String)> {
    match cfg.load_network()? {
        None => {
            let NetworkRef::RandomBits { rho, blocks } = cfg.network else { unreachable!() };
            let b = Blocks::random(acc, blocks, rho, derive_seed(cfg.seed, STREAM_BITS))?;
            let dwell = vec![1; b.len()];
            Ok((b, 0.0, dwell, cfg.network.label()))
        }
        Some(net) => {
            let scheme = fit_quantization(&net, cfg.format)?;
            let words = quantize_to_words(&net, &scheme)?;
            let plan = partition_blocks(&net.layers, &words, acc)?;
            let blocks = plan.render(&words)?;
            let dwell = match &cfg.layer_dwell {
                None => vec![1; blocks.len()],
                Some(per_layer) => {
                    if per_layer.len() != net.layers.len() {
                        return Err(Error::Config(format!(
                            "layer_dwell has {} entries for {} layers",
                            per_layer.len(),
                            net.layers.len()
                        )));
                    }
                    plan.blocks.iter().map(|b| per_layer[b.layer]).collect()
                }
            };
            Ok((blocks, plan.padding_fraction(), dwell, net.name))
        }
    }
}

/// The block partition of a layered network; `None` for the random-bits
/// source.
pub fn block_plan(cfg: &RunConfig) -> Result<Option<BlockPlan>> {
    let acc = cfg.validate()?;
    let Some(net) = cfg.load_network()? else { return Ok(None) };
    let words = quantize_to_words(&net, &fit_quantization(&net, cfg.format)?)?;
    Ok(Some(partition_blocks(&net.layers, &words, &acc)?))
}

pub fn run(cfg: &RunConfig) -> Result<RunResult> {
    let start = Instant::now();
    let acc = cfg.validate()?;
    let policy = cfg.policy()?;
    let model = cfg.snm_model()?;
    let (blocks, padding_fraction, dwell, network) = source_blocks(cfg, &acc)?;
    let stream = build_write_stream(&blocks, &acc, cfg.inferences)?.with_block_dwell(dwell)?;
    let map = accumulate(&stream, &policy, &acc.geometry)?;
    let degradation = snm_of(&map, &model)?;
    let (lo, hi) = model.range();
    let hist = histogram(&degradation, cfg.snm.bins, lo, hi)?;
    let ones: u64 = blocks.data.iter().map(|l| l.count_ones() as u64).sum();
    let source_rho = ones as f64 / (blocks.len() * blocks.rows_per_block * blocks.word_bits) as f64;
    Ok(RunResult {
        tool_version: TOOL_VERSION.to_string(),
        label: cfg.label(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        network,
        format: (!matches!(cfg.network, NetworkRef::RandomBits { .. })).then_some(cfg.format),
        policy: policy.label(),
        k_inf: stream.k_inf(),
        inferences: cfg.inferences,
        total_blocks: stream.total_blocks(),
        total_k: map.row_dwell.iter().copied().max().unwrap_or(0) as u64,
        min_k: map.row_dwell.iter().copied().min().unwrap_or(0) as u64,
        rows: map.rows,
        word_bits: map.word_bits,
        cells: map.cells() as u64,
        padding_fraction,
        source_rho,
        summary: map.summary(),
        histogram: hist,
        config: Some(cfg.clone()),
        wall_time: start.elapsed(),
        duty_map: map,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub kind: String,
    pub message: String,
}

impl From<&Error> for RunFailure {
    fn from(e: &Error) -> Self {
        RunFailure { kind: e.kind().to_string(), message: e.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixEntry {
    pub label: String,
    pub network: String,
    pub format: String,
    pub policy: String,
    pub result: std::result::Result<RunResult, RunFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub network: String,
    pub format: String,
    pub policy: String,
    pub mean_abs_dev: f64,
    pub pct_worst_bin: f64,
    pub pct_best_bin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub entries: Vec<MatrixEntry>,
}

impl MatrixReport {
    /// One row per successful run, in input order.
    pub fn rows(&self) -> Vec<MatrixRow> {
        self.entries
            .iter()
            .filter_map(|e| {
                let r = e.result.as_ref().ok()?;
                Some(MatrixRow {
                    network: e.network.clone(),
                    format: e.format.clone(),
                    policy: e.policy.clone(),
                    mean_abs_dev: r.summary.mean_abs_dev,
                    pct_worst_bin: r.histogram.worst_bin_pct(),
                    pct_best_bin: r.histogram.best_bin_pct(),
                })
            })
            .collect()
    }

    pub fn failures(&self) -> usize {
        self.entries.iter().filter(|e| e.result.is_err()).count()
    }
}

/// Runs every config in parallel; a failing run is recorded in its entry.
pub fn run_matrix(configs: &[RunConfig]) -> Result<MatrixReport> {
    if configs.is_empty() {
        return Err(Error::Empty("run config list"));
    }
    let entries = configs
        .par_iter()
        .map(|cfg| {
            let result = run(cfg).map_err(|e| RunFailure::from(&e));
            let policy = match &result {
                Ok(r) => r.policy.clone(),
                Err(_) => cfg.policy().map_or_else(|_| format!("{:?}", cfg.policy).to_lowercase(), |p| p.label()),
            };
            MatrixEntry {
                label: cfg.label(),
                network: result.as_ref().map_or_else(|_| cfg.network.label(), |r| r.network.clone()),
                format: cfg.format.to_string(),
                policy,
                result,
            }
        })
        .collect();
    Ok(MatrixReport { entries })
}

/// Every policy crossed with every format, all other settings from `base`.
pub fn policy_matrix(base: &RunConfig) -> Vec<RunConfig> {
    let mut out = Vec::new();
    for format in QuantFormat::ALL {
        for policy in [PolicyKind::None, PolicyKind::Inversion, PolicyKind::Barrel, PolicyKind::Trbg] {
            let mut c = base.clone();
            c.name = None;
            c.format = format;
            c.policy = policy;
            out.push(c);
        }
    }
    out
}

/// Reads every `*.toml` in `dir`, sorted by file name.
pub fn load_config_dir(dir: impl AsRef<Path>) -> Result<Vec<RunConfig>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    paths.iter().map(RunConfig::load).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationRow {
    pub b: u64,
    pub b_over_k: f64,
    pub predicted: f64,
    pub empirical: f64,
    /// Binomial standard deviation of the empirical fraction.
    pub sigma: f64,
    pub within_3sigma: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub k: u64,
    pub rho: f64,
    /// Cells whose total dwell equals `k`; the others are left out.
    pub cells: u64,
    pub rows: Vec<DeviationRow>,
    /// Reasons the comparison may not apply; empty when it does.
    pub notes: Vec<String>,
}

impl DeviationReport {
    pub fn all_within_3sigma(&self) -> bool {
        self.rows.iter().all(|r| r.within_3sigma)
    }

    pub fn row(&self, b: u64) -> Option<&DeviationRow> {
        self.rows.iter().find(|r| r.b == b)
    }
}

/// Empirical fraction of cells whose ones-count is `≤ b` or `≥ K − b`,
/// against the binomial prediction, for every `b ≤ K/2`.
pub fn compare_to_model(map: &DutyCycleMap, k: u64, rho: f64) -> Result<DeviationReport> {
    if k == 0 || k > u32::MAX as u64 {
        return Err(Error::invalid(format!("K must be in 1..=2^32-1, got {k}")));
    }
    p_duty_deviation(k, rho, 0)?;
    let mut counts = vec![0u64; k as usize / 2 + 1];
    let mut cells = 0u64;
    let mut skipped = 0u64;
    for (o, t) in map.pairs() {
        if t as u64 != k {
            skipped += 1;
            continue;
        }
        cells += 1;
        let dev = (o as u64).min(k - o as u64);
        counts[dev as usize] += 1;
    }
    let mut notes = Vec::new();
    if skipped > 0 {
        notes.push(format!("{skipped} cells have a total dwell other than K = {k} and were left out"));
    }
    if cells == 0 {
        notes.push("no cell matches K; nothing to compare".into());
    }
    let mut rows = Vec::with_capacity(counts.len());
    let mut cumulative = 0u64;
    for (b, &c) in counts.iter().enumerate() {
        cumulative += c;
        let b = b as u64;
        let predicted = p_duty_deviation(k, rho, b)?;
        let n = cells.max(1) as f64;
        let empirical = cumulative as f64 / n;
        let sigma = (predicted * (1.0 - predicted) / n).sqrt();
        let within_3sigma = cells > 0 && (empirical - predicted).abs() <= 3.0 * sigma + 1e-12;
        rows.push(DeviationRow { b, b_over_k: b as f64 / k as f64, predicted, empirical, sigma, within_3sigma });
    }
    Ok(DeviationReport { k, rho, cells, rows, notes })
}

/// [`compare_to_model`] on a run, noting when the run's words are not
/// i.i.d. bits or its policy changes the bit statistics.
pub fn compare_result(result: &RunResult, k: u64, rho: f64) -> Result<DeviationReport> {
    let mut report = compare_to_model(&result.duty_map, k, rho)?;
    if let Some(cfg) = &result.config {
        if !matches!(cfg.network, NetworkRef::RandomBits { .. }) {
            report.notes.push("words come from a network, not an i.i.d. bit source".into());
        }
        if matches!(cfg.policy, PolicyKind::Inversion | PolicyKind::Barrel) {
            report.notes.push(format!("policy {} is not covered by the binomial model", result.policy));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_cfg(rho: f64, blocks: usize, inferences: u32) -> RunConfig {
        let mut c = RunConfig::new(
            NetworkRef::RandomBits { rho, blocks },
            QuantFormat::Int8Sym,
            AcceleratorSection {
                kind: AcceleratorKind::Baseline,
                filters: Some(8),
                weights_per_filter: Some(8),
                memory_bytes: Some(1024),
                fifo_tiles: None,
            },
            PolicyKind::None,
        );
        c.inferences = inferences;
        c
    }

    #[test]
    fn toml_round_trip_with_dotted_keys() {
        let text = r#"
            format = "int8-asym"
            inferences = 3
            seed = 9
            policy = "trbg"
            trbg.bias = 0.7
            trbg.m = 2
            trbg.balancing = false
            barrel.max_shift = 5

            [network]
            source = "layers"
            layers = "FC(10,256)"

            [accelerator]
            kind = "baseline"
            memory_bytes = 2048
        "#;
        let cfg = RunConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.trbg.bias, 0.7);
        assert!(!cfg.trbg.balancing);
        assert_eq!(cfg.barrel.max_shift, 5);
        assert_eq!(cfg.format, QuantFormat::Int8Asym);
        let again = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.hash(), cfg.hash());
    }

    #[test]
    fn unknown_key_is_a_config_error() {
        let text = "polcy = \"none\"\n[network]\nsource = \"builtin\"\nname = \"custom-mnist\"\n[accelerator]\nkind = \"baseline\"\n";
        assert!(matches!(RunConfig::from_toml_str(text), Err(Error::Config(_))));
    }

    #[test]
    fn zero_inferences_rejected() {
        assert!(run(&random_cfg(0.5, 1, 0)).is_err());
    }

    #[test]
    fn fc_layer_on_small_baseline() {
        let mut c = random_cfg(0.5, 1, 5);
        c.network = NetworkRef::Layers { layers: "FC(10,256)".into(), name: None, distribution: None };
        c.accelerator.memory_bytes = Some(2048);
        c.accelerator.weights_per_filter = Some(1);
        let r = run(&c).unwrap();
        assert_eq!(r.k_inf, 2);
        assert_eq!(r.total_k, 10);
        let total: f64 = r.histogram.bins.iter().map(|b| b.pct).sum();
        assert!((total - 100.0).abs() < 1e-9);
    }

    #[test]
    fn run_is_deterministic() {
        let mut c = random_cfg(0.3, 2, 7);
        c.policy = PolicyKind::Trbg;
        let a = run(&c).unwrap();
        let b = run(&c).unwrap();
        assert_eq!(a.duty_map, b.duty_map);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn saturated_source_reports_all_deviating() {
        let r = run(&random_cfg(1.0, 4, 5)).unwrap();
        assert_eq!(r.summary.min, 1.0);
        let rep = compare_result(&r, 20, 1.0).unwrap();
        assert!(rep.rows.iter().all(|row| row.empirical == 1.0 && row.within_3sigma));
    }

    #[test]
    fn layer_dwell_needs_one_entry_per_layer() {
        let mut c = random_cfg(0.5, 1, 1);
        c.network = NetworkRef::Layers { layers: "FC(8,64),FC(8,64)".into(), name: None, distribution: None };
        c.layer_dwell = Some(vec![1]);
        assert!(matches!(run(&c), Err(Error::Config(_))));
        c.layer_dwell = Some(vec![1, 3]);
        let r = run(&c).unwrap();
        assert_eq!(r.total_k, 4);
    }

    #[test]
    fn matrix_records_failures_per_entry() {
        let good = random_cfg(0.5, 1, 2);
        let mut bad = good.clone();
        bad.policy = PolicyKind::Barrel;
        bad.barrel.max_shift = 10_000;
        let m = run_matrix(&[good.clone(), bad, good]).unwrap();
        assert_eq!(m.failures(), 1);
        assert_eq!(m.rows().len(), 2);
        assert_eq!(m.entries[0].result, m.entries[2].result);
        assert!(run_matrix(&[]).is_err());
    }

    #[test]
    fn policy_matrix_is_twelve_runs() {
        assert_eq!(policy_matrix(&random_cfg(0.5, 1, 1)).len(), 12);
    }

    #[test]
    fn sub_seeds_differ() {
        assert_ne!(derive_seed(0, STREAM_TRBG), derive_seed(0, STREAM_BITS));
        assert_eq!(derive_seed(5, 1), derive_seed(5, 1));
    }
}
