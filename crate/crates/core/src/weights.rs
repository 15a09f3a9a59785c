//! Network weights: loading, synthesis and conversion to bit-level words.
//!
//! Tensors are kept as flat `f32` arrays in canonical order: `(filter,
//! channel, row, col)` for convolution layers and `(out, in)` for fully
//! connected layers. Quantization parameters are fitted per layer.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LayerSpec {
    Conv {
        filters: usize,
        channels: usize,
        rows: usize,
        cols: usize,
    },
    Fc {
        outputs: usize,
        inputs: usize,
    },
}

impl LayerSpec {
    pub fn conv(filters: usize, channels: usize, rows: usize, cols: usize) -> Self {
        LayerSpec::Conv {
            filters,
            channels,
            rows,
            cols,
        }
    }

    pub fn fc(outputs: usize, inputs: usize) -> Self {
        LayerSpec::Fc { outputs, inputs }
    }

    /// Number of filters (output neurons for FC layers).
    pub fn filters(&self) -> usize {
        match *self {
            LayerSpec::Conv { filters, .. } => filters,
            LayerSpec::Fc { outputs, .. } => outputs,
        }
    }

    /// Weights per filter. An FC neuron is a filter with `ch·r·c = in`.
    pub fn filter_len(&self) -> usize {
        match *self {
            LayerSpec::Conv {
                channels,
                rows,
                cols,
                ..
            } => channels * rows * cols,
            LayerSpec::Fc { inputs, .. } => inputs,
        }
    }

    pub fn element_count(&self) -> usize {
        self.filters() * self.filter_len()
    }

    fn dims(&self) -> Vec<usize> {
        match *self {
            LayerSpec::Conv {
                filters,
                channels,
                rows,
                cols,
            } => vec![filters, channels, rows, cols],
            LayerSpec::Fc { outputs, inputs } => vec![outputs, inputs],
        }
    }

    fn from_parts(kind: &str, dims: &[usize]) -> Result<Self> {
        let spec = match (kind.to_ascii_lowercase().as_str(), dims) {
            ("conv", &[f, ch, r, c]) => LayerSpec::conv(f, ch, r, c),
            ("fc", &[out, inp]) => LayerSpec::fc(out, inp),
            ("conv", _) | ("fc", _) => {
                return Err(Error::invalid(format!(
                    "{kind} layer takes {} dimensions, got {}",
                    if kind.eq_ignore_ascii_case("conv") { 4 } else { 2 },
                    dims.len()
                )))
            }
            _ => return Err(Error::UnknownLayerKind(kind.to_string())),
        };
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("layer {spec} has a zero dimension")));
        }
        Ok(spec)
    }

    fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "CONV",
            LayerSpec::Fc { .. } => "FC",
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dims: Vec<String> = self.dims().iter().map(|d| d.to_string()).collect();
        write!(f, "{}({})", self.kind_name(), dims.join(","))
    }
}

/// Parses `CONV(f,ch,r,c)` or `FC(out,in)`, case-insensitive.
impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let open = s
            .find('(')
            .ok_or_else(|| Error::invalid(format!("layer `{s}`: expected KIND(dims)")))?;
        let inner = s[open + 1..]
            .strip_suffix(')')
            .ok_or_else(|| Error::invalid(format!("layer `{s}`: missing `)`")))?;
        let dims = inner
            .split(',')
            .map(|d| {
                d.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::invalid(format!("layer `{s}`: bad dimension `{d}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        LayerSpec::from_parts(s[..open].trim(), &dims)
    }
}

impl TryFrom<String> for LayerSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LayerSpec> for String {
    fn from(l: LayerSpec) -> String {
        l.to_string()
    }
}

/// Parses a comma-separated layer list such as `CONV(16,1,5,5),FC(10,256)`.
pub fn parse_layer_list(s: &str) -> Result<Vec<LayerSpec>> {
    let mut layers = Vec::new();
    let mut depth = 0usize;
    let mut start = 0;
    for (i, ch) in s.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => {
                layers.push(s[start..i].parse()?);
                start = i + 1;
            }
            _ => {}
        }
    }
    if !s[start..].trim().is_empty() {
        layers.push(s[start..].parse()?);
    }
    if layers.is_empty() {
        return Err(Error::Empty("layer list"));
    }
    Ok(layers)
}

/// The small MNIST network: two CONV and two FC layers, 227,760 weights.
pub fn custom_mnist_layers() -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv(16, 1, 5, 5),
        LayerSpec::conv(50, 16, 5, 5),
        LayerSpec::fc(256, 800),
        LayerSpec::fc(10, 256),
    ]
}

/// AlexNet layer shapes (single-tower variant), for opt-in large runs on
/// synthesized weights.
pub fn alexnet_layers() -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv(64, 3, 11, 11),
        LayerSpec::conv(192, 64, 5, 5),
        LayerSpec::conv(384, 192, 3, 3),
        LayerSpec::conv(256, 384, 3, 3),
        LayerSpec::conv(256, 256, 3, 3),
        LayerSpec::fc(4096, 9216),
        LayerSpec::fc(4096, 4096),
        LayerSpec::fc(1000, 4096),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    pub tensors: Vec<Vec<f32>>,
}

impl NetworkSpec {
    pub fn new(name: impl Into<String>, layers: Vec<LayerSpec>, tensors: Vec<Vec<f32>>) -> Result<Self> {
        if layers.len() != tensors.len() {
            return Err(Error::invalid(format!(
                "{} layers but {} tensors",
                layers.len(),
                tensors.len()
            )));
        }
        for (i, (l, t)) in layers.iter().zip(&tensors).enumerate() {
            if l.element_count() != t.len() {
                return Err(Error::ShapeMismatch {
                    layer: i,
                    expected: l.element_count() * 4,
                    actual: t.len() * 4,
                });
            }
        }
        Ok(NetworkSpec {
            name: name.into(),
            layers,
            tensors,
        })
    }

    pub fn weight_count(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    name: String,
    layers: Vec<ManifestLayer>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestLayer {
    kind: String,
    shape: Vec<usize>,
    tensor: PathBuf,
}

/// Loads a network from a JSON manifest. Tensor paths are resolved relative
/// to the manifest's directory; tensor files are raw little-endian binary32.
pub fn load_network(manifest_path: impl AsRef<Path>) -> Result<NetworkSpec> {
    let path = manifest_path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    let mut layers = Vec::with_capacity(manifest.layers.len());
    let mut tensors = Vec::with_capacity(manifest.layers.len());
    for (i, ml) in manifest.layers.iter().enumerate() {
        let spec = LayerSpec::from_parts(&ml.kind, &ml.shape)?;
        let tpath = base.join(&ml.tensor);
        let bytes = fs::read(&tpath).map_err(|e| Error::io(&tpath, e))?;
        let expected = spec.element_count() * 4;
        if bytes.len() != expected {
            return Err(Error::ShapeMismatch {
                layer: i,
                expected,
                actual: bytes.len(),
            });
        }
        let tensor = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        layers.push(spec);
        tensors.push(tensor);
    }
    NetworkSpec::new(manifest.name, layers, tensors)
}

/// Writes `net` as `<dir>/manifest.json` plus one `layerN.bin` per layer and
/// returns the manifest path.
pub fn save_network(net: &NetworkSpec, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut layers = Vec::new();
    for (i, (spec, tensor)) in net.layers.iter().zip(&net.tensors).enumerate() {
        let file = PathBuf::from(format!("layer{i}.bin"));
        let bytes: Vec<u8> = tensor.iter().flat_map(|w| w.to_le_bytes()).collect();
        let tpath = dir.join(&file);
        fs::write(&tpath, bytes).map_err(|e| Error::io(&tpath, e))?;
        layers.push(ManifestLayer {
            kind: spec.kind_name().to_ascii_lowercase(),
            shape: spec.dims(),
            tensor: file,
        });
    }
    let manifest = Manifest {
        name: net.name.clone(),
        layers,
    };
    let mpath = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
    Ok(mpath)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WeightDistribution {
    Gaussian { mean: f64, std: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl WeightDistribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            WeightDistribution::Gaussian { mean, std } => {
                if !(std > 0.0 && std.is_finite() && mean.is_finite()) {
                    return Err(Error::invalid(format!("gaussian std must be > 0, got {std}")));
                }
            }
            WeightDistribution::Uniform { lo, hi } => {
                if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                    return Err(Error::invalid(format!("uniform needs lo < hi, got [{lo}, {hi}]")));
                }
            }
        }
        Ok(())
    }
}

/// Fills every layer from `dist` using a ChaCha8 stream seeded with `seed`.
pub fn synthesize_network(
    name: impl Into<String>,
    layers: &[LayerSpec],
    dist: WeightDistribution,
    seed: u64,
) -> Result<NetworkSpec> {
    dist.validate()?;
    if layers.is_empty() {
        return Err(Error::Empty("layer list"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = match dist {
        WeightDistribution::Gaussian { mean, std } => {
            let d = Normal::new(mean, std).map_err(|e| Error::invalid(e.to_string()))?;
            layers
                .iter()
                .map(|l| (0..l.element_count()).map(|_| d.sample(&mut rng) as f32).collect())
                .collect()
        }
        WeightDistribution::Uniform { lo, hi } => {
            let d = Uniform::new(lo, hi).map_err(|e| Error::invalid(e.to_string()))?;
            layers
                .iter()
                .map(|l| (0..l.element_count()).map(|_| d.sample(&mut rng) as f32).collect())
                .collect()
        }
    };
    NetworkSpec::new(name, layers.to_vec(), tensors)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QuantFormat {
    #[serde(rename = "float32")]
    Float32,
    #[serde(rename = "int8-sym")]
    Int8Sym,
    #[serde(rename = "int8-asym")]
    Int8Asym,
}

impl QuantFormat {
    pub const ALL: [QuantFormat; 3] = [QuantFormat::Float32, QuantFormat::Int8Sym, QuantFormat::Int8Asym];

    pub fn bits_per_weight(self) -> u32 {
        match self {
            QuantFormat::Float32 => 32,
            QuantFormat::Int8Sym | QuantFormat::Int8Asym => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            QuantFormat::Float32 => "float32",
            QuantFormat::Int8Sym => "int8-sym",
            QuantFormat::Int8Asym => "int8-asym",
        }
    }
}

impl fmt::Display for QuantFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QuantFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "float32" | "fp32" => Ok(QuantFormat::Float32),
            "int8-sym" | "int8-symmetric" => Ok(QuantFormat::Int8Sym),
            "int8-asym" | "int8-asymmetric" => Ok(QuantFormat::Int8Asym),
            _ => Err(Error::invalid(format!("unknown format `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerQuant {
    pub scale: f64,
    /// Always 0 for the symmetric format.
    pub zero_point: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantScheme {
    pub format: QuantFormat,
    /// One entry per layer; empty for FLOAT32.
    pub layers: Vec<LayerQuant>,
}

impl QuantScheme {
    pub fn bits_per_weight(&self) -> u32 {
        self.format.bits_per_weight()
    }
}

pub fn fit_quantization(net: &NetworkSpec, format: QuantFormat) -> Result<QuantScheme> {
    if net.tensors.iter().any(Vec::is_empty) || net.tensors.is_empty() {
        return Err(Error::Empty("layer without weights"));
    }
    let layers = match format {
        QuantFormat::Float32 => Vec::new(),
        QuantFormat::Int8Sym => net
            .tensors
            .iter()
            .map(|t| {
                let max_abs = t.iter().fold(0.0f64, |m, &w| m.max((w as f64).abs()));
                let scale = if max_abs == 0.0 { 1.0 } else { max_abs / 127.0 };
                LayerQuant { scale, zero_point: 0 }
            })
            .collect(),
        QuantFormat::Int8Asym => net
            .tensors
            .iter()
            .map(|t| {
                let (lo, hi) = t.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &w| {
                    (lo.min(w as f64), hi.max(w as f64))
                });
                let scale = if hi == lo { 1.0 } else { (hi - lo) / 255.0 };
                let zero_point = (-lo / scale).round().clamp(0.0, 255.0) as i32;
                LayerQuant { scale, zero_point }
            })
            .collect(),
    };
    Ok(QuantScheme { format, layers })
}

/// Bit-level words for every layer, one `u32` per weight. Only the low
/// `bits_per_weight` bits are meaningful.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightWords {
    pub bits_per_weight: u32,
    pub layers: Vec<Vec<u32>>,
}

impl WeightWords {
    pub fn all(&self) -> impl Iterator<Item = u32> + '_ {
        self.layers.iter().flatten().copied()
    }
}

pub fn quantize_value(w: f32, format: QuantFormat, q: Option<&LayerQuant>) -> u32 {
    match (format, q) {
        (QuantFormat::Float32, _) => w.to_bits(),
        (QuantFormat::Int8Sym, Some(q)) => {
            let v = (w as f64 / q.scale).round().clamp(-127.0, 127.0) as i8;
            v as u8 as u32
        }
        (QuantFormat::Int8Asym, Some(q)) => {
            ((w as f64 / q.scale).round() + q.zero_point as f64).clamp(0.0, 255.0) as u32
        }
        _ => unreachable!("integer formats always carry layer parameters"),
    }
}

/// Maps a stored word back to a real value.
pub fn dequantize_value(word: u32, format: QuantFormat, q: Option<&LayerQuant>) -> f64 {
    match (format, q) {
        (QuantFormat::Float32, _) => f32::from_bits(word) as f64,
        (QuantFormat::Int8Sym, Some(q)) => (word as u8 as i8) as f64 * q.scale,
        (QuantFormat::Int8Asym, Some(q)) => (word as f64 - q.zero_point as f64) * q.scale,
        _ => unreachable!("integer formats always carry layer parameters"),
    }
}

pub fn quantize_to_words(net: &NetworkSpec, scheme: &QuantScheme) -> Result<WeightWords> {
    if scheme.format != QuantFormat::Float32 && scheme.layers.len() != net.layers.len() {
        return Err(Error::invalid(format!(
            "scheme fitted for {} layers, network has {}",
            scheme.layers.len(),
            net.layers.len()
        )));
    }
    let layers = net
        .tensors
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let q = scheme.layers.get(i);
            t.iter().map(|&w| quantize_value(w, scheme.format, q)).collect()
        })
        .collect();
    Ok(WeightWords {
        bits_per_weight: scheme.bits_per_weight(),
        layers,
    })
}
