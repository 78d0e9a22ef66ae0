//! CNN architecture genomes.
//!
//! A [`Genome`] is an ordered stack of convolution, pooling and activation
//! layers sitting in front of a fixed classifier head (flatten + one dense
//! layer to `output_arity`). The head is implicit and never mutated.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::mutation::{self, MutationConfig};
use crate::repair;
use crate::rng::RandomSource;

/// Hard bound on kernel extent along either axis.
pub const KERNEL_LIMIT: u32 = 7;

/// Version tag written into every serialized genome.
pub const GENOME_FORMAT_VERSION: u32 = 1;

/// (height, width) pair.
pub type Pair = [u32; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 3]", into = "[u32; 3]")]
pub struct Shape {
    pub channels: u32,
    pub height: u32,
    pub width: u32,
}

impl Shape {
    pub const fn new(channels: u32, height: u32, width: u32) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    fn is_positive(&self) -> bool {
        self.channels > 0 && self.height > 0 && self.width > 0
    }
}

impl From<[u32; 3]> for Shape {
    fn from([c, h, w]: [u32; 3]) -> Self {
        Self::new(c, h, w)
    }
}

impl From<Shape> for [u32; 3] {
    fn from(s: Shape) -> Self {
        [s.channels, s.height, s.width]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv,
    MaxPool,
    AvgPool,
    Activation,
}

impl LayerKind {
    pub fn is_pool(self) -> bool {
        matches!(self, LayerKind::MaxPool | LayerKind::AvgPool)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::MaxPool => "maxpool",
            LayerKind::AvgPool => "avgpool",
            LayerKind::Activation => "relu",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActivationKind {
    Relu,
}

/// Sliding-window geometry shared by convolution and pooling layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Window {
    pub kernel: Pair,
    pub stride: Pair,
    pub padding: Pair,
}

impl Window {
    pub fn new(kernel: Pair, stride: Pair, padding: Pair) -> Self {
        Self {
            kernel,
            stride,
            padding,
        }
    }

    fn check(&self) -> Result<(), String> {
        for axis in 0..2 {
            let k = self.kernel[axis];
            if !(1..=KERNEL_LIMIT).contains(&k) {
                return Err(format!("kernel {k} outside [1, {KERNEL_LIMIT}]"));
            }
            if self.stride[axis] == 0 {
                return Err("stride must be at least 1".into());
            }
            if self.padding[axis] > k - 1 {
                return Err(format!("padding {} exceeds kernel - 1 = {}", self.padding[axis], k - 1));
            }
        }
        Ok(())
    }

    /// Output extent along one axis, `None` when the window does not fit.
    pub fn output_extent(&self, input: u32, axis: usize) -> Option<u32> {
        let padded = i64::from(input) + 2 * i64::from(self.padding[axis]);
        let span = padded - i64::from(self.kernel[axis]);
        if span < 0 {
            return None;
        }
        Some((span / i64::from(self.stride[axis]) + 1) as u32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "LayerRecord", into = "LayerRecord")]
pub enum LayerSpec {
    Conv { window: Window, weight_seed: u32 },
    MaxPool(Window),
    AvgPool(Window),
    Activation(ActivationKind),
}

impl LayerSpec {
    pub fn conv(kernel: Pair, stride: Pair, padding: Pair, weight_seed: u32) -> Self {
        LayerSpec::Conv {
            window: Window::new(kernel, stride, padding),
            weight_seed,
        }
    }

    pub fn max_pool(kernel: Pair, stride: Pair, padding: Pair) -> Self {
        LayerSpec::MaxPool(Window::new(kernel, stride, padding))
    }

    pub fn avg_pool(kernel: Pair, stride: Pair, padding: Pair) -> Self {
        LayerSpec::AvgPool(Window::new(kernel, stride, padding))
    }

    pub fn relu() -> Self {
        LayerSpec::Activation(ActivationKind::Relu)
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            LayerSpec::Conv { .. } => LayerKind::Conv,
            LayerSpec::MaxPool(_) => LayerKind::MaxPool,
            LayerSpec::AvgPool(_) => LayerKind::AvgPool,
            LayerSpec::Activation(_) => LayerKind::Activation,
        }
    }

    pub fn window(&self) -> Option<&Window> {
        match self {
            LayerSpec::Conv { window, .. } | LayerSpec::MaxPool(window) | LayerSpec::AvgPool(window) => Some(window),
            LayerSpec::Activation(_) => None,
        }
    }

    pub fn window_mut(&mut self) -> Option<&mut Window> {
        match self {
            LayerSpec::Conv { window, .. } | LayerSpec::MaxPool(window) | LayerSpec::AvgPool(window) => Some(window),
            LayerSpec::Activation(_) => None,
        }
    }

    pub fn weight_seed(&self) -> Option<u32> {
        match self {
            LayerSpec::Conv { weight_seed, .. } => Some(*weight_seed),
            _ => None,
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.window() {
            Some(w) => write!(
                f,
                "{} k={}x{} s={}x{} p={}x{}",
                self.kind().as_str(),
                w.kernel[0],
                w.kernel[1],
                w.stride[0],
                w.stride[1],
                w.padding[0],
                w.padding[1]
            ),
            None => f.write_str(self.kind().as_str()),
        }
    }
}

/// Flat, field-named wire form of a layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRecord {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel: Option<Pair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stride: Option<Pair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    padding: Option<Pair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight_seed: Option<u32>,
}

impl TryFrom<LayerRecord> for LayerSpec {
    type Error = String;

    fn try_from(r: LayerRecord) -> Result<Self, Self::Error> {
        let windowed = |r: &LayerRecord| -> Result<Window, String> {
            let kernel = r.kernel.ok_or("missing `kernel`")?;
            let stride = r.stride.ok_or("missing `stride`")?;
            let padding = r.padding.ok_or("missing `padding`")?;
            let w = Window::new(kernel, stride, padding);
            w.check()?;
            Ok(w)
        };
        let layer = match r.kind.as_str() {
            "conv" => LayerSpec::Conv {
                window: windowed(&r)?,
                weight_seed: r.weight_seed.ok_or("conv layer missing `weight_seed`")?,
            },
            "maxpool" | "avgpool" => {
                if r.weight_seed.is_some() {
                    return Err("`weight_seed` only allowed on conv layers".into());
                }
                let w = windowed(&r)?;
                if r.kind == "maxpool" {
                    LayerSpec::MaxPool(w)
                } else {
                    LayerSpec::AvgPool(w)
                }
            }
            "relu" => {
                if r.kernel.is_some() || r.stride.is_some() || r.padding.is_some() || r.weight_seed.is_some() {
                    return Err("activation layers carry no kernel/stride/padding/weight_seed".into());
                }
                LayerSpec::Activation(ActivationKind::Relu)
            }
            other => return Err(format!("unknown layer kind `{other}`")),
        };
        Ok(layer)
    }
}

impl From<LayerSpec> for LayerRecord {
    fn from(l: LayerSpec) -> Self {
        let w = l.window().copied();
        LayerRecord {
            kind: l.kind().as_str().to_string(),
            kernel: w.map(|w| w.kernel),
            stride: w.map(|w| w.stride),
            padding: w.map(|w| w.padding),
            weight_seed: l.weight_seed(),
        }
    }
}

/// Ancestry tag: the id of the root genome plus how many mutations separate
/// this genome from it. Serialized as `"<origin>:<mutations>"`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LineageId {
    pub origin: String,
    pub mutations: u32,
}

impl LineageId {
    pub fn root(origin: impl Into<String>) -> Self {
        Self {
            origin: origin.into(),
            mutations: 0,
        }
    }

    pub fn child(&self) -> Self {
        Self {
            origin: self.origin.clone(),
            mutations: self.mutations + 1,
        }
    }

    pub fn extends(&self, ancestor: &LineageId) -> bool {
        self.origin == ancestor.origin && self.mutations > ancestor.mutations
    }
}

impl fmt::Display for LineageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.origin, self.mutations)
    }
}

impl FromStr for LineageId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.rsplit_once(':') {
            Some((origin, n)) => Ok(Self {
                origin: origin.to_string(),
                mutations: n.parse().map_err(|_| format!("bad lineage counter in `{s}`"))?,
            }),
            None => Ok(Self::root(s)),
        }
    }
}

impl Serialize for LineageId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LineageId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GenomeRecord", into = "GenomeRecord")]
pub struct Genome {
    pub input_shape: Shape,
    pub layers: Vec<LayerSpec>,
    pub output_arity: u32,
    pub lr_hint: f64,
    pub channel_width: u32,
    pub lineage_id: LineageId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenomeRecord {
    version: u32,
    input_shape: Shape,
    layers: Vec<LayerSpec>,
    output_arity: u32,
    lr_hint: f64,
    channel_width: u32,
    lineage_id: LineageId,
}

impl TryFrom<GenomeRecord> for Genome {
    type Error = String;

    fn try_from(r: GenomeRecord) -> Result<Self, Self::Error> {
        if r.version != GENOME_FORMAT_VERSION {
            return Err(format!(
                "unsupported genome version {} (expected {GENOME_FORMAT_VERSION})",
                r.version
            ));
        }
        if !r.input_shape.is_positive() {
            return Err("`input_shape` entries must be positive".into());
        }
        if r.layers.is_empty() {
            return Err("`layers` must not be empty".into());
        }
        if r.output_arity == 0 {
            return Err("`output_arity` must be positive".into());
        }
        if !(r.lr_hint.is_finite() && r.lr_hint > 0.0) {
            return Err("`lr_hint` must be a positive finite number".into());
        }
        if r.channel_width == 0 {
            return Err("`channel_width` must be positive".into());
        }
        Ok(Genome {
            input_shape: r.input_shape,
            layers: r.layers,
            output_arity: r.output_arity,
            lr_hint: r.lr_hint,
            channel_width: r.channel_width,
            lineage_id: r.lineage_id,
        })
    }
}

impl From<Genome> for GenomeRecord {
    fn from(g: Genome) -> Self {
        GenomeRecord {
            version: GENOME_FORMAT_VERSION,
            input_shape: g.input_shape,
            layers: g.layers,
            output_arity: g.output_arity,
            lr_hint: g.lr_hint,
            channel_width: g.channel_width,
            lineage_id: g.lineage_id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Height,
    Width,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Height => "height",
            Axis::Width => "width",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("layer {layer_index} collapses the {axis} axis below 1")]
pub struct ShapeError {
    pub layer_index: usize,
    pub axis: Axis,
}

/// Tensor shape at every layer boundary, starting with the input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeTrace(pub Vec<Shape>);

impl ShapeTrace {
    pub fn output(&self) -> Shape {
        *self.0.last().expect("trace always holds the input shape")
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GenomeError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("invalid genome: {0}")]
    Invalid(String),
    #[error("no shape-valid genome found in {attempts} attempts; bounds too tight for the input shape")]
    GenerationExhausted { attempts: u32 },
}

/// Structural limits of the search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchBounds {
    pub input_shape: Shape,
    pub output_arity: u32,
    /// Upper bound on convolution + pooling layers. Activations inserted by
    /// repair are not counted.
    pub max_layers: usize,
    #[serde(default = "default_channel_width")]
    pub channel_width: u32,
    #[serde(default = "default_lr")]
    pub default_lr: f64,
    #[serde(default = "default_conv_stride")]
    pub conv_stride: Pair,
    /// `None` means non-overlapping pooling (stride = kernel).
    #[serde(default)]
    pub pool_stride: Option<Pair>,
}

fn default_channel_width() -> u32 {
    32
}

fn default_lr() -> f64 {
    1e-3
}

fn default_conv_stride() -> Pair {
    [1, 1]
}

impl SearchBounds {
    pub fn new(input_shape: Shape, output_arity: u32, max_layers: usize) -> Self {
        Self {
            input_shape,
            output_arity,
            max_layers,
            channel_width: default_channel_width(),
            default_lr: default_lr(),
            conv_stride: default_conv_stride(),
            pool_stride: None,
        }
    }

    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if !self.input_shape.is_positive() {
            return Err(("bounds.input_shape", "entries must be positive".into()));
        }
        if self.output_arity == 0 {
            return Err(("bounds.output_arity", "must be positive".into()));
        }
        if self.max_layers == 0 {
            return Err(("bounds.max_layers", "must be at least 1".into()));
        }
        if self.channel_width == 0 {
            return Err(("bounds.channel_width", "must be positive".into()));
        }
        if !(self.default_lr.is_finite() && self.default_lr > 0.0) {
            return Err(("bounds.default_lr", "must be a positive finite number".into()));
        }
        if self.conv_stride.contains(&0) {
            return Err(("bounds.conv_stride", "entries must be at least 1".into()));
        }
        if self.pool_stride.is_some_and(|s| s.contains(&0)) {
            return Err(("bounds.pool_stride", "entries must be at least 1".into()));
        }
        Ok(())
    }
}

impl Genome {
    pub fn new(bounds: &SearchBounds, layers: Vec<LayerSpec>, lineage_id: LineageId) -> Self {
        Self {
            input_shape: bounds.input_shape,
            layers,
            output_arity: bounds.output_arity,
            lr_hint: bounds.default_lr,
            channel_width: bounds.channel_width,
            lineage_id,
        }
    }

    /// Full structural check: field invariants, per-layer invariants and a
    /// successful shape inference.
    pub fn validate(&self) -> Result<ShapeTrace, GenomeError> {
        if self.layers.is_empty() {
            return Err(GenomeError::Invalid("genome has no layers".into()));
        }
        if !self.input_shape.is_positive() || self.output_arity == 0 || self.channel_width == 0 {
            return Err(GenomeError::Invalid("non-positive dimension".into()));
        }
        if !(self.lr_hint.is_finite() && self.lr_hint > 0.0) {
            return Err(GenomeError::Invalid("lr_hint must be positive".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some(w) = layer.window() {
                w.check().map_err(|e| GenomeError::Invalid(format!("layer {i}: {e}")))?;
            }
        }
        Ok(infer_shapes(self)?)
    }

    /// Number of convolution and pooling layers.
    pub fn structural_len(&self) -> usize {
        self.layers.iter().filter(|l| l.kind() != LayerKind::Activation).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("genome serialization is infallible")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

pub fn infer_shapes(genome: &Genome) -> Result<ShapeTrace, ShapeError> {
    let mut trace = Vec::with_capacity(genome.layers.len() + 1);
    let mut cur = genome.input_shape;
    trace.push(cur);
    for (layer_index, layer) in genome.layers.iter().enumerate() {
        if let Some(w) = layer.window() {
            let height = w.output_extent(cur.height, 0).filter(|&d| d >= 1).ok_or(ShapeError {
                layer_index,
                axis: Axis::Height,
            })?;
            let width = w.output_extent(cur.width, 1).filter(|&d| d >= 1).ok_or(ShapeError {
                layer_index,
                axis: Axis::Width,
            })?;
            let channels = match layer.kind() {
                LayerKind::Conv => genome.channel_width,
                _ => cur.channels,
            };
            cur = Shape::new(channels, height, width);
        }
        trace.push(cur);
    }
    Ok(ShapeTrace(trace))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Census {
    pub conv: usize,
    pub pool: usize,
    pub activation: usize,
}

pub fn layer_census(genome: &Genome) -> Census {
    census_of(&genome.layers)
}

pub(crate) fn census_of(layers: &[LayerSpec]) -> Census {
    layers.iter().fold(Census::default(), |mut c, l| {
        match l.kind() {
            LayerKind::Conv => c.conv += 1,
            LayerKind::MaxPool | LayerKind::AvgPool => c.pool += 1,
            LayerKind::Activation => c.activation += 1,
        }
        c
    })
}

/// Content hash over every field except `lineage_id`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fingerprint(pub u64);

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

pub fn genome_fingerprint(genome: &Genome) -> Fingerprint {
    let mut h = Sha256::new();
    h.update(b"chimera-genome-v1");
    for d in <[u32; 3]>::from(genome.input_shape) {
        h.update(d.to_le_bytes());
    }
    h.update(genome.output_arity.to_le_bytes());
    h.update(genome.lr_hint.to_bits().to_le_bytes());
    h.update(genome.channel_width.to_le_bytes());
    h.update((genome.layers.len() as u64).to_le_bytes());
    for layer in &genome.layers {
        let tag: u8 = match layer.kind() {
            LayerKind::Conv => 1,
            LayerKind::MaxPool => 2,
            LayerKind::AvgPool => 3,
            LayerKind::Activation => 4,
        };
        h.update([tag]);
        if let Some(w) = layer.window() {
            for v in w.kernel.iter().chain(&w.stride).chain(&w.padding) {
                h.update(v.to_le_bytes());
            }
        }
        if let Some(seed) = layer.weight_seed() {
            h.update(seed.to_le_bytes());
        }
    }
    let digest = h.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    Fingerprint(u64::from_le_bytes(head))
}

/// Draws a random, repaired, shape-valid genome.
///
/// The structural layer count is uniform in `[1, max_layers]` and each layer
/// comes from [`mutation::sample_layer`] given the layers drawn so far.
pub fn random_genome(
    bounds: &SearchBounds,
    cfg: &MutationConfig,
    rng: &mut RandomSource,
) -> Result<Genome, GenomeError> {
    let origin = format!("r{:08x}", rng.random::<u32>());
    for _ in 0..cfg.max_retries {
        let n = rng.random_range(1..=bounds.max_layers);
        let mut layers: Vec<LayerSpec> = Vec::with_capacity(n * 2);
        for _ in 0..n {
            let layer = mutation::sample_layer(census_of(&layers), cfg, bounds, rng);
            layers.push(layer);
        }
        let candidate = Genome::new(bounds, layers, LineageId::root(origin.clone()));
        if let Ok(g) = repair::repair(&candidate) {
            return Ok(g);
        }
    }
    Err(GenomeError::GenerationExhausted {
        attempts: cfg.max_retries,
    })
}
