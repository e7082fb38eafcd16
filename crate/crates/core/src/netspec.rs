//! Network descriptions, quantized tensors, and the accelerator geometry
//! constants shared by every other module.
//!
//! A network is a linear chain of layers plus forward-skip residual edges.
//! Residual adds may carry an on-edge projection (1x1 strided conv) so that
//! downsampling bottleneck blocks are expressible in the linear form.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Activation precision in bits. Fixed by the core geometry (`P`).
pub const ACT_BITS: u32 = 8;

/// Integer tensor with explicit bit width, row-major (H, W, C).
///
/// Activations are unsigned 8-bit after ReLU + quantize; layers with the
/// ReLU flag off produce signed 8-bit values, tracked by `signed`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub bit_width: u32,
    pub signed: bool,
    pub values: Vec<i32>,
}

impl QTensor {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        bit_width: u32,
        signed: bool,
        values: Vec<i32>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidTensor("dimensions must be >= 1".into()));
        }
        if bit_width == 0 || bit_width > 32 {
            return Err(Error::InvalidTensor(format!("bad bit width {bit_width}")));
        }
        if values.len() != height * width * channels {
            return Err(Error::InvalidTensor(format!(
                "value count {} does not match {}x{}x{}",
                values.len(),
                height,
                width,
                channels
            )));
        }
        let t = QTensor { height, width, channels, bit_width, signed, values };
        let (lo, hi) = t.value_range();
        if let Some(v) = t.values.iter().find(|v| **v < lo || **v > hi) {
            return Err(Error::InvalidTensor(format!(
                "value {v} outside [{lo}, {hi}] for {bit_width}-bit (signed={signed})"
            )));
        }
        Ok(t)
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        QTensor {
            height,
            width,
            channels,
            bit_width: ACT_BITS,
            signed: false,
            values: vec![0; height * width * channels],
        }
    }

    /// Representable range for this tensor's width and signedness.
    pub fn value_range(&self) -> (i32, i32) {
        value_range(self.bit_width, self.signed)
    }

    #[inline]
    pub fn idx(&self, h: usize, w: usize, c: usize) -> usize {
        (h * self.width + w) * self.channels + c
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize, c: usize) -> i32 {
        self.values[(h * self.width + w) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, h: usize, w: usize, c: usize, v: i32) {
        let i = self.idx(h, w, c);
        self.values[i] = v;
    }

    pub fn elements(&self) -> usize {
        self.values.len()
    }

    /// Storage bytes at the tensor's bit width (8-bit elements take one byte).
    pub fn bytes(&self) -> usize {
        self.elements() * elem_bytes(self.bit_width)
    }

    pub fn shape(&self) -> Shape {
        Shape { h: self.height, w: self.width, c: self.channels }
    }

    /// Writes raw little-endian values plus a JSON sidecar at `path.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        let eb = elem_bytes(self.bit_width);
        let mut buf = Vec::with_capacity(self.values.len() * eb);
        for v in &self.values {
            match eb {
                1 => buf.push(*v as u8),
                _ => buf.extend_from_slice(&v.to_le_bytes()),
            }
        }
        f.write_all(&buf)?;
        let sidecar = serde_json::json!({
            "height": self.height,
            "width": self.width,
            "channels": self.channels,
            "bit_width": self.bit_width,
            "signed": self.signed,
        });
        let sp = sidecar_path(path);
        std::fs::write(sp, serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let sp = sidecar_path(path);
        let meta: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(&sp)
                .map_err(|e| Error::MalformedFile(format!("missing sidecar {}: {e}", sp.display())))?,
        )?;
        let g = |k: &str| -> Result<u64> {
            meta.get(k)
                .and_then(|v| v.as_u64())
                .ok_or_else(|| Error::MalformedFile(format!("sidecar missing `{k}`")))
        };
        let (h, w, c, bw) = (g("height")? as usize, g("width")? as usize, g("channels")? as usize, g("bit_width")? as u32);
        let signed = meta.get("signed").and_then(|v| v.as_bool()).unwrap_or(false);
        let mut raw = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut raw)?;
        let eb = elem_bytes(bw);
        if raw.len() != h * w * c * eb {
            return Err(Error::MalformedFile(format!(
                "tensor file has {} bytes, expected {}",
                raw.len(),
                h * w * c * eb
            )));
        }
        let values: Vec<i32> = match eb {
            1 => {
                if signed {
                    raw.iter().map(|b| *b as i8 as i32).collect()
                } else {
                    raw.iter().map(|b| *b as i32).collect()
                }
            }
            _ => raw
                .chunks_exact(4)
                .map(|ch| i32::from_le_bytes([ch[0], ch[1], ch[2], ch[3]]))
                .collect(),
        };
        QTensor::new(h, w, c, bw, signed, values)
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

pub fn elem_bytes(bit_width: u32) -> usize {
    if bit_width <= 8 {
        1
    } else {
        4
    }
}

pub fn value_range(bit_width: u32, signed: bool) -> (i32, i32) {
    if signed {
        (-(1i32 << (bit_width - 1)), (1i32 << (bit_width - 1)) - 1)
    } else {
        (0, (1i32 << bit_width) - 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub fn elements(&self) -> usize {
        self.h * self.w * self.c
    }

    /// Activation storage bytes at precision `P` (one byte per element).
    pub fn bytes(&self) -> usize {
        self.elements()
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.h, self.w, self.c)
    }
}

/// Per-layer requantization: out = sat8(round_half_up((acc * mult) >> shift)).
///
/// `mult`/`shift` hold one entry (broadcast) or one per output channel.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantSpec {
    #[serde(with = "one_or_many")]
    pub mult: Vec<i64>,
    #[serde(with = "one_or_many")]
    pub shift: Vec<u32>,
    pub relu: bool,
}

impl QuantSpec {
    pub fn per_layer(mult: i64, shift: u32, relu: bool) -> Self {
        QuantSpec { mult: vec![mult], shift: vec![shift], relu }
    }

    pub fn identity() -> Self {
        QuantSpec::per_layer(1, 0, true)
    }

    #[inline]
    pub fn mult_for(&self, ch: usize) -> i64 {
        if self.mult.len() == 1 {
            self.mult[0]
        } else {
            self.mult[ch]
        }
    }

    #[inline]
    pub fn shift_for(&self, ch: usize) -> u32 {
        if self.shift.len() == 1 {
            self.shift[0]
        } else {
            self.shift[ch]
        }
    }

    fn validate(&self, out_channels: usize) -> Result<()> {
        for (name, len) in [("mult", self.mult.len()), ("shift", self.shift.len())] {
            if len != 1 && len != out_channels {
                return Err(Error::InvalidNetwork(format!(
                    "quant `{name}` has {len} entries, expected 1 or {out_channels}"
                )));
            }
        }
        if let Some(s) = self.shift.iter().find(|s| **s > 31) {
            return Err(Error::InvalidNetwork(format!("quant shift {s} > 31")));
        }
        Ok(())
    }
}

mod one_or_many {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum OneOrMany<T> {
        One(T),
        Many(Vec<T>),
    }

    pub fn serialize<S: Serializer, T: Serialize + Clone>(v: &[T], s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.len() == 1 {
            OneOrMany::One(v[0].clone()).serialize(s)
        } else {
            OneOrMany::Many(v.to_vec()).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>, T: Deserialize<'de>>(d: D) -> std::result::Result<Vec<T>, D::Error> {
        Ok(match OneOrMany::deserialize(d)? {
            OneOrMany::One(x) => vec![x],
            OneOrMany::Many(xs) => xs,
        })
    }
}

/// The fixed post-MAC arithmetic: scale, round-half-up shift, optional ReLU,
/// saturate to 8 bits. ReLU outputs are unsigned [0, 255]; without ReLU the
/// result saturates to signed [-128, 127].
#[inline]
pub fn requantize(acc: i64, mult: i64, shift: u32, relu: bool) -> i32 {
    let scaled = acc * mult;
    let rounded = if shift == 0 {
        scaled
    } else {
        (scaled + (1i64 << (shift - 1))) >> shift
    };
    let r = if relu {
        rounded.clamp(0, 255)
    } else {
        rounded.clamp(-128, 127)
    };
    r as i32
}

/// Saturating 8-bit residual add over already-quantized operands.
#[inline]
pub fn saturating_add8(a: i32, b: i32, relu: bool) -> i32 {
    let s = a as i64 + b as i64;
    if relu {
        s.clamp(0, 255) as i32
    } else {
        s.clamp(-128, 127) as i32
    }
}

/// Concatenation axis for tile concatenation events.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConcatAxis {
    Height,
    Width,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaddingMode {
    /// Inner-tile zero padding: each tile convolves in isolation.
    Block,
    /// Whole-map zero padding at the feature-map border.
    Standard,
}

/// On-edge projection for residual adds whose skip operand needs a
/// strided / channel-changing 1x1 (or KxK) conv before the add.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Projection {
    #[serde(rename = "k")]
    pub kernel: usize,
    pub stride: usize,
    pub out_ch: usize,
    pub quant: QuantSpec,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Input,
    Conv,
    PoolMax,
    PoolAvg,
    ResidualAdd,
    Fc,
}

impl std::fmt::Display for LayerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            LayerKind::Input => "input",
            LayerKind::Conv => "conv",
            LayerKind::PoolMax => "pool_max",
            LayerKind::PoolAvg => "pool_avg",
            LayerKind::ResidualAdd => "residual_add",
            LayerKind::Fc => "fc",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Kernel extent K for conv/pool layers.
    #[serde(rename = "k", default = "one")]
    pub kernel: usize,
    #[serde(default = "one")]
    pub stride: usize,
    /// Filled during shape inference; not part of the JSON contract.
    #[serde(default)]
    pub in_channels: usize,
    #[serde(rename = "out_ch", default)]
    pub out_channels: usize,
    #[serde(rename = "padding", default = "block_default")]
    pub padding_mode: PaddingMode,
    #[serde(default = "QuantSpec::identity")]
    pub quant: QuantSpec,
    /// Skip source layer index; residual_add only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<usize>,
    /// Optional skip-path projection; residual_add only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection: Option<Projection>,
}

fn one() -> usize {
    1
}

fn block_default() -> PaddingMode {
    PaddingMode::Block
}

impl LayerSpec {
    pub fn conv(kernel: usize, stride: usize, out_channels: usize, quant: QuantSpec) -> Self {
        LayerSpec {
            kind: LayerKind::Conv,
            kernel,
            stride,
            in_channels: 0,
            out_channels,
            padding_mode: PaddingMode::Block,
            quant,
            source: None,
            projection: None,
        }
    }

    pub fn pool_max(kernel: usize, stride: usize) -> Self {
        LayerSpec {
            kind: LayerKind::PoolMax,
            kernel,
            stride,
            in_channels: 0,
            out_channels: 0,
            padding_mode: PaddingMode::Block,
            quant: QuantSpec::identity(),
            source: None,
            projection: None,
        }
    }

    pub fn pool_avg(kernel: usize, stride: usize) -> Self {
        LayerSpec { kind: LayerKind::PoolAvg, ..LayerSpec::pool_max(kernel, stride) }
    }

    pub fn residual_add(source: usize, quant: QuantSpec, projection: Option<Projection>) -> Self {
        LayerSpec {
            kind: LayerKind::ResidualAdd,
            kernel: 1,
            stride: 1,
            in_channels: 0,
            out_channels: 0,
            padding_mode: PaddingMode::Block,
            quant,
            source: Some(source),
            projection,
        }
    }

    pub fn fc(out_channels: usize, quant: QuantSpec) -> Self {
        LayerSpec {
            kind: LayerKind::Fc,
            kernel: 1,
            stride: 1,
            in_channels: 0,
            out_channels,
            padding_mode: PaddingMode::Block,
            quant,
            source: None,
            projection: None,
        }
    }

    /// True for layers that own generated weights (conv, fc, or a
    /// residual add with a projection).
    pub fn is_weighted(&self) -> bool {
        matches!(self.kind, LayerKind::Conv | LayerKind::Fc)
            || (self.kind == LayerKind::ResidualAdd && self.projection.is_some())
    }

    /// Weight element count: K*K*Cin*Cout (projection dims for add layers).
    pub fn weight_elements(&self, skip_in_channels: usize) -> usize {
        match self.kind {
            LayerKind::Conv | LayerKind::Fc => {
                self.kernel * self.kernel * self.in_channels * self.out_channels
            }
            LayerKind::ResidualAdd => match &self.projection {
                Some(p) => p.kernel * p.kernel * skip_in_channels * p.out_ch,
                None => 0,
            },
            _ => 0,
        }
    }
}

/// CIM core geometry and on-chip memory capacities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreGeometry {
    /// Tile width in CIM group columns.
    pub tile_width: usize,
    /// Tile height in SRAM rows per cluster (bit-serial axis).
    pub tile_height: usize,
    /// Channel depth: clusters/LCUs per macro.
    pub channel_depth: usize,
    /// Activation precision in bits (macro rows per group).
    pub precision: u32,
    /// Single CIM core capacity in bits.
    pub core_capacity_bits: usize,
    pub core_count: usize,
    /// Tile memory capacity in bytes.
    pub tmem_bytes: usize,
}

impl Default for CoreGeometry {
    fn default() -> Self {
        CoreGeometry {
            tile_width: 8,
            tile_height: 16,
            channel_depth: 128,
            precision: 8,
            core_capacity_bits: 131_072,
            core_count: 3,
            tmem_bytes: 24 * 1024,
        }
    }
}

impl CoreGeometry {
    pub fn core_bytes(&self) -> usize {
        self.core_capacity_bits / 8
    }

    /// Total on-chip activation storage: all cores plus TMEM.
    pub fn total_activation_bytes(&self) -> usize {
        self.core_count * self.core_bytes() + self.tmem_bytes
    }

    /// Whether a tile of the given dims fits a single core at precision P.
    pub fn tile_fits(&self, h: usize, w: usize, c: usize) -> bool {
        h * w * c * self.precision as usize <= self.core_capacity_bits
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input_shape: Shape,
    pub layers: Vec<LayerSpec>,
    shapes: Vec<Shape>,
}

impl NetworkSpec {
    /// Builds a network, running shape inference and filling `in_channels`.
    pub fn new(input_shape: Shape, mut layers: Vec<LayerSpec>) -> Result<Self> {
        if input_shape.h == 0 || input_shape.w == 0 || input_shape.c == 0 {
            return Err(Error::InvalidNetwork("input shape must be >= 1 in every dim".into()));
        }
        let shapes = infer_shapes_impl(input_shape, &mut layers)?;
        for (i, l) in layers.iter().enumerate() {
            l.quant
                .validate(shapes[i].c)
                .map_err(|e| Error::InvalidNetwork(format!("layer {i}: {e}")))?;
            if let Some(p) = &l.projection {
                p.quant
                    .validate(p.out_ch)
                    .map_err(|e| Error::InvalidNetwork(format!("layer {i} projection: {e}")))?;
            }
        }
        Ok(NetworkSpec { input_shape, layers, shapes })
    }

    /// Output shape of every layer, in order.
    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn output_shape(&self) -> Shape {
        *self.shapes.last().unwrap_or(&self.input_shape)
    }

    /// Input shape seen by layer `i`.
    pub fn input_shape_of(&self, i: usize) -> Shape {
        if i == 0 {
            self.input_shape
        } else {
            self.shapes[i - 1]
        }
    }

    /// (source, target) residual edges, derived from the add layers.
    pub fn residual_edges(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.source.map(|s| (s, i)))
            .collect()
    }

    /// Weighted layer indices in order (conv, fc, projection-bearing adds).
    pub fn weighted_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_weighted())
            .map(|(i, _)| i)
            .collect()
    }

    /// Skip-operand input channel count for a residual add layer.
    pub fn skip_in_channels(&self, add_layer: usize) -> usize {
        let src = self.layers[add_layer].source.expect("residual add has a source");
        self.shapes[src].c
    }

    /// Total generated-weight elements (supermask bit count).
    pub fn total_weight_elements(&self) -> usize {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let skip_c = if l.kind == LayerKind::ResidualAdd && l.projection.is_some() {
                    self.skip_in_channels(i)
                } else {
                    0
                };
                l.weight_elements(skip_c)
            })
            .sum()
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = NetworkDoc {
            input: [self.input_shape.h, self.input_shape.w, self.input_shape.c],
            layers: self.layers.clone(),
            residual_edges: self.residual_edges(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let doc: NetworkDoc = serde_json::from_str(json)?;
        let net = NetworkSpec::new(
            Shape { h: doc.input[0], w: doc.input[1], c: doc.input[2] },
            doc.layers,
        )?;
        // The edge list is redundant with the per-layer sources; reject
        // documents where the two disagree.
        if !doc.residual_edges.is_empty() && doc.residual_edges != net.residual_edges() {
            return Err(Error::InvalidNetwork(
                "residual_edges disagree with residual_add sources".into(),
            ));
        }
        Ok(net)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct NetworkDoc {
    input: [usize; 3],
    layers: Vec<LayerSpec>,
    #[serde(default)]
    residual_edges: Vec<(usize, usize)>,
}

/// Output spatial extent under same-padding with a center-anchored kernel:
/// output index r maps to input center r*stride.
pub fn out_extent(extent: usize, stride: usize) -> usize {
    extent.div_ceil(stride)
}

/// Computes the output shape of every layer; fails on any inconsistency.
pub fn infer_shapes(net: &NetworkSpec) -> Vec<Shape> {
    net.shapes().to_vec()
}

fn infer_shapes_impl(input: Shape, layers: &mut [LayerSpec]) -> Result<Vec<Shape>> {
    let mut shapes: Vec<Shape> = Vec::with_capacity(layers.len());
    for i in 0..layers.len() {
        let prev = if i == 0 { input } else { shapes[i - 1] };
        let mismatch = |detail: String| Error::ShapeMismatch { layer: i, detail };
        let l = &layers[i];
        if l.stride == 0 {
            return Err(mismatch("stride must be >= 1".into()));
        }
        let out = match l.kind {
            LayerKind::Input => prev,
            LayerKind::Conv => {
                if !matches!(l.kernel, 1 | 3 | 7) {
                    return Err(mismatch(format!("conv kernel {} not in {{1,3,7}}", l.kernel)));
                }
                if !matches!(l.stride, 1 | 2) {
                    return Err(mismatch(format!("conv stride {} not in {{1,2}}", l.stride)));
                }
                if l.out_channels == 0 {
                    return Err(mismatch("conv out_ch must be >= 1".into()));
                }
                Shape {
                    h: out_extent(prev.h, l.stride),
                    w: out_extent(prev.w, l.stride),
                    c: l.out_channels,
                }
            }
            LayerKind::PoolMax | LayerKind::PoolAvg => {
                if l.kernel == 0 {
                    return Err(mismatch("pool kernel must be >= 1".into()));
                }
                Shape {
                    h: out_extent(prev.h, l.stride),
                    w: out_extent(prev.w, l.stride),
                    c: prev.c,
                }
            }
            LayerKind::Fc => {
                if prev.h != 1 || prev.w != 1 {
                    return Err(mismatch(format!("fc requires a 1x1 spatial map, got {prev}")));
                }
                if l.out_channels == 0 {
                    return Err(mismatch("fc out_ch must be >= 1".into()));
                }
                Shape { h: 1, w: 1, c: l.out_channels }
            }
            LayerKind::ResidualAdd => {
                let src = l.source.ok_or_else(|| mismatch("residual_add missing source".into()))?;
                if src >= i {
                    return Err(mismatch(format!("residual source {src} must precede layer {i}")));
                }
                let skip = shapes[src];
                let skip_out = match &l.projection {
                    Some(p) => {
                        if !matches!(p.stride, 1 | 2) {
                            return Err(mismatch(format!("projection stride {} not in {{1,2}}", p.stride)));
                        }
                        Shape {
                            h: out_extent(skip.h, p.stride),
                            w: out_extent(skip.w, p.stride),
                            c: p.out_ch,
                        }
                    }
                    None => skip,
                };
                if skip_out != prev {
                    return Err(mismatch(format!(
                        "skip operand {skip_out} does not match main operand {prev}"
                    )));
                }
                prev
            }
        };
        layers[i].in_channels = prev.c;
        if layers[i].kind != LayerKind::Conv && layers[i].kind != LayerKind::Fc {
            layers[i].out_channels = out.c;
        }
        shapes.push(out);
    }
    Ok(shapes)
}

/// Global-reduce detection: a pool whose kernel covers the whole map and
/// produces a 1x1 output cannot run per-tile; the scheduler treats it and
/// everything after it as the cross-tile tail.
pub fn is_global_reduce(net: &NetworkSpec, layer: usize) -> bool {
    let l = &net.layers[layer];
    let inp = net.input_shape_of(layer);
    matches!(l.kind, LayerKind::PoolMax | LayerKind::PoolAvg)
        && l.kernel >= inp.h.max(inp.w)
        && net.shapes()[layer].h == 1
        && net.shapes()[layer].w == 1
}

/// Canonical built-in descriptors.
pub fn builtin_network(name: &str, input_side: usize) -> Result<NetworkSpec> {
    match name {
        "toy_vgg" => toy_vgg(input_side),
        "resnet18" => resnet(input_side, &[2, 2, 2, 2], false),
        "resnet50" => resnet(input_side, &[3, 4, 6, 3], true),
        other => Err(Error::UnknownNetwork(other.to_string())),
    }
}

/// Twelve stacked stride-1 CONV3x3 layers; nothing shrinks tiles, so a
/// single tile penetrates the full depth.
fn toy_vgg(input_side: usize) -> Result<NetworkSpec> {
    if input_side < 4 {
        return Err(Error::InvalidNetwork("toy_vgg input side must be >= 4".into()));
    }
    let mut layers = Vec::new();
    for i in 0..12 {
        let out_ch = 32;
        let shift = if i == 0 { 8 } else { 10 };
        layers.push(LayerSpec::conv(3, 1, out_ch, QuantSpec::per_layer(1, shift, true)));
    }
    NetworkSpec::new(Shape { h: input_side, w: input_side, c: 3 }, layers)
}

/// ResNet-style descriptor. `bottleneck` selects the 50-layer bottleneck
/// form (1x1 / 3x3 / 1x1 with 4x expansion) over the 18-layer basic form.
fn resnet(input_side: usize, blocks: &[usize], bottleneck: bool) -> Result<NetworkSpec> {
    if !input_side.is_multiple_of(32) {
        return Err(Error::InvalidNetwork(format!(
            "resnet input side must be a multiple of 32, got {input_side}"
        )));
    }
    // Scale/shift values are placeholders for a trained quantization; with
    // generated random weights only the arithmetic contract matters.
    let cq = |relu: bool| QuantSpec::per_layer(1, 10, relu);
    let mut layers = Vec::new();
    layers.push(LayerSpec::conv(7, 2, 64, cq(true)));
    layers.push(LayerSpec::pool_max(3, 2));

    let stage_mid = [64usize, 128, 256, 512];
    let expansion = if bottleneck { 4 } else { 1 };
    let mut in_ch = 64usize;
    for (si, &nblocks) in blocks.iter().enumerate() {
        let mid = stage_mid[si];
        let out_ch = mid * expansion;
        for b in 0..nblocks {
            let stride = if si > 0 && b == 0 { 2 } else { 1 };
            let block_input = layers.len() - 1;
            if bottleneck {
                layers.push(LayerSpec::conv(1, 1, mid, cq(true)));
                layers.push(LayerSpec::conv(3, stride, mid, cq(true)));
                layers.push(LayerSpec::conv(1, 1, out_ch, cq(false)));
            } else {
                layers.push(LayerSpec::conv(3, stride, mid, cq(true)));
                layers.push(LayerSpec::conv(3, 1, out_ch, cq(false)));
            }
            let projection = if in_ch != out_ch || stride != 1 {
                Some(Projection { kernel: 1, stride, out_ch, quant: cq(false) })
            } else {
                None
            };
            layers.push(LayerSpec::residual_add(block_input, cq(true), projection));
            in_ch = out_ch;
        }
    }
    let final_side = input_side / 32;
    layers.push(LayerSpec::pool_avg(final_side, final_side));
    layers.push(LayerSpec::fc(1000, QuantSpec::per_layer(1, 6, true)));
    NetworkSpec::new(Shape { h: input_side, w: input_side, c: 3 }, layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_identities_hold() {
        let g = CoreGeometry::default();
        assert_eq!(
            g.tile_width * g.tile_height * g.channel_depth * g.precision as usize,
            g.core_capacity_bits
        );
        assert_eq!(g.core_bytes(), 16 * 1024);
        assert_eq!(g.total_activation_bytes(), 72 * 1024);
    }

    #[test]
    fn same_padding_conv_preserves_dims() {
        let net = NetworkSpec::new(
            Shape { h: 8, w: 8, c: 16 },
            vec![LayerSpec::conv(3, 1, 32, QuantSpec::identity())],
        )
        .unwrap();
        assert_eq!(net.shapes(), &[Shape { h: 8, w: 8, c: 32 }]);
    }

    #[test]
    fn resnet50_first_conv_output_is_one_megabyte() {
        let net = builtin_network("resnet50", 256).unwrap();
        let s = net.shapes()[0];
        assert_eq!(s, Shape { h: 128, w: 128, c: 64 });
        assert_eq!(s.bytes(), 1_048_576);
    }

    #[test]
    fn resnet50_descriptor_structure() {
        let net = builtin_network("resnet50", 256).unwrap();
        let convs = net.layers.iter().filter(|l| l.kind == LayerKind::Conv).count();
        let projs = net
            .layers
            .iter()
            .filter(|l| l.kind == LayerKind::ResidualAdd && l.projection.is_some())
            .count();
        assert_eq!(convs + projs, 53, "weighted conv count");
        // Weight parameter count of the conv layers (projections included,
        // classifier excluded) checks the topology against ~23.9M.
        let fc_weights: usize = net
            .layers
            .iter()
            .filter(|l| l.kind == LayerKind::Fc)
            .map(|l| l.in_channels * l.out_channels)
            .sum();
        let conv_weights = net.total_weight_elements() - fc_weights;
        assert_eq!(conv_weights, 23_454_912);
        assert!((conv_weights as f64 - 23.9e6).abs() / 23.9e6 < 0.02);
        assert_eq!(net.output_shape(), Shape { h: 1, w: 1, c: 1000 });
    }

    #[test]
    fn resnet18_parameter_count() {
        let net = builtin_network("resnet18", 224).unwrap();
        let fc_weights: usize = net
            .layers
            .iter()
            .filter(|l| l.kind == LayerKind::Fc)
            .map(|l| l.in_channels * l.out_channels)
            .sum();
        let conv_weights = net.total_weight_elements() - fc_weights;
        assert_eq!(conv_weights, 11_166_912);
        assert!((conv_weights as f64 - 11.4e6).abs() / 11.4e6 < 0.03);
    }

    #[test]
    fn toy_vgg_is_twelve_stride1_convs() {
        let net = builtin_network("toy_vgg", 16).unwrap();
        assert_eq!(net.layers.len(), 12);
        assert!(net.layers.iter().all(|l| l.kind == LayerKind::Conv && l.stride == 1 && l.kernel == 3));
        assert!(net.shapes().iter().all(|s| s.h == 16 && s.w == 16));
    }

    #[test]
    fn unknown_builtin_is_an_error() {
        assert!(matches!(builtin_network("alexnet", 224), Err(Error::UnknownNetwork(_))));
    }

    #[test]
    fn mismatched_residual_channels_fail() {
        let r = NetworkSpec::new(
            Shape { h: 8, w: 8, c: 8 },
            vec![
                LayerSpec::conv(3, 1, 16, QuantSpec::identity()),
                LayerSpec::conv(3, 1, 32, QuantSpec::identity()),
                LayerSpec::residual_add(0, QuantSpec::identity(), None),
            ],
        );
        assert!(matches!(r, Err(Error::ShapeMismatch { layer: 2, .. })));
    }

    #[test]
    fn json_round_trip() {
        let net = builtin_network("resnet50", 256).unwrap();
        let js = net.to_json().unwrap();
        let back = NetworkSpec::from_json(&js).unwrap();
        assert_eq!(net, back);
    }

    #[test]
    fn quantize_rounds_half_up_and_saturates() {
        assert_eq!(requantize(300, 1, 0, true), 255);
        assert_eq!(requantize(-5, 1, 0, true), 0);
        assert_eq!(requantize(-5, 1, 0, false), -5);
        assert_eq!(requantize(-300, 1, 0, false), -128);
        // round half up: 3/2 -> 2, 5/4 -> 1, -1/2 -> 0
        assert_eq!(requantize(3, 1, 1, true), 2);
        assert_eq!(requantize(5, 1, 2, true), 1);
        assert_eq!(requantize(-1, 1, 1, false), 0);
    }

    #[test]
    fn tensor_file_round_trip() {
        let dir = std::env::temp_dir().join("alcim_qtensor_test");
        std::fs::create_dir_all(&dir).unwrap();
        let t = QTensor::new(2, 3, 4, 8, false, (0..24).collect()).unwrap();
        let p = dir.join("t.bin");
        t.save(&p).unwrap();
        assert_eq!(QTensor::load(&p).unwrap(), t);
    }
}
