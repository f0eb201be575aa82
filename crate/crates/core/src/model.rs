//! The SQ8 model container: tensors, layers, validation, and the binary and
//! JSON encodings. Also the SQ8I input-image format.

use std::fmt;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::{normalize_multiplier, output_stage_headroom, FixedMultiplier, QuantParams, MULTIPLIER_BITS};
use crate::ring::Ring;

pub const MAGIC: [u8; 4] = *b"SQ8\0";
pub const VERSION: u16 = 1;
const FLAG_HAS_DATA: u16 = 1;
const NONE: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TensorRole {
    WeightsU8,
    BiasI32,
    Activation,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TensorData {
    U8(Vec<u8>),
    I32(Vec<i32>),
    /// Activations, and every tensor of a model skeleton.
    Absent,
}

impl TensorData {
    fn to_bytes(&self) -> Vec<u8> {
        match self {
            TensorData::U8(v) => v.clone(),
            TensorData::I32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            TensorData::Absent => Vec::new(),
        }
    }
}

impl Serialize for TensorData {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TensorData::Absent => s.serialize_none(),
            _ => s.serialize_some(&B64.encode(self.to_bytes())),
        }
    }
}

impl<'de> Deserialize<'de> for TensorData {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        // bias bytes are re-read as i32 by `Sq8Model::from_json`, which knows the role
        let raw: Option<String> = Option::deserialize(d)?;
        match raw {
            None => Ok(TensorData::Absent),
            Some(text) => B64
                .decode(text)
                .map(TensorData::U8)
                .map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub id: u32,
    pub shape: Vec<u32>,
    pub role: TensorRole,
    pub quant: QuantParams,
    pub data: TensorData,
}

impl Tensor {
    pub fn len(&self) -> usize {
        self.shape.iter().map(|&d| d as usize).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn u8_data(&self) -> Option<&[u8]> {
        match &self.data {
            TensorData::U8(v) => Some(v),
            _ => None,
        }
    }

    pub fn i32_data(&self) -> Option<&[i32]> {
        match &self.data {
            TensorData::I32(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    #[serde(rename = "CONV_2D")]
    Conv2d,
    #[serde(rename = "DEPTHWISE_CONV_2D")]
    DepthwiseConv2d,
    #[serde(rename = "FULLY_CONNECTED")]
    FullyConnected,
    #[serde(rename = "AVERAGE_POOL_2D")]
    AveragePool2d,
    #[serde(rename = "MAX_POOL_2D")]
    MaxPool2d,
    #[serde(rename = "RESHAPE")]
    Reshape,
    #[serde(rename = "ARGMAX_OUTPUT")]
    ArgmaxOutput,
}

impl LayerKind {
    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Result<Self> {
        use LayerKind::*;
        Ok(match c {
            0 => Conv2d,
            1 => DepthwiseConv2d,
            2 => FullyConnected,
            3 => AveragePool2d,
            4 => MaxPool2d,
            5 => Reshape,
            6 => ArgmaxOutput,
            _ => return Err(Error::Format(format!("unknown layer kind {c}"))),
        })
    }

    /// Layers that run a dot product and an output stage.
    pub fn has_weights(self) -> bool {
        matches!(
            self,
            LayerKind::Conv2d | LayerKind::DepthwiseConv2d | LayerKind::FullyConnected
        )
    }

    pub fn is_spatial(self) -> bool {
        matches!(
            self,
            LayerKind::Conv2d | LayerKind::DepthwiseConv2d | LayerKind::AveragePool2d | LayerKind::MaxPool2d
        )
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok();
        write!(f, "{}", s.as_ref().and_then(|v| v.as_str()).unwrap_or("?"))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Padding {
    Same,
    #[default]
    Valid,
}

/// Filter placement of a spatial layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Geometry {
    pub filter: (u32, u32),
    pub stride: (u32, u32),
    pub padding: Padding,
    pub depth_multiplier: u32,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry {
            filter: (1, 1),
            stride: (1, 1),
            padding: Padding::Valid,
            depth_multiplier: 1,
        }
    }
}

impl Geometry {
    pub fn new(filter: (u32, u32), stride: (u32, u32), padding: Padding) -> Self {
        Geometry {
            filter,
            stride,
            padding,
            depth_multiplier: 1,
        }
    }

    /// Output extent and leading padding along one axis (TFLite rules).
    pub fn axis(input: u32, filter: u32, stride: u32, padding: Padding) -> Result<(u32, u32)> {
        if filter == 0 || stride == 0 {
            return Err(Error::shape("filter and stride must be positive"));
        }
        match padding {
            Padding::Valid => {
                if filter > input {
                    return Err(Error::shape(format!("filter {filter} exceeds input {input}")));
                }
                Ok(((input - filter) / stride + 1, 0))
            }
            Padding::Same => {
                let out = input.div_ceil(stride);
                let total = ((out - 1) * stride + filter).saturating_sub(input);
                Ok((out, total / 2))
            }
        }
    }

    /// (out_h, out_w, pad_top, pad_left)
    pub fn output(&self, h: u32, w: u32) -> Result<(u32, u32, u32, u32)> {
        let (oh, pt) = Self::axis(h, self.filter.0, self.stride.0, self.padding)?;
        let (ow, pl) = Self::axis(w, self.filter.1, self.stride.1, self.padding)?;
        Ok((oh, ow, pt, pl))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub input: u32,
    /// Produced activation; the input again for ARGMAX_OUTPUT.
    pub output: u32,
    pub weights: Option<u32>,
    pub bias: Option<u32>,
    pub geometry: Geometry,
    /// Fused activation as a clamp range: NONE [0,255], ReLU [z3,255],
    /// ReLU6 [z3, quantize(6)].
    pub clamp: (u8, u8),
    pub multiplier: Option<FixedMultiplier>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub version: u16,
    pub input_tensor: u32,
    /// H, W, C
    pub input_shape: [u32; 3],
    /// Public ceiling L on every layer's multiplier shift.
    pub shift_bound: u32,
    /// Smallest ring width k that evaluates the model without overflow.
    pub ring_bits: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sq8Model {
    pub header: Header,
    pub tensors: Vec<Tensor>,
    pub layers: Vec<LayerSpec>,
}

/// Shapes the validator derived for one layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub input: [u32; 3],
    pub output: [u32; 3],
    /// Terms per dot product, for layers with weights.
    pub window: u32,
}

impl Sq8Model {
    pub fn tensor(&self, id: u32) -> Result<&Tensor> {
        self.tensors
            .get(id as usize)
            .ok_or_else(|| Error::Topology(format!("tensor {id} does not exist")))
    }

    pub fn input_tensor(&self) -> &Tensor {
        &self.tensors[self.header.input_tensor as usize]
    }

    pub fn input_len(&self) -> usize {
        self.header.input_shape.iter().map(|&d| d as usize).product()
    }

    pub fn has_data(&self) -> bool {
        self.tensors
            .iter()
            .any(|t| !matches!(t.data, TensorData::Absent))
    }

    /// Number of output classes (length of the argmax input).
    pub fn classes(&self) -> usize {
        let last = self.layers.last().expect("validated model has layers");
        self.tensors[last.input as usize].len()
    }

    /// Copy without weights or biases: what every party may see.
    pub fn skeleton(&self) -> Sq8Model {
        let mut m = self.clone();
        for t in &mut m.tensors {
            t.data = TensorData::Absent;
        }
        m
    }

    /// Checks every structural invariant and returns the derived layer shapes.
    pub fn validate(&self) -> Result<Vec<LayerShape>> {
        let (shapes, required) = self.analyze()?;
        // skeletons carry no biases; trust the header's recorded width
        if self.has_data() && required != self.header.ring_bits {
            return Err(Error::Format(format!(
                "header records ring width {} but the model needs {required}",
                self.header.ring_bits
            )));
        }
        if self.header.ring_bits > 128 {
            return Err(Error::Headroom {
                required: self.header.ring_bits,
                available: 128,
            });
        }
        Ok(shapes)
    }

    /// Ring width the model needs, recomputed from its contents.
    pub fn required_ring_bits(&self) -> Result<u32> {
        Ok(self.analyze()?.1)
    }

    fn analyze(&self) -> Result<(Vec<LayerShape>, u32)> {
        let h = &self.header;
        if h.version != VERSION {
            return Err(Error::Format(format!("unsupported version {}", h.version)));
        }
        for (i, t) in self.tensors.iter().enumerate() {
            if t.id as usize != i {
                return Err(Error::Topology(format!("tensor at position {i} has id {}", t.id)));
            }
            QuantParams::new(t.quant.scale, t.quant.zero_point)
                .map_err(|_| Error::Format(format!("tensor {i} has invalid scale {}", t.quant.scale)))?;
            let want = match (&t.data, t.role) {
                (TensorData::Absent, _) => None,
                (TensorData::U8(v), TensorRole::WeightsU8) => Some(v.len()),
                (TensorData::I32(v), TensorRole::BiasI32) => Some(v.len()),
                _ => return Err(Error::Format(format!("tensor {i} data does not match its role"))),
            };
            if let Some(n) = want {
                if n != t.len() {
                    return Err(Error::Format(format!(
                        "tensor {i} has {n} values for shape {:?}",
                        t.shape
                    )));
                }
            }
            if t.role == TensorRole::Activation && t.shape.len() != 3 {
                return Err(Error::shape(format!("activation {i} must be H x W x C")));
            }
        }
        let input = self.tensor(h.input_tensor)?;
        if input.role != TensorRole::Activation || input.shape != h.input_shape {
            return Err(Error::Topology("header input does not match its tensor".into()));
        }

        let mut produced = vec![false; self.tensors.len()];
        produced[h.input_tensor as usize] = true;
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut required = 10u32;
        for (li, l) in self.layers.iter().enumerate() {
            let src = self.tensor(l.input)?;
            if src.role != TensorRole::Activation || !produced[l.input as usize] {
                return Err(Error::Topology(format!(
                    "layer {li} reads tensor {} before it is produced",
                    l.input
                )));
            }
            if l.kind == LayerKind::ArgmaxOutput {
                if li + 1 != self.layers.len() {
                    return Err(Error::Topology("ARGMAX_OUTPUT must be the last layer".into()));
                }
                if l.output != l.input {
                    return Err(Error::Topology("ARGMAX_OUTPUT has no output tensor".into()));
                }
                let s = shape3(src);
                shapes.push(LayerShape {
                    input: s,
                    output: s,
                    window: 0,
                });
                continue;
            }
            let dst = self.tensor(l.output)?;
            if dst.role != TensorRole::Activation || produced[l.output as usize] {
                return Err(Error::Topology(format!(
                    "layer {li} output {} is not a fresh activation",
                    l.output
                )));
            }
            produced[l.output as usize] = true;
            if l.clamp.0 > l.clamp.1 {
                return Err(Error::Format(format!("layer {li} has empty clamp range")));
            }
            let shape = self.check_layer(li, l, src, dst)?;
            if l.kind.has_weights() {
                let mult = l.multiplier.expect("checked in check_layer");
                let bias = self.tensor(l.bias.unwrap())?;
                let max_bias = bias
                    .i32_data()
                    .map(|b| b.iter().map(|v| v.unsigned_abs() as u128).max().unwrap_or(0))
                    .unwrap_or(i32::MAX as u128 + 1);
                let acc = shape.window as u128 * 255 * 255 + max_bias;
                if mult.shift > h.shift_bound {
                    return Err(Error::Format(format!(
                        "layer {li} shift {} exceeds header bound {}",
                        mult.shift, h.shift_bound
                    )));
                }
                required = required.max(output_stage_headroom(acc, h.shift_bound, mult.shift));
            }
            if l.kind == LayerKind::AveragePool2d {
                required = required.max(MULTIPLIER_BITS + 11);
            }
            shapes.push(shape);
        }
        if self.layers.last().map(|l| l.kind) != Some(LayerKind::ArgmaxOutput) {
            return Err(Error::Topology("model must end with ARGMAX_OUTPUT".into()));
        }
        required = required.max(h.shift_bound + 2);
        Ok((shapes, required))
    }

    fn check_layer(&self, li: usize, l: &LayerSpec, src: &Tensor, dst: &Tensor) -> Result<LayerShape> {
        let [ih, iw, ic] = shape3(src);
        let g = &l.geometry;
        let same_quant = || -> Result<()> {
            if src.quant != dst.quant {
                return Err(Error::Format(format!(
                    "layer {li} ({}) must keep its input's quantization",
                    l.kind
                )));
            }
            Ok(())
        };
        let (out, window) = match l.kind {
            LayerKind::Conv2d | LayerKind::DepthwiseConv2d => {
                let (oh, ow, _, _) = g.output(ih, iw).map_err(|e| at_layer(li, e))?;
                let w = self.tensor(l.weights.ok_or_else(|| missing(li, "weights"))?)?;
                let (oc, want_w, window) = if l.kind == LayerKind::Conv2d {
                    let oc = *w.shape.first().unwrap_or(&0);
                    (oc, vec![oc, g.filter.0, g.filter.1, ic], g.filter.0 * g.filter.1 * ic)
                } else {
                    let oc = ic * g.depth_multiplier;
                    (oc, vec![1, g.filter.0, g.filter.1, oc], g.filter.0 * g.filter.1)
                };
                if w.shape != want_w || oc == 0 {
                    return Err(Error::shape(format!(
                        "layer {li} weights have shape {:?}, expected {want_w:?}",
                        w.shape
                    )));
                }
                ([oh, ow, oc], window)
            }
            LayerKind::FullyConnected => {
                let w = self.tensor(l.weights.ok_or_else(|| missing(li, "weights"))?)?;
                let n_in = ih * iw * ic;
                if w.shape.len() != 2 || w.shape[1] != n_in || w.shape[0] == 0 {
                    return Err(Error::shape(format!(
                        "layer {li} weights have shape {:?}, expected [out, {n_in}]",
                        w.shape
                    )));
                }
                ([1, 1, w.shape[0]], n_in)
            }
            LayerKind::AveragePool2d | LayerKind::MaxPool2d => {
                same_quant()?;
                let (oh, ow, _, _) = g.output(ih, iw).map_err(|e| at_layer(li, e))?;
                ([oh, ow, ic], 0)
            }
            LayerKind::Reshape => {
                same_quant()?;
                let d = shape3(dst);
                if d.iter().product::<u32>() != ih * iw * ic {
                    return Err(Error::shape(format!("layer {li} reshape changes element count")));
                }
                (d, 0)
            }
            LayerKind::ArgmaxOutput => unreachable!(),
        };
        if shape3(dst) != out {
            return Err(Error::shape(format!(
                "layer {li} output declared {:?}, inferred {out:?}",
                dst.shape
            )));
        }
        if l.kind.has_weights() {
            let w = self.tensor(l.weights.unwrap())?;
            let b = self.tensor(l.bias.ok_or_else(|| missing(li, "bias"))?)?;
            if w.role != TensorRole::WeightsU8 || b.role != TensorRole::BiasI32 {
                return Err(Error::Topology(format!("layer {li} weight/bias roles are wrong")));
            }
            if b.shape != [out[2]] {
                return Err(Error::shape(format!("layer {li} bias shape {:?}", b.shape)));
            }
            let expected = src.quant.scale * w.quant.scale;
            if b.quant.scale != expected || b.quant.zero_point != 0 {
                return Err(Error::BiasScale {
                    layer: li,
                    found: b.quant.scale,
                    expected,
                });
            }
            let derived = normalize_multiplier(expected / dst.quant.scale)?;
            if l.multiplier != Some(derived) {
                return Err(Error::Format(format!(
                    "layer {li} multiplier {:?} disagrees with its scales ({derived:?})",
                    l.multiplier
                )));
            }
        } else if l.weights.is_some() || l.bias.is_some() || l.multiplier.is_some() {
            return Err(Error::Format(format!("layer {li} ({}) takes no parameters", l.kind)));
        }
        Ok(LayerShape {
            input: [ih, iw, ic],
            output: out,
            window,
        })
    }

    /// Headroom check against a session's ring.
    pub fn check_ring(&self, ring: Ring) -> Result<()> {
        if ring.bits() < self.header.ring_bits {
            return Err(Error::Headroom {
                required: self.header.ring_bits,
                available: ring.bits(),
            });
        }
        Ok(())
    }

    // ---- binary encoding ----

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(&MAGIC);
        put16(&mut w, self.header.version);
        put16(&mut w, if self.has_data() { FLAG_HAS_DATA } else { 0 });
        let h = &self.header;
        for v in [h.input_tensor, h.input_shape[0], h.input_shape[1], h.input_shape[2], h.shift_bound, h.ring_bits] {
            put32(&mut w, v);
        }
        put32(&mut w, self.tensors.len() as u32);
        for t in &self.tensors {
            put32(&mut w, t.id);
            w.push(match t.role {
                TensorRole::WeightsU8 => 0,
                TensorRole::BiasI32 => 1,
                TensorRole::Activation => 2,
            });
            w.push(t.shape.len() as u8);
            for &d in &t.shape {
                put32(&mut w, d);
            }
            w.extend_from_slice(&t.quant.scale.to_le_bytes());
            w.push(t.quant.zero_point);
        }
        put32(&mut w, self.layers.len() as u32);
        for l in &self.layers {
            w.push(l.kind.code());
            put32(&mut w, l.input);
            put32(&mut w, l.output);
            put32(&mut w, l.weights.unwrap_or(NONE));
            put32(&mut w, l.bias.unwrap_or(NONE));
            let g = &l.geometry;
            for v in [g.filter.0, g.filter.1, g.stride.0, g.stride.1] {
                put32(&mut w, v);
            }
            w.push(matches!(g.padding, Padding::Same) as u8);
            put32(&mut w, g.depth_multiplier);
            w.push(l.clamp.0);
            w.push(l.clamp.1);
            match l.multiplier {
                Some(m) => {
                    w.push(1);
                    put32(&mut w, m.m_prime);
                    put32(&mut w, m.shift);
                }
                None => {
                    w.push(0);
                    put32(&mut w, 0);
                    put32(&mut w, 0);
                }
            }
        }
        let data: Vec<u8> = self.tensors.iter().flat_map(|t| t.data.to_bytes()).collect();
        w.extend_from_slice(&(data.len() as u64).to_le_bytes());
        w.extend_from_slice(&data);
        w
    }

    /// Parses and validates SQ8 bytes.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic, not an SQ8 model".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported SQ8 version {version}")));
        }
        let flags = r.u16()?;
        let header = Header {
            version,
            input_tensor: r.u32()?,
            input_shape: [r.u32()?, r.u32()?, r.u32()?],
            shift_bound: r.u32()?,
            ring_bits: r.u32()?,
        };
        let nt = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(nt.min(1 << 16));
        for _ in 0..nt {
            let id = r.u32()?;
            let role = match r.u8()? {
                0 => TensorRole::WeightsU8,
                1 => TensorRole::BiasI32,
                2 => TensorRole::Activation,
                x => return Err(Error::Format(format!("unknown tensor role {x}"))),
            };
            let nd = r.u8()? as usize;
            let shape = (0..nd).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let scale = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
            let zero_point = r.u8()?;
            tensors.push(Tensor {
                id,
                shape,
                role,
                quant: QuantParams { scale, zero_point },
                data: TensorData::Absent,
            });
        }
        let nl = r.u32()? as usize;
        let mut layers = Vec::with_capacity(nl.min(1 << 16));
        for _ in 0..nl {
            let kind = LayerKind::from_code(r.u8()?)?;
            let input = r.u32()?;
            let output = r.u32()?;
            let opt = |v: u32| if v == NONE { None } else { Some(v) };
            let weights = opt(r.u32()?);
            let bias = opt(r.u32()?);
            let filter = (r.u32()?, r.u32()?);
            let stride = (r.u32()?, r.u32()?);
            let padding = match r.u8()? {
                0 => Padding::Valid,
                1 => Padding::Same,
                x => return Err(Error::Format(format!("unknown padding {x}"))),
            };
            let depth_multiplier = r.u32()?;
            let clamp = (r.u8()?, r.u8()?);
            let has_mult = r.u8()?;
            let (m_prime, shift) = (r.u32()?, r.u32()?);
            layers.push(LayerSpec {
                kind,
                input,
                output,
                weights,
                bias,
                geometry: Geometry {
                    filter,
                    stride,
                    padding,
                    depth_multiplier,
                },
                clamp,
                multiplier: (has_mult == 1).then_some(FixedMultiplier { m_prime, shift }),
            });
        }
        let data_len = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
        let mut data = Reader::new(r.take(data_len)?);
        if flags & FLAG_HAS_DATA != 0 {
            for t in &mut tensors {
                let n = t.len();
                t.data = match t.role {
                    TensorRole::WeightsU8 => TensorData::U8(data.take(n)?.to_vec()),
                    TensorRole::BiasI32 => TensorData::I32(
                        data.take(4 * n)?
                            .chunks_exact(4)
                            .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                            .collect(),
                    ),
                    TensorRole::Activation => TensorData::Absent,
                };
            }
        }
        if !data.is_done() || !r.is_done() {
            return Err(Error::Format("trailing bytes after model".into()));
        }
        let model = Sq8Model {
            header,
            tensors,
            layers,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    // ---- JSON debug dump ----

    /// Lossless JSON form; weight and bias bytes are base64 (biases as
    /// little-endian i32).
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut m: Sq8Model = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        for t in &mut m.tensors {
            if let (TensorRole::BiasI32, TensorData::U8(raw)) = (t.role, &t.data) {
                if raw.len() % 4 != 0 {
                    return Err(Error::Format(format!("tensor {} bias bytes not a multiple of 4", t.id)));
                }
                t.data = TensorData::I32(
                    raw.chunks_exact(4)
                        .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                );
            }
        }
        m.validate()?;
        Ok(m)
    }
}

fn shape3(t: &Tensor) -> [u32; 3] {
    [t.shape[0], t.shape[1], t.shape[2]]
}

fn missing(li: usize, what: &str) -> Error {
    Error::Topology(format!("layer {li} has no {what} tensor"))
}

fn at_layer(li: usize, e: Error) -> Error {
    match e {
        Error::Shape(m) => Error::Shape(format!("layer {li}: {m}")),
        other => other,
    }
}

pub(crate) fn put16(w: &mut Vec<u8>, v: u16) {
    w.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}

/// Bounds-checked little-endian cursor.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn is_done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Builds a validated model layer by layer, deriving output shapes, bias
/// scales, multipliers, the shift bound and the ring width.
pub struct ModelBuilder {
    tensors: Vec<Tensor>,
    layers: Vec<LayerSpec>,
    current: u32,
    input_shape: [u32; 3],
}

pub struct DotParams {
    pub weights: Vec<u8>,
    pub weight_quant: QuantParams,
    pub bias: Vec<i32>,
    pub output_quant: QuantParams,
    pub clamp: (u8, u8),
}

impl ModelBuilder {
    pub fn new(input_shape: [u32; 3], input_quant: QuantParams) -> Self {
        ModelBuilder {
            tensors: vec![Tensor {
                id: 0,
                shape: input_shape.to_vec(),
                role: TensorRole::Activation,
                quant: input_quant,
                data: TensorData::Absent,
            }],
            layers: Vec::new(),
            current: 0,
            input_shape,
        }
    }

    fn push_tensor(&mut self, shape: Vec<u32>, role: TensorRole, quant: QuantParams, data: TensorData) -> u32 {
        let id = self.tensors.len() as u32;
        self.tensors.push(Tensor {
            id,
            shape,
            role,
            quant,
            data,
        });
        id
    }

    fn current_shape(&self) -> [u32; 3] {
        shape3(&self.tensors[self.current as usize])
    }

    fn current_quant(&self) -> QuantParams {
        self.tensors[self.current as usize].quant
    }

    fn dot_layer(&mut self, kind: LayerKind, geometry: Geometry, weight_shape: Vec<u32>, out: [u32; 3], p: DotParams) -> Result<&mut Self> {
        let in_q = self.current_quant();
        let bias_q = QuantParams {
            scale: in_q.scale * p.weight_quant.scale,
            zero_point: 0,
        };
        let multiplier = normalize_multiplier(bias_q.scale / p.output_quant.scale)?;
        let w = self.push_tensor(weight_shape, TensorRole::WeightsU8, p.weight_quant, TensorData::U8(p.weights));
        let b = self.push_tensor(vec![out[2]], TensorRole::BiasI32, bias_q, TensorData::I32(p.bias));
        let o = self.push_tensor(out.to_vec(), TensorRole::Activation, p.output_quant, TensorData::Absent);
        self.layers.push(LayerSpec {
            kind,
            input: self.current,
            output: o,
            weights: Some(w),
            bias: Some(b),
            geometry,
            clamp: p.clamp,
            multiplier: Some(multiplier),
        });
        self.current = o;
        Ok(self)
    }

    /// Weights in OHWI order.
    pub fn conv2d(&mut self, out_channels: u32, geometry: Geometry, p: DotParams) -> Result<&mut Self> {
        let [h, w, c] = self.current_shape();
        let (oh, ow, _, _) = geometry.output(h, w)?;
        let ws = vec![out_channels, geometry.filter.0, geometry.filter.1, c];
        self.dot_layer(LayerKind::Conv2d, geometry, ws, [oh, ow, out_channels], p)
    }

    /// Weights as [1, kh, kw, C * multiplier].
    pub fn depthwise_conv2d(&mut self, geometry: Geometry, p: DotParams) -> Result<&mut Self> {
        let [h, w, c] = self.current_shape();
        let (oh, ow, _, _) = geometry.output(h, w)?;
        let oc = c * geometry.depth_multiplier;
        let ws = vec![1, geometry.filter.0, geometry.filter.1, oc];
        self.dot_layer(LayerKind::DepthwiseConv2d, geometry, ws, [oh, ow, oc], p)
    }

    /// Weights as [out, in] over the HWC-flattened input.
    pub fn fully_connected(&mut self, out: u32, p: DotParams) -> Result<&mut Self> {
        let [h, w, c] = self.current_shape();
        self.dot_layer(LayerKind::FullyConnected, Geometry::default(), vec![out, h * w * c], [1, 1, out], p)
    }

    fn pool(&mut self, kind: LayerKind, geometry: Geometry) -> Result<&mut Self> {
        let [h, w, c] = self.current_shape();
        let (oh, ow, _, _) = geometry.output(h, w)?;
        let q = self.current_quant();
        let o = self.push_tensor(vec![oh, ow, c], TensorRole::Activation, q, TensorData::Absent);
        self.layers.push(LayerSpec {
            kind,
            input: self.current,
            output: o,
            weights: None,
            bias: None,
            geometry,
            clamp: (0, 255),
            multiplier: None,
        });
        self.current = o;
        Ok(self)
    }

    pub fn max_pool(&mut self, geometry: Geometry) -> Result<&mut Self> {
        self.pool(LayerKind::MaxPool2d, geometry)
    }

    pub fn avg_pool(&mut self, geometry: Geometry) -> Result<&mut Self> {
        self.pool(LayerKind::AveragePool2d, geometry)
    }

    pub fn reshape(&mut self, shape: [u32; 3]) -> Result<&mut Self> {
        let q = self.current_quant();
        let o = self.push_tensor(shape.to_vec(), TensorRole::Activation, q, TensorData::Absent);
        self.layers.push(LayerSpec {
            kind: LayerKind::Reshape,
            input: self.current,
            output: o,
            weights: None,
            bias: None,
            geometry: Geometry::default(),
            clamp: (0, 255),
            multiplier: None,
        });
        self.current = o;
        Ok(self)
    }

    /// Appends ARGMAX_OUTPUT and validates.
    pub fn build(&mut self) -> Result<Sq8Model> {
        self.layers.push(LayerSpec {
            kind: LayerKind::ArgmaxOutput,
            input: self.current,
            output: self.current,
            weights: None,
            bias: None,
            geometry: Geometry::default(),
            clamp: (0, 255),
            multiplier: None,
        });
        let shift_bound = self
            .layers
            .iter()
            .filter_map(|l| l.multiplier.map(|m| m.shift))
            .max()
            .unwrap_or(MULTIPLIER_BITS);
        let mut model = Sq8Model {
            header: Header {
                version: VERSION,
                input_tensor: 0,
                input_shape: self.input_shape,
                shift_bound,
                ring_bits: 0,
            },
            tensors: self.tensors.clone(),
            layers: self.layers.clone(),
        };
        model.header.ring_bits = model.required_ring_bits()?;
        model.validate()?;
        Ok(model)
    }
}

// ---- input images ----

pub const INPUT_MAGIC: [u8; 4] = *b"SQ8I";

/// A quantized HWC input image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InputImage {
    pub shape: Vec<u32>,
    pub data: Vec<u8>,
}

impl InputImage {
    pub fn new(shape: Vec<u32>, data: Vec<u8>) -> Result<Self> {
        let n: usize = shape.iter().map(|&d| d as usize).product();
        if n != data.len() {
            return Err(Error::shape(format!("image shape {shape:?} but {} bytes", data.len())));
        }
        Ok(InputImage { shape, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = INPUT_MAGIC.to_vec();
        put32(&mut w, self.shape.len() as u32);
        for &d in &self.shape {
            put32(&mut w, d);
        }
        w.extend_from_slice(&self.data);
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != INPUT_MAGIC {
            return Err(Error::Format("bad magic, not an SQ8I image".into()));
        }
        let nd = r.u32()? as usize;
        if nd > 8 {
            return Err(Error::Format(format!("image has {nd} dimensions")));
        }
        let shape = (0..nd).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().map(|&d| d as usize).product();
        let data = r.take(n)?.to_vec();
        if !r.is_done() {
            return Err(Error::Format("trailing bytes after image".into()));
        }
        Ok(InputImage { shape, data })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn check_model(&self, model: &Sq8Model) -> Result<()> {
        if self.shape != model.header.input_shape {
            return Err(Error::shape(format!(
                "image shape {:?}, model expects {:?}",
                self.shape, model.header.input_shape
            )));
        }
        Ok(())
    }
}
