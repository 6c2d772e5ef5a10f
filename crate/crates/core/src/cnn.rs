// SPDX-License-Identifier: Apache-2.0
//! CNN inference: the PDNW1 weight container, a LeNet-style forward pass and
//! the two-stage synthesis flow.
//!
//! PDNW1 layout (all integers little-endian):
//!
//! ```text
//! magic   b"PDNW1"
//! version u16
//! meta    u32 length + UTF-8 JSON
//! count   u32
//! layer   u32 name length + UTF-8 name, kind u8 (0 conv, 1 fc, 2 tensor),
//!         ndim u8, dims u32[ndim], weights f32[prod(dims)],
//!         biases f32[dims[0]] (conv and fc only)
//! ```
//!
//! Conv weights are `[out, in, k, k]`, fc weights `[out, in]`, both
//! row-major. The flatten before the first fc layer is channel-major, then
//! row, then column.

use std::io::Read;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::{Benchmark, Stage};
use crate::config::TechnologyConfig;
use crate::error::{Error, Result};
use crate::features::{extract_window, FeatureStack, NormStats, RegionWindow};
use crate::grid::Assignment;
use crate::templates::TemplateSet;

pub const MAGIC: &[u8; 5] = b"PDNW1";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Fc,
    Tensor,
}

impl LayerKind {
    fn code(self) -> u8 {
        match self {
            LayerKind::Conv => 0,
            LayerKind::Fc => 1,
            LayerKind::Tensor => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(LayerKind::Conv),
            1 => Some(LayerKind::Fc),
            2 => Some(LayerKind::Tensor),
            _ => None,
        }
    }
}

/// One record of a PDNW1 container.
#[derive(Debug, Clone, PartialEq)]
pub struct RawLayer {
    pub name: String,
    pub kind: LayerKind,
    pub dims: Vec<usize>,
    pub weights: Vec<f32>,
    pub biases: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub version: u16,
    pub metadata: serde_json::Value,
    pub layers: Vec<RawLayer>,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated file: need {n} bytes for {what} at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| Error::Format(format!("{what}: size overflow")))?;
        let raw = self.take(bytes, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

impl Container {
    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut c = Cursor { buf, pos: 0 };
        if c.take(MAGIC.len(), "magic")? != MAGIC {
            return Err(Error::Format("bad magic, not a PDNW1 file".into()));
        }
        let version = c.u16("version")?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let mlen = c.u32("metadata length")? as usize;
        let mtext = c.take(mlen, "metadata")?;
        let metadata: serde_json::Value =
            serde_json::from_slice(mtext).map_err(|e| Error::Format(format!("metadata: {e}")))?;
        let count = c.u32("layer count")? as usize;
        let mut layers = Vec::with_capacity(count.min(1024));
        for i in 0..count {
            let nlen = c.u32("layer name length")? as usize;
            let name = std::str::from_utf8(c.take(nlen, "layer name")?)
                .map_err(|_| Error::Format(format!("layer {i}: name is not UTF-8")))?
                .to_string();
            let kind = LayerKind::from_code(c.u8("layer kind")?)
                .ok_or_else(|| Error::Format(format!("layer `{name}`: unknown kind")))?;
            let ndim = c.u8("ndim")? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(c.u32("dims")? as usize);
            }
            let n = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("layer `{name}`: size overflow")))?;
            let weights = c.f32s(n, &format!("weights of `{name}`"))?;
            let biases = match kind {
                LayerKind::Tensor => Vec::new(),
                _ => {
                    let nb = *dims
                        .first()
                        .ok_or_else(|| Error::Format(format!("layer `{name}`: no dimensions")))?;
                    c.f32s(nb, &format!("biases of `{name}`"))?
                }
            };
            layers.push(RawLayer {
                name,
                kind,
                dims,
                weights,
                biases,
            });
        }
        if c.pos != buf.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after the last layer",
                buf.len() - c.pos
            )));
        }
        Ok(Self {
            version,
            metadata,
            layers,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        let meta = serde_json::to_vec(&self.metadata).expect("metadata serializes");
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            out.extend_from_slice(&(l.name.len() as u32).to_le_bytes());
            out.extend_from_slice(l.name.as_bytes());
            out.push(l.kind.code());
            out.push(l.dims.len() as u8);
            for &d in &l.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in l.weights.iter().chain(&l.biases) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Stride, padding and the max-pool that follows one conv layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub pool: usize,
    pub pool_stride: usize,
}

/// conv1 5x5 pad 2 + pool 3/3, then three 3x3 pad 1 convs each followed by
/// a 2/2 pool.
pub fn default_conv_specs() -> Vec<ConvSpec> {
    let mut v = vec![ConvSpec {
        stride: 1,
        padding: 2,
        pool: 3,
        pool_stride: 3,
    }];
    v.extend(std::iter::repeat_n(
        ConvSpec {
            stride: 1,
            padding: 1,
            pool: 2,
            pool_stride: 2,
        },
        3,
    ));
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub stage: Stage,
    pub channels: usize,
    pub classes: usize,
    pub input_side: usize,
    pub norm: NormStats,
    #[serde(default = "default_conv_specs")]
    pub conv: Vec<ConvSpec>,
    #[serde(default)]
    pub technology: String,
    #[serde(default)]
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub name: String,
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub spec: ConvSpec,
    pub weights: Vec<f32>,
    pub biases: Vec<f32>,
}

impl ConvLayer {
    pub fn params(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcLayer {
    pub name: String,
    pub outputs: usize,
    pub inputs: usize,
    pub weights: Vec<f32>,
    pub biases: Vec<f32>,
}

impl FcLayer {
    pub fn params(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

/// A loaded, shape-checked model. Immutable after construction, so one
/// instance can serve many threads.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub meta: ModelMeta,
    pub convs: Vec<ConvLayer>,
    pub fcs: Vec<FcLayer>,
}

fn shape_err(layer: &str, msg: impl Into<String>) -> Error {
    Error::Shape {
        layer: layer.into(),
        msg: msg.into(),
    }
}

/// Spatial side after a conv and its pool. `None` if the input is too small.
pub fn conv_pool_side(side: usize, kernel: usize, spec: &ConvSpec) -> Option<usize> {
    let padded = side + 2 * spec.padding;
    if padded < kernel || spec.stride == 0 {
        return None;
    }
    let conv = (padded - kernel) / spec.stride + 1;
    if spec.pool <= 1 {
        return Some(conv);
    }
    if conv < spec.pool || spec.pool_stride == 0 {
        return None;
    }
    Some((conv - spec.pool) / spec.pool_stride + 1)
}

impl CnnModel {
    pub fn from_container(c: Container) -> Result<Self> {
        let meta: ModelMeta = serde_json::from_value(c.metadata)
            .map_err(|e| Error::Format(format!("model metadata: {e}")))?;
        let mut convs = Vec::new();
        let mut fcs = Vec::new();
        for l in c.layers {
            match l.kind {
                LayerKind::Conv => {
                    if !fcs.is_empty() {
                        return Err(shape_err(
                            &l.name,
                            "conv layer after a fully connected layer",
                        ));
                    }
                    if l.dims.len() != 4 || l.dims[2] != l.dims[3] {
                        return Err(shape_err(
                            &l.name,
                            format!("conv dims must be [out, in, k, k], got {:?}", l.dims),
                        ));
                    }
                    let spec = *meta
                        .conv
                        .get(convs.len())
                        .ok_or_else(|| shape_err(&l.name, "no stride/padding entry in metadata"))?;
                    convs.push(ConvLayer {
                        name: l.name,
                        out_channels: l.dims[0],
                        in_channels: l.dims[1],
                        kernel: l.dims[2],
                        spec,
                        weights: l.weights,
                        biases: l.biases,
                    });
                }
                LayerKind::Fc => {
                    if l.dims.len() != 2 {
                        return Err(shape_err(
                            &l.name,
                            format!("fc dims must be [out, in], got {:?}", l.dims),
                        ));
                    }
                    fcs.push(FcLayer {
                        name: l.name,
                        outputs: l.dims[0],
                        inputs: l.dims[1],
                        weights: l.weights,
                        biases: l.biases,
                    });
                }
                LayerKind::Tensor => {
                    return Err(shape_err(
                        &l.name,
                        "unexpected tensor record in a model file",
                    ));
                }
            }
        }
        let m = Self { meta, convs, fcs };
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(Container::load(path)?)
    }

    pub fn to_container(&self) -> Container {
        let mut layers = Vec::new();
        for c in &self.convs {
            layers.push(RawLayer {
                name: c.name.clone(),
                kind: LayerKind::Conv,
                dims: vec![c.out_channels, c.in_channels, c.kernel, c.kernel],
                weights: c.weights.clone(),
                biases: c.biases.clone(),
            });
        }
        for f in &self.fcs {
            layers.push(RawLayer {
                name: f.name.clone(),
                kind: LayerKind::Fc,
                dims: vec![f.outputs, f.inputs],
                weights: f.weights.clone(),
                biases: f.biases.clone(),
            });
        }
        Container {
            version: VERSION,
            metadata: serde_json::to_value(&self.meta).expect("metadata serializes"),
            layers,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    /// Check every shape against the metadata and the pool chain.
    pub fn validate(&self) -> Result<()> {
        let m = &self.meta;
        if m.channels != m.stage.channels() {
            return Err(shape_err(
                "input",
                format!(
                    "{} stage expects {} channels, metadata says {}",
                    m.stage.as_str(),
                    m.stage.channels(),
                    m.channels
                ),
            ));
        }
        if m.norm.mean.len() != m.channels
            || m.norm.std.len() != m.channels
            || m.norm.degenerate.len() != m.channels
        {
            return Err(shape_err(
                "input",
                "normalization stats do not match the channel count",
            ));
        }
        if self.convs.is_empty() || self.fcs.is_empty() {
            return Err(shape_err(
                "model",
                "need at least one conv and one fc layer",
            ));
        }
        if m.conv.len() != self.convs.len() {
            return Err(shape_err(
                "model",
                format!(
                    "{} conv specs for {} conv layers",
                    m.conv.len(),
                    self.convs.len()
                ),
            ));
        }
        let mut ch = m.channels;
        let mut side = m.input_side;
        for c in &self.convs {
            if c.in_channels != ch {
                return Err(shape_err(
                    &c.name,
                    format!(
                        "expects {} input channels, previous layer gives {ch}",
                        c.in_channels
                    ),
                ));
            }
            let nw = c.out_channels * c.in_channels * c.kernel * c.kernel;
            if c.weights.len() != nw || c.biases.len() != c.out_channels {
                return Err(shape_err(
                    &c.name,
                    "weight or bias count does not match dims",
                ));
            }
            side = conv_pool_side(side, c.kernel, &c.spec)
                .ok_or_else(|| shape_err(&c.name, format!("input side {side} is too small")))?;
            ch = c.out_channels;
        }
        let mut width = ch * side * side;
        for f in &self.fcs {
            if f.inputs != width {
                return Err(shape_err(
                    &f.name,
                    format!("expects {} inputs, previous layer gives {width}", f.inputs),
                ));
            }
            if f.weights.len() != f.outputs * f.inputs || f.biases.len() != f.outputs {
                return Err(shape_err(
                    &f.name,
                    "weight or bias count does not match dims",
                ));
            }
            width = f.outputs;
        }
        if width != m.classes {
            let last = &self.fcs.last().unwrap().name;
            return Err(shape_err(
                last,
                format!("{width} outputs but metadata lists {} classes", m.classes),
            ));
        }
        Ok(())
    }

    /// Flattened length entering the first fc layer.
    pub fn flatten_len(&self) -> usize {
        self.fcs[0].inputs
    }

    /// Parameter count per layer in file order.
    pub fn param_counts(&self) -> Vec<(String, usize)> {
        self.convs
            .iter()
            .map(|c| (c.name.clone(), c.params()))
            .chain(self.fcs.iter().map(|f| (f.name.clone(), f.params())))
            .collect()
    }

    /// Model with the given architecture and He-uniform random weights.
    #[allow(clippy::too_many_arguments)]
    pub fn random(
        stage: Stage,
        classes: usize,
        input_side: usize,
        conv_channels: &[usize],
        kernels: &[usize],
        hidden: &[usize],
        norm: NormStats,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let channels = stage.channels();
        let specs = default_conv_specs();
        if conv_channels.len() != kernels.len() || conv_channels.len() > specs.len() {
            return Err(Error::validation(
                "conv_channels",
                "one kernel per conv, at most four",
            ));
        }
        let mut fill = |n: usize, fan_in: usize| -> Vec<f32> {
            let a = (6.0 / fan_in as f64).sqrt();
            (0..n).map(|_| rng.random_range(-a..a) as f32).collect()
        };
        let mut convs = Vec::new();
        let mut ch = channels;
        let mut side = input_side;
        for (i, (&oc, &k)) in conv_channels.iter().zip(kernels).enumerate() {
            let fan = ch * k * k;
            convs.push(ConvLayer {
                name: format!("conv{}", i + 1),
                out_channels: oc,
                in_channels: ch,
                kernel: k,
                spec: specs[i],
                weights: fill(oc * fan, fan),
                biases: fill(oc, fan),
            });
            side = conv_pool_side(side, k, &specs[i])
                .ok_or_else(|| Error::validation("input_side", "too small for the pool chain"))?;
            ch = oc;
        }
        let mut width = ch * side * side;
        let mut fcs = Vec::new();
        for (i, &out) in hidden.iter().chain(std::iter::once(&classes)).enumerate() {
            fcs.push(FcLayer {
                name: format!("fc{}", i + 1),
                outputs: out,
                inputs: width,
                weights: fill(out * width, width),
                biases: fill(out, width),
            });
            width = out;
        }
        let m = Self {
            meta: ModelMeta {
                stage,
                channels,
                classes,
                input_side,
                norm,
                conv: specs[..convs.len()].to_vec(),
                technology: String::new(),
                provenance: String::new(),
            },
            convs,
            fcs,
        };
        m.validate()?;
        Ok(m)
    }

    /// Logits for one channel-major `[C, S, S]` input that is already
    /// normalized.
    pub fn forward_raw(&self, input: &[f32]) -> Result<Vec<f32>> {
        let s = self.meta.input_side;
        let expect = self.meta.channels * s * s;
        if input.len() != expect {
            return Err(shape_err(
                "input",
                format!(
                    "expected {expect} values ({}x{s}x{s}), got {}",
                    self.meta.channels,
                    input.len()
                ),
            ));
        }
        let mut x = input.to_vec();
        let mut side = s;
        for c in &self.convs {
            let (y, conv_side) = conv2d(&x, side, c);
            let (p, pside) = relu_maxpool(&y, c.out_channels, conv_side, &c.spec);
            x = p;
            side = pside;
        }
        let last = self.fcs.len() - 1;
        for (i, f) in self.fcs.iter().enumerate() {
            let mut y = dense(&x, f);
            if i != last {
                for v in &mut y {
                    *v = v.max(0.0);
                }
            }
            x = y;
        }
        Ok(x)
    }

    /// Normalize a copy of the window with the stored stats, then run it.
    pub fn forward(&self, window: &RegionWindow) -> Result<Prediction> {
        if window.channels != self.meta.channels || window.side != self.meta.input_side {
            return Err(shape_err(
                "input",
                format!(
                    "window is {}x{}x{}, model expects {}x{}x{}",
                    window.channels,
                    window.side,
                    window.side,
                    self.meta.channels,
                    self.meta.input_side,
                    self.meta.input_side
                ),
            ));
        }
        let mut w = window.clone();
        self.meta.norm.apply(&mut w)?;
        let logits = self.forward_raw(&w.data)?;
        Ok(Prediction {
            template: argmax(&logits),
            logits,
            stage: self.meta.stage,
        })
    }
}

/// Index of the largest logit; ties go to the lower (denser) id.
pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Convolution of a `[C, S, S]` input by im2col and one GEMM per row block.
fn conv2d(x: &[f32], side: usize, c: &ConvLayer) -> (Vec<f32>, usize) {
    let k = c.kernel;
    let sp = &c.spec;
    let out_side = (side + 2 * sp.padding - k) / sp.stride + 1;
    let kk = c.in_channels * k * k;
    let mut y = vec![0f32; c.out_channels * out_side * out_side];
    // keep the column buffer near a million floats
    let rows_per_block = (1 << 20) / (kk * out_side).max(1);
    let rows_per_block = rows_per_block.clamp(1, out_side);
    let mut cols = vec![0f32; kk * rows_per_block * out_side];
    let mut block = vec![0f32; c.out_channels * rows_per_block * out_side];
    let pad = sp.padding as isize;
    let mut r0 = 0;
    while r0 < out_side {
        let nr = rows_per_block.min(out_side - r0);
        let n = nr * out_side;
        for ci in 0..c.in_channels {
            let plane = &x[ci * side * side..(ci + 1) * side * side];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oy in 0..nr {
                        let iy = ((r0 + oy) * sp.stride) as isize + ky as isize - pad;
                        let d = &mut dst[oy * out_side..(oy + 1) * out_side];
                        if iy < 0 || iy >= side as isize {
                            d.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * side..(iy as usize + 1) * side];
                        for (ox, v) in d.iter_mut().enumerate() {
                            let ix = (ox * sp.stride) as isize + kx as isize - pad;
                            *v = if ix < 0 || ix >= side as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
        unsafe {
            matrixmultiply::sgemm(
                c.out_channels,
                kk,
                n,
                1.0,
                c.weights.as_ptr(),
                kk as isize,
                1,
                cols.as_ptr(),
                n as isize,
                1,
                0.0,
                block.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        for o in 0..c.out_channels {
            let b = c.biases[o];
            let dst = &mut y[o * out_side * out_side + r0 * out_side..][..n];
            for (d, s) in dst.iter_mut().zip(&block[o * n..(o + 1) * n]) {
                *d = s + b;
            }
        }
        r0 += nr;
    }
    (y, out_side)
}

fn relu_maxpool(y: &[f32], channels: usize, side: usize, sp: &ConvSpec) -> (Vec<f32>, usize) {
    if sp.pool <= 1 {
        return (y.iter().map(|v| v.max(0.0)).collect(), side);
    }
    let out = (side - sp.pool) / sp.pool_stride + 1;
    let mut p = vec![0f32; channels * out * out];
    for c in 0..channels {
        let plane = &y[c * side * side..(c + 1) * side * side];
        for oy in 0..out {
            for ox in 0..out {
                // relu then max equals max then relu
                let mut m = 0f32;
                for dy in 0..sp.pool {
                    let row = &plane[(oy * sp.pool_stride + dy) * side..];
                    for dx in 0..sp.pool {
                        m = m.max(row[ox * sp.pool_stride + dx]);
                    }
                }
                p[(c * out + oy) * out + ox] = m;
            }
        }
    }
    (p, out)
}

fn dense(x: &[f32], f: &FcLayer) -> Vec<f32> {
    let mut y = f.biases.clone();
    unsafe {
        matrixmultiply::sgemm(
            f.outputs,
            f.inputs,
            1,
            1.0,
            f.weights.as_ptr(),
            f.inputs as isize,
            1,
            x.as_ptr(),
            1,
            1,
            1.0,
            y.as_mut_ptr(),
            1,
            1,
        );
    }
    y
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f32>,
    pub template: usize,
    pub stage: Stage,
}

/// Forward-pass fixtures: normalized inputs and their golden logits.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSet {
    pub inputs: Vec<Vec<f32>>,
    pub logits: Vec<Vec<f32>>,
}

impl FixtureSet {
    /// Read a PDNW1 bundle of `input/{i}` and `logits/{i}` tensors.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let find = |name: &str| -> Result<&RawLayer> {
            c.layers
                .iter()
                .find(|l| l.name == name && l.kind == LayerKind::Tensor)
                .ok_or_else(|| Error::Format(format!("fixture bundle has no tensor `{name}`")))
        };
        let n = c
            .layers
            .iter()
            .filter(|l| l.name.starts_with("input/"))
            .count();
        let mut inputs = Vec::with_capacity(n);
        let mut logits = Vec::with_capacity(n);
        for i in 0..n {
            inputs.push(find(&format!("input/{i}"))?.weights.clone());
            logits.push(find(&format!("logits/{i}"))?.weights.clone());
        }
        Ok(Self { inputs, logits })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Largest absolute logit difference against the model.
    pub fn max_abs_error(&self, model: &CnnModel) -> Result<f32> {
        let mut worst = 0f32;
        for (x, gold) in self.inputs.iter().zip(&self.logits) {
            let y = model.forward_raw(x)?;
            if y.len() != gold.len() {
                return Err(shape_err(
                    "fc2",
                    "fixture logit count differs from the model",
                ));
            }
            for (a, b) in y.iter().zip(gold) {
                worst = worst.max((a - b).abs());
            }
        }
        Ok(worst)
    }
}

/// Predict every region of a stack. Regions are independent and run in
/// parallel; the result is in row-major region order.
pub fn predict_regions(
    model: &CnnModel,
    stack: &FeatureStack,
    cfg: &TechnologyConfig,
    rows: usize,
    cols: usize,
) -> Result<Vec<Prediction>> {
    (0..rows * cols)
        .into_par_iter()
        .map(|i| model.forward(&extract_window(stack, cfg, i / cols, i % cols)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub floorplan: Assignment,
    pub placement: Assignment,
    pub floorplan_predictions: Vec<Prediction>,
    pub placement_predictions: Vec<Prediction>,
    pub elapsed: Duration,
}

fn check_model(
    model: &CnnModel,
    stage: Stage,
    cfg: &TechnologyConfig,
    tset: &TemplateSet,
) -> Result<()> {
    if model.meta.stage != stage {
        return Err(Error::validation(
            "model",
            format!(
                "expected a {} model, got {}",
                stage.as_str(),
                model.meta.stage.as_str()
            ),
        ));
    }
    if model.meta.classes != tset.len() {
        return Err(Error::LabelMismatch(format!(
            "model has {} classes, template set has {}",
            model.meta.classes,
            tset.len()
        )));
    }
    if model.meta.input_side != cfg.window_px() {
        return Err(shape_err(
            "input",
            format!(
                "model input side {} differs from the technology window {}",
                model.meta.input_side,
                cfg.window_px()
            ),
        ));
    }
    Ok(())
}

/// Two-stage inference: floorplan ids from coarse maps, then placement ids
/// from fine maps plus the floorplan template plane.
pub fn synthesize(
    bench: &Benchmark,
    cfg: &TechnologyConfig,
    tset: &TemplateSet,
    fp_model: &CnnModel,
    pl_model: &CnnModel,
) -> Result<Synthesis> {
    let start = Instant::now();
    check_model(fp_model, Stage::Floorplan, cfg, tset)?;
    check_model(pl_model, Stage::Placement, cfg, tset)?;
    let (rows, cols) = (bench.rows(), bench.cols());
    let to_assignment = |p: &[Prediction]| Assignment {
        rows,
        cols,
        values: p.iter().map(|p| p.template).collect(),
    };
    let fp_stack = bench.feature_stack(cfg, Stage::Floorplan, None)?;
    let fp_pred = predict_regions(fp_model, &fp_stack, cfg, rows, cols)?;
    let floorplan = to_assignment(&fp_pred);
    let pl_stack = bench.feature_stack(cfg, Stage::Placement, Some((&floorplan, tset.len())))?;
    let pl_pred = predict_regions(pl_model, &pl_stack, cfg, rows, cols)?;
    let placement = to_assignment(&pl_pred);
    Ok(Synthesis {
        floorplan,
        placement,
        floorplan_predictions: fp_pred,
        placement_predictions: pl_pred,
        elapsed: start.elapsed(),
    })
}
