//! The `GNWB` weight file.
//!
//! All integers are `u32` and all reals `f32`, little-endian.
//!
//! ```text
//! header   magic "GNWB" (4 bytes)
//!          version      u32   currently 1
//!          layer_count  u32
//!          bn_eps       f32
//! record   kind         u32   1 = conv + batch norm, 2 = plain conv
//!          activation   u32   0 = none, 1 = relu
//!          stride       u32
//!          out_channels u32
//!          kernel_h     u32
//!          kernel_w     u32
//!          in_channels  u32
//!          kernel       f32 x out*kh*kw*in   layout [out][kh][kw][in]
//!          bias         f32 x out
//!          (kind 1 only) gamma, beta, running_mean, running_var, f32 x out each
//! ```
//!
//! The network expects ten records: eight 3x3 conv + batch-norm + relu layers
//! with (in, out, stride) of (3, 32, 1), (32, 64, 2), (64, 64, 2), (64, 64, 2),
//! (64, 128, 2), then (128, 128, 2) three times; a 1x1 ascend conv from 128 to
//! any width; a 1x1 reduce conv from that width to 2.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::NnError;

pub const MAGIC: [u8; 4] = *b"GNWB";
pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_BN_EPS: f32 = 1e-5;

/// (in, out, stride) of the eight 3x3 layers.
pub(crate) const CONV_PLAN: [(usize, usize, usize); 8] = [
    (3, 32, 1),
    (32, 64, 2),
    (64, 64, 2),
    (64, 64, 2),
    (64, 128, 2),
    (128, 128, 2),
    (128, 128, 2),
    (128, 128, 2),
];
pub const DEFAULT_ASCEND_WIDTH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    ConvBn,
    Conv,
}

impl LayerKind {
    fn tag(self) -> u32 {
        match self {
            LayerKind::ConvBn => 1,
            LayerKind::Conv => 2,
        }
    }

    fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            1 => Some(LayerKind::ConvBn),
            2 => Some(LayerKind::Conv),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
}

impl Activation {
    fn tag(self) -> u32 {
        match self {
            Activation::None => 0,
            Activation::Relu => 1,
        }
    }

    fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(Activation::None),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    pub kind: LayerKind,
    pub activation: Activation,
    pub stride: u32,
    pub out_channels: u32,
    pub kernel_h: u32,
    pub kernel_w: u32,
    pub in_channels: u32,
    pub kernel: Vec<f32>,
    pub bias: Vec<f32>,
    pub batch_norm: Option<BatchNorm>,
}

impl LayerRecord {
    pub fn kernel_len(&self) -> usize {
        (self.out_channels * self.kernel_h * self.kernel_w * self.in_channels) as usize
    }

    pub fn parameter_count(&self) -> usize {
        self.kernel_len() + self.bias.len() + self.batch_norm.as_ref().map_or(0, |_| 4 * self.out_channels as usize)
    }

    fn check_lengths(&self, index: usize) -> Result<(), NnError> {
        let out = self.out_channels as usize;
        let bad = |what: &str, got: usize, want: usize| {
            NnError::ArchitectureMismatch(format!("layer {index}: {what} has {got} values, expected {want}"))
        };
        if self.kernel.len() != self.kernel_len() {
            return Err(bad("kernel", self.kernel.len(), self.kernel_len()));
        }
        if self.bias.len() != out {
            return Err(bad("bias", self.bias.len(), out));
        }
        match (&self.kind, &self.batch_norm) {
            (LayerKind::ConvBn, Some(bn)) => {
                for (name, v) in [
                    ("gamma", &bn.gamma),
                    ("beta", &bn.beta),
                    ("running_mean", &bn.running_mean),
                    ("running_var", &bn.running_var),
                ] {
                    if v.len() != out {
                        return Err(bad(name, v.len(), out));
                    }
                }
                if let Some(&v) = bn.running_var.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
                    return Err(NnError::NonPositiveVariance(v as f64));
                }
            }
            (LayerKind::Conv, None) => {}
            _ => {
                return Err(NnError::ArchitectureMismatch(format!(
                    "layer {index}: batch-norm parameters inconsistent with layer kind"
                )))
            }
        }
        Ok(())
    }
}

/// Serialized parameters of the identification network.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightsBundle {
    pub bn_eps: f32,
    pub layers: Vec<LayerRecord>,
}

impl WeightsBundle {
    /// Checks the record sequence against the fixed layer plan.
    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.bn_eps >= 0.0 && self.bn_eps.is_finite()) {
            return Err(NnError::ArchitectureMismatch(format!("bad batch-norm eps {}", self.bn_eps)));
        }
        if self.layers.len() != CONV_PLAN.len() + 2 {
            return Err(NnError::ArchitectureMismatch(format!(
                "{} layers, expected {}",
                self.layers.len(),
                CONV_PLAN.len() + 2
            )));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.check_lengths(i)?;
        }
        let mismatch = |i: usize, msg: String| NnError::ArchitectureMismatch(format!("layer {i}: {msg}"));
        for (i, (&(cin, cout, stride), l)) in CONV_PLAN.iter().zip(&self.layers).enumerate() {
            let got = (
                l.kind,
                l.activation,
                l.in_channels as usize,
                l.out_channels as usize,
                l.stride as usize,
                l.kernel_h,
                l.kernel_w,
            );
            let want = (LayerKind::ConvBn, Activation::Relu, cin, cout, stride, 3, 3);
            if got != want {
                return Err(mismatch(i, format!("got {got:?}, expected {want:?}")));
            }
        }
        let ascend = &self.layers[8];
        let reduce = &self.layers[9];
        for (i, l) in [(8, ascend), (9, reduce)] {
            if l.kind != LayerKind::Conv || l.kernel_h != 1 || l.kernel_w != 1 || l.stride != 1 {
                return Err(mismatch(i, "head layers must be plain 1x1 stride-1 convolutions".into()));
            }
        }
        if ascend.in_channels != 128 {
            return Err(mismatch(8, format!("ascend input {} != 128", ascend.in_channels)));
        }
        if reduce.in_channels != ascend.out_channels || reduce.out_channels != 2 {
            return Err(mismatch(
                9,
                format!(
                    "reduce is {}->{}, expected {}->2",
                    reduce.in_channels, reduce.out_channels, ascend.out_channels
                ),
            ));
        }
        Ok(())
    }

    pub fn ascend_width(&self) -> usize {
        self.layers.get(8).map_or(0, |l| l.out_channels as usize)
    }

    /// A bundle of randomly initialized parameters (He-scaled kernels,
    /// batch-norm statistics near identity), deterministic in `seed`.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(10);
        for &(cin, cout, stride) in &CONV_PLAN {
            let fan_in = (9 * cin) as f32;
            let bound = (6.0 / fan_in).sqrt();
            layers.push(LayerRecord {
                kind: LayerKind::ConvBn,
                activation: Activation::Relu,
                stride: stride as u32,
                out_channels: cout as u32,
                kernel_h: 3,
                kernel_w: 3,
                in_channels: cin as u32,
                kernel: (0..cout * 9 * cin).map(|_| rng.random_range(-bound..bound)).collect(),
                bias: (0..cout).map(|_| rng.random_range(-0.05..0.05)).collect(),
                batch_norm: Some(BatchNorm {
                    gamma: (0..cout).map(|_| rng.random_range(0.8..1.2)).collect(),
                    beta: (0..cout).map(|_| rng.random_range(-0.1..0.1)).collect(),
                    running_mean: (0..cout).map(|_| rng.random_range(-0.1..0.1)).collect(),
                    running_var: (0..cout).map(|_| rng.random_range(0.5..1.5)).collect(),
                }),
            });
        }
        for (cin, cout) in [(128, DEFAULT_ASCEND_WIDTH), (DEFAULT_ASCEND_WIDTH, 2)] {
            let bound = (6.0 / cin as f32).sqrt();
            layers.push(LayerRecord {
                kind: LayerKind::Conv,
                activation: Activation::None,
                stride: 1,
                out_channels: cout as u32,
                kernel_h: 1,
                kernel_w: 1,
                in_channels: cin as u32,
                kernel: (0..cout * cin).map(|_| rng.random_range(-bound..bound)).collect(),
                bias: (0..cout).map(|_| rng.random_range(-0.05..0.05)).collect(),
                batch_norm: None,
            });
        }
        Self {
            bn_eps: DEFAULT_BN_EPS,
            layers,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_u32(&mut out, self.layers.len() as u32);
        out.extend_from_slice(&self.bn_eps.to_le_bytes());
        for l in &self.layers {
            for v in [
                l.kind.tag(),
                l.activation.tag(),
                l.stride,
                l.out_channels,
                l.kernel_h,
                l.kernel_w,
                l.in_channels,
            ] {
                put_u32(&mut out, v);
            }
            put_f32s(&mut out, &l.kernel);
            put_f32s(&mut out, &l.bias);
            if let Some(bn) = &l.batch_norm {
                put_f32s(&mut out, &bn.gamma);
                put_f32s(&mut out, &bn.beta);
                put_f32s(&mut out, &bn.running_mean);
                put_f32s(&mut out, &bn.running_var);
            }
        }
        out
    }

    /// Parses and validates a weight file image.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if magic != MAGIC {
            return Err(NnError::BadMagic(magic));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(NnError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let count = r.u32()? as usize;
        if count > 64 {
            return Err(NnError::ArchitectureMismatch(format!("implausible layer count {count}")));
        }
        let bn_eps = r.f32()?;
        let mut layers = Vec::with_capacity(count);
        for index in 0..count {
            let kind_tag = r.u32()?;
            let kind = LayerKind::from_tag(kind_tag).ok_or_else(|| {
                NnError::ArchitectureMismatch(format!("layer {index}: unknown kind {kind_tag}"))
            })?;
            let act_tag = r.u32()?;
            let activation = Activation::from_tag(act_tag).ok_or_else(|| {
                NnError::ArchitectureMismatch(format!("layer {index}: unknown activation {act_tag}"))
            })?;
            let stride = r.u32()?;
            let out_channels = r.u32()?;
            let kernel_h = r.u32()?;
            let kernel_w = r.u32()?;
            let in_channels = r.u32()?;
            let kernel_len = [out_channels, kernel_h, kernel_w, in_channels]
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
                .filter(|&n| n <= bytes.len())
                .ok_or(NnError::TruncatedFile { offset: bytes.len() })?;
            let out = out_channels as usize;
            let kernel = r.f32s(kernel_len)?;
            let bias = r.f32s(out)?;
            let batch_norm = match kind {
                LayerKind::ConvBn => Some(BatchNorm {
                    gamma: r.f32s(out)?,
                    beta: r.f32s(out)?,
                    running_mean: r.f32s(out)?,
                    running_var: r.f32s(out)?,
                }),
                LayerKind::Conv => None,
            };
            layers.push(LayerRecord {
                kind,
                activation,
                stride,
                out_channels,
                kernel_h,
                kernel_w,
                in_channels,
                kernel,
                bias,
                batch_norm,
            });
        }
        if r.pos != bytes.len() {
            return Err(NnError::TrailingData(bytes.len() - r.pos));
        }
        let bundle = Self { bn_eps, layers };
        bundle.validate()?;
        Ok(bundle)
    }
}

pub fn save_weights(wts: &WeightsBundle, path: impl AsRef<Path>) -> Result<(), NnError> {
    std::fs::write(path, wts.to_bytes())?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightsBundle, NnError> {
    WeightsBundle::from_bytes(&std::fs::read(path)?)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, vs: &[f32]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(NnError::TruncatedFile { offset: self.bytes.len() })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, NnError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, NnError> {
        let raw = self.take(n.checked_mul(4).ok_or(NnError::TruncatedFile { offset: self.bytes.len() })?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
