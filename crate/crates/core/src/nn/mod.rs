//! Forward inference for the grasp identification network.
//!
//! Eight 3x3 convolution layers (each followed by batch normalization and
//! ReLU), global average pooling, two 1x1 convolutions and a softmax. Dropout
//! is a training-time operation and does not appear here.

mod net;
mod weights;

pub use net::{forward, GraspNet, GRASPABLE_CLASS};
pub use weights::{
    load_weights, save_weights, Activation, BatchNorm, LayerKind, LayerRecord, WeightsBundle,
    FORMAT_VERSION, MAGIC,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batch-norm variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("weights do not match the network: {0}")]
    WeightMismatch(String),
    #[error("bad magic bytes {0:?}, expected \"GNWB\"")]
    BadMagic([u8; 4]),
    #[error("unsupported weight format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("weight file truncated at byte {offset}")]
    TruncatedFile { offset: usize },
    #[error("{0} trailing bytes after the last layer record")]
    TrailingData(usize),
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Activations in height x width x channels layout, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: (usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self, NnError> {
        if data.len() != height * width * channels {
            return Err(NnError::ShapeMismatch(format!(
                "{} values for shape {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            shape: (height, width, channels),
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            shape: (height, width, channels),
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.0
    }

    pub fn width(&self) -> usize {
        self.shape.1
    }

    pub fn channels(&self) -> usize {
        self.shape.2
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.shape.1 + col) * self.shape.2 + ch]
    }
}

impl From<&crate::imaging::Patch> for Tensor {
    fn from(p: &crate::imaging::Patch) -> Self {
        let r = p.raster();
        Tensor {
            shape: (r.height(), r.width(), r.channels()),
            data: r.data().to_vec(),
        }
    }
}

/// Convolution filters laid out `[out][kh][kw][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub in_channels: usize,
    pub weights: Vec<f64>,
}

impl KernelBank {
    pub fn new(
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        in_channels: usize,
        weights: Vec<f64>,
    ) -> Result<Self, NnError> {
        if weights.len() != out_channels * kernel_h * kernel_w * in_channels {
            return Err(NnError::ShapeMismatch(format!(
                "{} kernel values for {out_channels}x{kernel_h}x{kernel_w}x{in_channels}",
                weights.len()
            )));
        }
        Ok(Self {
            out_channels,
            kernel_h,
            kernel_w,
            in_channels,
            weights,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Outputs only where the kernel fully overlaps the input.
    Valid,
    /// Zero padding so the output size is `ceil(in / stride)`; the extra
    /// padding goes after the input when the total is odd.
    Same,
}

fn out_extent(input: usize, kernel: usize, stride: usize, padding: Padding) -> (usize, usize) {
    match padding {
        Padding::Valid => ((input - kernel) / stride + 1, 0),
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            (out, total / 2)
        }
    }
}

/// 2-D cross-correlation with optional per-output-channel bias.
pub fn conv2d(
    x: &Tensor,
    kernels: &KernelBank,
    bias: Option<&[f64]>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor, NnError> {
    let (ih, iw, ic) = x.shape();
    if stride == 0 {
        return Err(NnError::ShapeMismatch("stride must be positive".into()));
    }
    if ic != kernels.in_channels {
        return Err(NnError::ShapeMismatch(format!(
            "input has {ic} channels, kernels expect {}",
            kernels.in_channels
        )));
    }
    if padding == Padding::Valid && (kernels.kernel_h > ih || kernels.kernel_w > iw) {
        return Err(NnError::ShapeMismatch(format!(
            "{}x{} kernel larger than {ih}x{iw} input",
            kernels.kernel_h, kernels.kernel_w
        )));
    }
    if ih == 0 || iw == 0 {
        return Err(NnError::ShapeMismatch("empty input".into()));
    }
    if let Some(b) = bias {
        if b.len() != kernels.out_channels {
            return Err(NnError::ShapeMismatch(format!(
                "{} biases for {} output channels",
                b.len(),
                kernels.out_channels
            )));
        }
    }
    let (oh, pad_top) = out_extent(ih, kernels.kernel_h, stride, padding);
    let (ow, pad_left) = out_extent(iw, kernels.kernel_w, stride, padding);
    let oc = kernels.out_channels;
    let per_out = kernels.kernel_h * kernels.kernel_w * ic;
    let mut out = vec![0.0; oh * ow * oc];
    let mut acc = vec![0.0; oc];
    for orow in 0..oh {
        for ocol in 0..ow {
            match bias {
                Some(b) => acc.copy_from_slice(b),
                None => acc.iter_mut().for_each(|a| *a = 0.0),
            }
            for ky in 0..kernels.kernel_h {
                let irow = (orow * stride + ky) as isize - pad_top as isize;
                if irow < 0 || irow >= ih as isize {
                    continue;
                }
                for kx in 0..kernels.kernel_w {
                    let icol = (ocol * stride + kx) as isize - pad_left as isize;
                    if icol < 0 || icol >= iw as isize {
                        continue;
                    }
                    let start = (irow as usize * iw + icol as usize) * ic;
                    let input = &x.data[start..start + ic];
                    let koff = (ky * kernels.kernel_w + kx) * ic;
                    for (o, a) in acc.iter_mut().enumerate() {
                        let k = &kernels.weights[o * per_out + koff..o * per_out + koff + ic];
                        *a += input.iter().zip(k).map(|(v, w)| v * w).sum::<f64>();
                    }
                }
            }
            let base = (orow * ow + ocol) * oc;
            out[base..base + oc].copy_from_slice(&acc);
        }
    }
    Ok(Tensor {
        shape: (oh, ow, oc),
        data: out,
    })
}

/// Inference-mode batch normalization, per channel.
pub fn batchnorm_infer(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
    eps: f64,
) -> Result<Tensor, NnError> {
    let c = x.channels();
    if [gamma.len(), beta.len(), mean.len(), var.len()].iter().any(|&n| n != c) {
        return Err(NnError::ShapeMismatch(format!(
            "batch-norm parameters do not match {c} channels"
        )));
    }
    if let Some(&v) = var.iter().find(|&&v| !(v > 0.0)) {
        return Err(NnError::NonPositiveVariance(v));
    }
    let scale: Vec<f64> = (0..c).map(|i| gamma[i] / (var[i] + eps).sqrt()).collect();
    let mut data = x.data.clone();
    for px in data.chunks_exact_mut(c) {
        for (i, v) in px.iter_mut().enumerate() {
            *v = scale[i] * (*v - mean[i]) + beta[i];
        }
    }
    Ok(Tensor { shape: x.shape, data })
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape,
        data: x.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

/// Global average pooling: one spatial mean per channel.
pub fn gap(x: &Tensor) -> Vec<f64> {
    let c = x.channels();
    let n = (x.height() * x.width()) as f64;
    let mut sums = vec![0.0; c];
    for px in x.data.chunks_exact(c) {
        for (s, v) in sums.iter_mut().zip(px) {
            *s += v;
        }
    }
    sums.into_iter().map(|s| s / n).collect()
}

/// Numerically stable softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
