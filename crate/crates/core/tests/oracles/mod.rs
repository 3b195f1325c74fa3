//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls into the library's numeric code.
#![allow(dead_code)]

use graspswarm::nn::{LayerKind, WeightsBundle};
use graspswarm::GraspRect;

/// The interval `{t : |a + b t| <= r}` as `(lo, hi)`, or `None` if empty. Degenerate `b` means the constraint is all-or-nothing.
fn slab(a: f64, b: f64, r: f64) -> Option<(f64, f64)> {
    if b.abs() < 1e-15 {
        return (a.abs() <= r).then_some((f64::NEG_INFINITY, f64::INFINITY));
    }
    let t0 = (-r - a) / b;
    let t1 = (r - a) / b;
    Some((t0.min(t1), t0.max(t1)))
}

/// The x-interval of row `y` covered by the rectangle, from its two slab
/// constraints.
fn row_span(r: &GraspRect, y: f64) -> Option<(f64, f64)> {
    let t = r.theta.to_radians();
    let (c, s) = (t.cos(), t.sin());
    let dy = y - r.y;
    // along-axis coordinate: (x - cx) c + dy s; across: -(x - cx) s + dy c
    let (a0, a1) = slab(dy * s - r.x * c, c, r.w / 2.0)?;
    let (b0, b1) = slab(dy * c + r.x * s, -s, r.h / 2.0)?;
    let lo = a0.max(b0);
    let hi = a1.min(b1);
    (lo <= hi).then_some((lo, hi))
}

/// Lattice points `origin + k * step` inside `[lo, hi]`.
fn lattice_count(lo: f64, hi: f64, origin: f64, step: f64) -> f64 {
    let first = ((lo - origin) / step).ceil();
    let last = ((hi - origin) / step).floor();
    (last - first + 1.0).max(0.0)
}

/// Intersection over union estimated by counting sample points on a square
/// lattice of the given spacing.
pub fn raster_iou(a: &GraspRect, b: &GraspRect, spacing: f64) -> f64 {
    let ext = |r: &GraspRect| (r.w.hypot(r.h)) / 2.0;
    let y_lo = (a.y - ext(a)).min(b.y - ext(b));
    let y_hi = (a.y + ext(a)).max(b.y + ext(b));
    let (mut na, mut nb, mut nab) = (0.0, 0.0, 0.0);
    let mut y = y_lo + spacing / 2.0;
    while y < y_hi {
        let sa = row_span(a, y);
        let sb = row_span(b, y);
        if let Some((l, h)) = sa {
            na += lattice_count(l, h, 0.0, spacing);
        }
        if let Some((l, h)) = sb {
            nb += lattice_count(l, h, 0.0, spacing);
        }
        if let (Some((l1, h1)), Some((l2, h2))) = (sa, sb) {
            let (l, h) = (l1.max(l2), h1.min(h2));
            if l <= h {
                nab += lattice_count(l, h, 0.0, spacing);
            }
        }
        y += spacing;
    }
    let union = na + nb - nab;
    if union == 0.0 {
        0.0
    } else {
        nab / union
    }
}

/// Smallest `|a - b + 180 k|` over integers k in a generous range.
pub fn angle_diff_brute(a: f64, b: f64) -> f64 {
    let shift = ((a - b) / 180.0).round();
    (-3..=3)
        .map(|k| (a - b - 180.0 * (shift + k as f64)).abs())
        .fold(f64::INFINITY, f64::min)
}

/// HWC tensor as nested vectors.
pub type Grid = Vec<Vec<Vec<f64>>>;

pub fn to_grid(h: usize, w: usize, c: usize, flat: &[f64]) -> Grid {
    (0..h)
        .map(|i| (0..w).map(|j| (0..c).map(|k| flat[(i * w + j) * c + k]).collect()).collect())
        .collect()
}

pub fn flatten(g: &Grid) -> Vec<f64> {
    g.iter().flatten().flatten().copied().collect()
}

/// Explicitly zero-padded direct convolution. `kernel` is `[out][kh][kw][in]`.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv(
    x: &Grid,
    kernel: &[f64],
    bias: &[f64],
    out_c: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: (usize, usize, usize, usize),
) -> Grid {
    let (ih, iw, ic) = (x.len(), x[0].len(), x[0][0].len());
    let (pt, pb, pl, pr) = pad;
    let ph = ih + pt + pb;
    let pw = iw + pl + pr;
    let mut p = vec![vec![vec![0.0; ic]; pw]; ph];
    for i in 0..ih {
        for j in 0..iw {
            p[i + pt][j + pl] = x[i][j].clone();
        }
    }
    let oh = (ph - kh) / stride + 1;
    let ow = (pw - kw) / stride + 1;
    let mut y = vec![vec![vec![0.0; out_c]; ow]; oh];
    for oi in 0..oh {
        for oj in 0..ow {
            for o in 0..out_c {
                let mut s = bias[o];
                for a in 0..kh {
                    for b in 0..kw {
                        for c in 0..ic {
                            s += p[oi * stride + a][oj * stride + b][c] * kernel[((o * kh + a) * kw + b) * ic + c];
                        }
                    }
                }
                y[oi][oj][o] = s;
            }
        }
    }
    y
}

/// `(total_before, total_after)` zero padding that keeps `ceil(n / stride)`
/// outputs, placing the odd pixel after.
pub fn same_pad(n: usize, k: usize, stride: usize) -> (usize, usize) {
    let out = (n + stride - 1) / stride;
    let need = ((out - 1) * stride + k).saturating_sub(n);
    (need / 2, need - need / 2)
}

pub fn naive_bn(x: &Grid, gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64], eps: f64) -> Grid {
    x.iter()
        .map(|row| {
            row.iter()
                .map(|px| {
                    px.iter()
                        .enumerate()
                        .map(|(c, &v)| (v - mean[c]) / (var[c] + eps).sqrt() * gamma[c] + beta[c])
                        .collect()
                })
                .collect()
        })
        .collect()
}

pub fn naive_gap(x: &Grid) -> Vec<f64> {
    let c = x[0][0].len();
    let n = (x.len() * x[0].len()) as f64;
    (0..c)
        .map(|k| x.iter().flatten().map(|px| px[k]).sum::<f64>() / n)
        .collect()
}

/// Softmax computed as `1 / sum_j exp(x_j - x_i)`.
pub fn naive_softmax(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&xi| 1.0 / x.iter().map(|&xj| (xj - xi).exp()).sum::<f64>())
        .collect()
}

fn f64s(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Straight-line forward pass of the ten-layer network on a 24x24x3 HWC
/// patch, read directly from the layer records. Returns class probabilities.
pub fn reference_forward(patch: &[f64], wts: &WeightsBundle) -> [f64; 2] {
    assert_eq!(patch.len(), 24 * 24 * 3);
    let eps = wts.bn_eps as f64;
    let mut x = to_grid(24, 24, 3, patch);
    for layer in &wts.layers[..8] {
        let (h, w) = (x.len(), x[0].len());
        let k = layer.kernel_h as usize;
        let s = layer.stride as usize;
        let pad = if h < k || w < k {
            let (t, b) = same_pad(h, k, s);
            let (l, r) = same_pad(w, k, s);
            (t, b, l, r)
        } else {
            (0, 0, 0, 0)
        };
        x = naive_conv(
            &x,
            &f64s(&layer.kernel),
            &f64s(&layer.bias),
            layer.out_channels as usize,
            k,
            layer.kernel_w as usize,
            s,
            pad,
        );
        assert_eq!(layer.kind, LayerKind::ConvBn);
        let bn = layer.batch_norm.as_ref().unwrap();
        x = naive_bn(
            &x,
            &f64s(&bn.gamma),
            &f64s(&bn.beta),
            &f64s(&bn.running_mean),
            &f64s(&bn.running_var),
            eps,
        );
        for px in x.iter_mut().flatten().flatten() {
            *px = px.max(0.0);
        }
    }
    let pooled = naive_gap(&x);
    let matvec = |v: &[f64], layer: &graspswarm::nn::LayerRecord| -> Vec<f64> {
        let n_in = layer.in_channels as usize;
        (0..layer.out_channels as usize)
            .map(|o| {
                layer.bias[o] as f64
                    + (0..n_in).map(|i| layer.kernel[o * n_in + i] as f64 * v[i]).sum::<f64>()
            })
            .collect()
    };
    let hidden = matvec(&pooled, &wts.layers[8]);
    let logits = matvec(&hidden, &wts.layers[9]);
    let p1 = 1.0 / (1.0 + (logits[0] - logits[1]).exp());
    [1.0 - p1, p1]
}

/// Independent GNWB writer, used to check serialization bit for bit.
pub fn reference_gnwb(wts: &WeightsBundle) -> Vec<u8> {
    let mut out = b"GNWB".to_vec();
    let u = |out: &mut Vec<u8>, v: u32| out.extend(v.to_le_bytes());
    u(&mut out, 1);
    u(&mut out, wts.layers.len() as u32);
    out.extend(wts.bn_eps.to_le_bytes());
    for l in &wts.layers {
        let kind = if l.batch_norm.is_some() { 1 } else { 2 };
        let act = match l.activation {
            graspswarm::nn::Activation::None => 0,
            graspswarm::nn::Activation::Relu => 1,
        };
        for v in [kind, act, l.stride, l.out_channels, l.kernel_h, l.kernel_w, l.in_channels] {
            u(&mut out, v);
        }
        let mut arrays = vec![&l.kernel, &l.bias];
        if let Some(bn) = &l.batch_norm {
            arrays.extend([&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var]);
        }
        for a in arrays {
            for v in a {
                out.extend(v.to_le_bytes());
            }
        }
    }
    out
}
