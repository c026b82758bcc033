//! Plain numeric kernels shared by the autograd ops and the inference path.
//!
//! Every reduction here runs in a fixed serial order so results are
//! bit-reproducible.

use super::Tensor;
use crate::attention::AttentionMask;
use crate::{Error, Result};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// Dot product with four fixed accumulation lanes.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let mut acc = [0.0f64; 4];
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `c += a · b` for `a[m×k]`, `b[k×n]` given as `(row, col)` element
/// strides, and `c[m×n]` with row stride `ldc`.
#[allow(clippy::too_many_arguments)]
pub fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    sa: (usize, usize),
    b: &[f64],
    sb: (usize, usize),
    c: &mut [f64],
    ldc: usize,
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!(a.len() > (m - 1) * sa.0 + (k - 1) * sa.1, "gemm: lhs too short");
    assert!(b.len() > (k - 1) * sb.0 + (n - 1) * sb.1, "gemm: rhs too short");
    assert!(ldc >= n && c.len() >= (m - 1) * ldc + n, "gemm: output too short");
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            1.0,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn mm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    gemm_acc(m, k, n, a, (k, 1), b, (n, 1), c, n);
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
pub fn mm_abt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    gemm_acc(m, k, n, a, (k, 1), b, (1, k), c, n);
}

/// `c[m×n] += a[k×m]ᵀ · b[k×n]`
pub fn mm_atb_acc(a: &[f64], b: &[f64], c: &mut [f64], k: usize, m: usize, n: usize) {
    gemm_acc(m, k, n, a, (1, m), b, (n, 1), c, n);
}

/// Matrix product of two 2D tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.expect_rank(2, "matmul")?;
    b.expect_rank(2, "matmul")?;
    let (m, k) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::shape("matmul", format!("{m}x{k} · {k2}x{n}")));
    }
    let mut out = vec![0.0; m * n];
    mm_acc(a.data(), b.data(), &mut out, m, k, n);
    Tensor::new(vec![m, n], out)
}

#[inline]
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad_scalar(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let th = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
}

/// Elementwise GELU, tanh approximation.
pub fn gelu(x: &Tensor) -> Tensor {
    Tensor::from_fn(x.shape(), |i| gelu_scalar(x.data()[i]))
}

/// In-place softmax over the allowed entries of one row; masked entries
/// become exactly zero.
pub fn softmax_row_masked(row: &mut [f64], allowed: &[bool]) -> bool {
    let mut max = f64::NEG_INFINITY;
    for (v, &ok) in row.iter().zip(allowed) {
        if ok && *v > max {
            max = *v;
        }
    }
    if max == f64::NEG_INFINITY {
        return false;
    }
    let mut sum = 0.0;
    for (v, &ok) in row.iter_mut().zip(allowed) {
        if ok {
            *v = (*v - max).exp();
            sum += *v;
        } else {
            *v = 0.0;
        }
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
    true
}

/// Row-wise softmax of `scores` restricted to the positions `mask` allows.
pub fn masked_softmax(scores: &Tensor, mask: &AttentionMask) -> Result<Tensor> {
    scores.expect_rank(2, "masked_softmax")?;
    let n = mask.len();
    if scores.rows() != n || scores.cols() != n {
        return Err(Error::shape("masked_softmax", format!("{:?} vs mask {n}x{n}", scores.shape())));
    }
    let mut out = scores.clone();
    for i in 0..n {
        if !softmax_row_masked(out.row_mut(i), mask.row(i)) {
            return Err(Error::FullyMasked(i));
        }
    }
    out.ensure_finite("masked_softmax")?;
    Ok(out)
}

/// Unfolds non-overlapping `k×k` windows of a `[C×H×W]` volume into rows of
/// a `[(H/k·W/k) × (C·k·k)]` matrix. Column order matches a flattened
/// `[C×k×k]` kernel.
pub fn im2col(input: &[f64], c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let (oh, ow) = (h / k, w / k);
    let ckk = c * k * k;
    let mut cols = vec![0.0; oh * ow * ckk];
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &mut cols[(oy * ow + ox) * ckk..(oy * ow + ox + 1) * ckk];
            for ch in 0..c {
                for ky in 0..k {
                    let src = ch * h * w + (oy * k + ky) * w + ox * k;
                    let dst = ch * k * k + ky * k;
                    row[dst..dst + k].copy_from_slice(&input[src..src + k]);
                }
            }
        }
    }
    cols
}

/// Inverse scatter of [`im2col`]; windows do not overlap so this is a copy.
pub fn col2im(cols: &[f64], c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let (oh, ow) = (h / k, w / k);
    let ckk = c * k * k;
    let mut out = vec![0.0; c * h * w];
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &cols[(oy * ow + ox) * ckk..(oy * ow + ox + 1) * ckk];
            for ch in 0..c {
                for ky in 0..k {
                    let dst = ch * h * w + (oy * k + ky) * w + ox * k;
                    let src = ch * k * k + ky * k;
                    out[dst..dst + k].copy_from_slice(&row[src..src + k]);
                }
            }
        }
    }
    out
}

pub(crate) struct ConvDims {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
}

pub(crate) fn conv_dims(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize) -> Result<ConvDims> {
    input.expect_rank(3, "conv2d")?;
    kernel.expect_rank(4, "conv2d")?;
    let [c_in, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2]];
    let ks = kernel.shape();
    if ks[1] != c_in || ks[2] != ks[3] {
        return Err(Error::shape("conv2d", format!("kernel {ks:?} for input {:?}", input.shape())));
    }
    if ks[2] != stride {
        return Err(Error::shape("conv2d", format!("kernel size {} must equal stride {stride}", ks[2])));
    }
    if stride == 0 || h % stride != 0 || w % stride != 0 {
        return Err(Error::shape("conv2d", format!("{h}x{w} not divisible by stride {stride}")));
    }
    if bias.len() != ks[0] {
        return Err(Error::shape("conv2d", format!("bias {:?} for {} filters", bias.shape(), ks[0])));
    }
    Ok(ConvDims { c_in, h, w, c_out: ks[0], k: stride })
}

/// Non-overlapping strided convolution with bias.
///
/// `input` is `[C_in×H×W]`, `kernel` is `[C_out×C_in×k×k]` with `k == stride`.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
    let d = conv_dims(input, kernel, bias, stride)?;
    let cols = im2col(input.data(), d.c_in, d.h, d.w, d.k);
    Ok(conv2d_from_cols(&cols, kernel, bias, &d))
}

pub(crate) fn conv2d_from_cols(cols: &[f64], kernel: &Tensor, bias: &Tensor, d: &ConvDims) -> Tensor {
    let (oh, ow) = (d.h / d.k, d.w / d.k);
    let p = oh * ow;
    let ckk = d.c_in * d.k * d.k;
    let mut out = vec![0.0; d.c_out * p];
    for o in 0..d.c_out {
        out[o * p..(o + 1) * p].fill(bias.data()[o]);
    }
    mm_abt_acc(kernel.data(), cols, &mut out, d.c_out, ckk, p);
    Tensor::new(vec![d.c_out, oh, ow], out).expect("conv output shape")
}

/// Root-mean-square normalisation of each row, scaled by `gain`. Returns the
/// output and the per-row inverse RMS.
pub fn rmsnorm(x: &[f64], gain: &[f64], rows: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let d = gain.len();
    let mut out = vec![0.0; rows * d];
    let mut inv = Vec::with_capacity(rows);
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let ms = dot(xr, xr) / d as f64;
        let ir = 1.0 / (ms + eps).sqrt();
        inv.push(ir);
        for ((o, xi), g) in out[r * d..(r + 1) * d].iter_mut().zip(xr).zip(gain) {
            *o = xi * ir * g;
        }
    }
    (out, inv)
}
