//! Forward and backward numeric kernels shared by the autodiff graph and
//! the standalone layer functions.
//!
//! Layouts: sequences are `(batch, channels, length)`, feature matrices are
//! `(batch, features)`. Convolution weights are `(m_out, m_in, kernel)`; a
//! transposed convolution reuses the weight of the convolution it is the
//! adjoint of.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `C = alpha * op(A) * op(B) + beta * C` on strided row-major buffers.
///
/// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`; transposition is encoded
/// in the strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    if k == 0 {
        for v in &mut c[..m * n] {
            *v *= beta;
        }
        return;
    }
    // SAFETY: callers pass slices covering the strided extents of each operand
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

const fn rm(cols: usize) -> (isize, isize) {
    (cols as isize, 1)
}

const fn tr(cols: usize) -> (isize, isize) {
    (1, cols as isize)
}

// ---------------------------------------------------------------------------
// convolution geometry

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub m_in: usize,
    pub m_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub const fn new(m_in: usize, m_out: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            m_in,
            m_out,
            kernel,
            stride,
            padding,
        }
    }

    pub fn weight_shape(&self) -> [usize; 3] {
        [self.m_out, self.m_in, self.kernel]
    }

    fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 {
            return Err(Error::shape(format!("invalid conv spec {self:?}")));
        }
        Ok(())
    }
}

/// `(t_in + 2p - k) / s + 1`, rejecting lengths that do not tile exactly.
pub fn conv1d_output_length(t_in: usize, spec: &ConvSpec) -> Result<usize> {
    spec.validate()?;
    let padded = t_in + 2 * spec.padding;
    if spec.kernel > padded {
        return Err(Error::shape(format!(
            "kernel {} longer than padded input {padded}",
            spec.kernel
        )));
    }
    let span = padded - spec.kernel;
    if !span.is_multiple_of(spec.stride) {
        return Err(Error::shape(format!(
            "input length {t_in} does not tile with kernel {} stride {} padding {}",
            spec.kernel, spec.stride, spec.padding
        )));
    }
    Ok(span / spec.stride + 1)
}

/// Length produced by the transposed convolution: `(t - 1) s - 2p + k`.
pub fn transposed_output_length(t_in: usize, spec: &ConvSpec) -> Result<usize> {
    spec.validate()?;
    if t_in == 0 {
        return Err(Error::shape("empty input to transposed convolution"));
    }
    let full = (t_in - 1) * spec.stride + spec.kernel;
    if full < 2 * spec.padding + 1 {
        return Err(Error::shape(format!("padding {} too large", spec.padding)));
    }
    Ok(full - 2 * spec.padding)
}

/// `cols[(c, j), t] = x[c, t s - p + j]`, zero outside the input.
fn im2col(x: &[f64], c_in: usize, t_in: usize, spec: &ConvSpec, t_out: usize, cols: &mut [f64]) {
    let k = spec.kernel;
    for c in 0..c_in {
        let xc = &x[c * t_in..(c + 1) * t_in];
        for j in 0..k {
            let row = &mut cols[(c * k + j) * t_out..(c * k + j + 1) * t_out];
            for (t, out) in row.iter_mut().enumerate() {
                let pos = (t * spec.stride + j) as isize - spec.padding as isize;
                *out = if pos >= 0 && (pos as usize) < t_in {
                    xc[pos as usize]
                } else {
                    0.0
                };
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds columns back onto the sequence.
fn col2im(cols: &[f64], c_in: usize, t_in: usize, spec: &ConvSpec, t_out: usize, x: &mut [f64]) {
    let k = spec.kernel;
    for c in 0..c_in {
        let xc = &mut x[c * t_in..(c + 1) * t_in];
        for j in 0..k {
            let row = &cols[(c * k + j) * t_out..(c * k + j + 1) * t_out];
            for (t, v) in row.iter().enumerate() {
                let pos = (t * spec.stride + j) as isize - spec.padding as isize;
                if pos >= 0 && (pos as usize) < t_in {
                    xc[pos as usize] += v;
                }
            }
        }
    }
}

fn check_seq(x: &Tensor, channels: usize, what: &str) -> Result<(usize, usize)> {
    if x.ndim() != 3 || x.dim(1) != channels {
        return Err(Error::shape(format!(
            "{what}: expected (batch, {channels}, length), got {:?}",
            x.shape()
        )));
    }
    Ok((x.dim(0), x.dim(2)))
}

fn check_weight(w: &Tensor, spec: &ConvSpec) -> Result<()> {
    if w.shape() != spec.weight_shape() {
        return Err(Error::shape(format!(
            "conv weight {:?} does not match {:?}",
            w.shape(),
            spec.weight_shape()
        )));
    }
    Ok(())
}

fn check_bias(b: Option<&Tensor>, n: usize) -> Result<()> {
    match b {
        Some(b) if b.len() != n => Err(Error::shape(format!("bias has {} entries, need {n}", b.len()))),
        _ => Ok(()),
    }
}

/// Returns the output and, when `keep_cols`, the im2col buffer for backward.
pub(crate) fn conv1d_fwd(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    spec: &ConvSpec,
    keep_cols: bool,
) -> Result<(Tensor, Vec<f64>)> {
    let (batch, t_in) = check_seq(x, spec.m_in, "conv1d")?;
    check_weight(w, spec)?;
    check_bias(b, spec.m_out)?;
    let t_out = conv1d_output_length(t_in, spec)?;
    let ck = spec.m_in * spec.kernel;
    let mut out = Tensor::zeros(&[batch, spec.m_out, t_out]);
    let mut cols_all = if keep_cols { vec![0.0; batch * ck * t_out] } else { Vec::new() };
    let mut scratch = vec![0.0; ck * t_out];
    for n in 0..batch {
        let cols: &mut [f64] = if keep_cols {
            &mut cols_all[n * ck * t_out..(n + 1) * ck * t_out]
        } else {
            &mut scratch
        };
        im2col(x.row(n), spec.m_in, t_in, spec, t_out, cols);
        let y = &mut out.data_mut()[n * spec.m_out * t_out..(n + 1) * spec.m_out * t_out];
        gemm(spec.m_out, ck, t_out, 1.0, w.data(), rm(ck), cols, rm(t_out), 0.0, y);
        if let Some(b) = b {
            for (o, bo) in b.data().iter().enumerate() {
                y[o * t_out..(o + 1) * t_out].iter_mut().for_each(|v| *v += bo);
            }
        }
    }
    Ok((out, cols_all))
}

/// Gradients of [`conv1d_fwd`] with respect to input, weight and bias.
pub(crate) fn conv1d_bwd(
    dy: &Tensor,
    x_shape: &[usize],
    w: &Tensor,
    cols_all: &[f64],
    spec: &ConvSpec,
) -> (Tensor, Tensor, Tensor) {
    let (batch, t_in) = (x_shape[0], x_shape[2]);
    let t_out = dy.dim(2);
    let ck = spec.m_in * spec.kernel;
    let mut dx = Tensor::zeros(x_shape);
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[spec.m_out]);
    let mut dcols = vec![0.0; ck * t_out];
    for n in 0..batch {
        let dyn_ = dy.row(n);
        let cols = &cols_all[n * ck * t_out..(n + 1) * ck * t_out];
        gemm(spec.m_out, t_out, ck, 1.0, dyn_, rm(t_out), cols, tr(t_out), 1.0, dw.data_mut());
        gemm(ck, spec.m_out, t_out, 1.0, w.data(), tr(ck), dyn_, rm(t_out), 0.0, &mut dcols);
        let dxn = &mut dx.data_mut()[n * spec.m_in * t_in..(n + 1) * spec.m_in * t_in];
        col2im(&dcols, spec.m_in, t_in, spec, t_out, dxn);
        for o in 0..spec.m_out {
            db.data_mut()[o] += dyn_[o * t_out..(o + 1) * t_out].iter().sum::<f64>();
        }
    }
    (dx, dw, db)
}

/// Adjoint of the convolution with weight `w`: maps `(batch, m_out, t)` to
/// `(batch, m_in, (t - 1) s - 2p + k)`. `b` has `m_in` entries.
pub(crate) fn conv_transpose1d_fwd(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    spec: &ConvSpec,
) -> Result<Tensor> {
    let (batch, t_in) = check_seq(x, spec.m_out, "transposed conv1d")?;
    check_weight(w, spec)?;
    check_bias(b, spec.m_in)?;
    let t_out = transposed_output_length(t_in, spec)?;
    let ck = spec.m_in * spec.kernel;
    let mut out = Tensor::zeros(&[batch, spec.m_in, t_out]);
    let mut cols = vec![0.0; ck * t_in];
    for n in 0..batch {
        gemm(ck, spec.m_out, t_in, 1.0, w.data(), tr(ck), x.row(n), rm(t_in), 0.0, &mut cols);
        let y = &mut out.data_mut()[n * spec.m_in * t_out..(n + 1) * spec.m_in * t_out];
        col2im(&cols, spec.m_in, t_out, spec, t_in, y);
        if let Some(b) = b {
            for (c, bc) in b.data().iter().enumerate() {
                y[c * t_out..(c + 1) * t_out].iter_mut().for_each(|v| *v += bc);
            }
        }
    }
    Ok(out)
}

pub(crate) fn conv_transpose1d_bwd(
    dy: &Tensor,
    x: &Tensor,
    w: &Tensor,
    spec: &ConvSpec,
) -> (Tensor, Tensor, Tensor) {
    let batch = x.dim(0);
    let t_in = x.dim(2);
    let t_out = dy.dim(2);
    let ck = spec.m_in * spec.kernel;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[spec.m_in]);
    let mut dcols = vec![0.0; ck * t_in];
    for n in 0..batch {
        let dyn_ = dy.row(n);
        im2col(dyn_, spec.m_in, t_out, spec, t_in, &mut dcols);
        let dxn = &mut dx.data_mut()[n * spec.m_out * t_in..(n + 1) * spec.m_out * t_in];
        gemm(spec.m_out, ck, t_in, 1.0, w.data(), rm(ck), &dcols, rm(t_in), 0.0, dxn);
        gemm(spec.m_out, t_in, ck, 1.0, x.row(n), rm(t_in), &dcols, tr(t_in), 1.0, dw.data_mut());
        for c in 0..spec.m_in {
            db.data_mut()[c] += dyn_[c * t_out..(c + 1) * t_out].iter().sum::<f64>();
        }
    }
    (dx, dw, db)
}

// ---------------------------------------------------------------------------
// dense

/// `y = x W^T + b` with `x: (batch, in)`, `W: (out, in)`.
pub(crate) fn dense_fwd(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    if x.ndim() != 2 || w.ndim() != 2 || x.dim(1) != w.dim(1) {
        return Err(Error::shape(format!(
            "dense: input {:?} incompatible with weight {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let (batch, fin, fout) = (x.dim(0), x.dim(1), w.dim(0));
    check_bias(b, fout)?;
    let mut y = Tensor::zeros(&[batch, fout]);
    if let Some(b) = b {
        for r in 0..batch {
            y.data_mut()[r * fout..(r + 1) * fout].copy_from_slice(b.data());
        }
    }
    let beta = if b.is_some() { 1.0 } else { 0.0 };
    gemm(batch, fin, fout, 1.0, x.data(), rm(fin), w.data(), tr(fin), beta, y.data_mut());
    Ok(y)
}

pub(crate) fn dense_bwd(dy: &Tensor, x: &Tensor, w: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (batch, fin, fout) = (x.dim(0), x.dim(1), w.dim(0));
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[fout]);
    gemm(batch, fout, fin, 1.0, dy.data(), rm(fout), w.data(), rm(fin), 0.0, dx.data_mut());
    gemm(fout, batch, fin, 1.0, dy.data(), tr(fout), x.data(), rm(fin), 0.0, dw.data_mut());
    for r in 0..batch {
        for (d, g) in db.data_mut().iter_mut().zip(dy.row(r)) {
            *d += g;
        }
    }
    (dx, dw, db)
}

// ---------------------------------------------------------------------------
// batch normalization

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// `(batch, channels, inner)` view of a 2D or 3D tensor.
pub(crate) fn bn_dims(x: &Tensor) -> Result<(usize, usize, usize)> {
    match x.shape() {
        [b, c] => Ok((*b, *c, 1)),
        [b, c, l] => Ok((*b, *c, *l)),
        s => Err(Error::shape(format!("batch norm expects 2D or 3D input, got {s:?}"))),
    }
}

/// Per-channel batch statistics: mean and biased variance.
pub(crate) fn channel_stats(x: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let (b, c, l) = bn_dims(x)?;
    let n = (b * l) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for i in 0..b {
            s += x.data()[(i * c + ch) * l..(i * c + ch + 1) * l].iter().sum::<f64>();
        }
        let m = s / n;
        let mut v = 0.0;
        for i in 0..b {
            v += x.data()[(i * c + ch) * l..(i * c + ch + 1) * l]
                .iter()
                .map(|t| (t - m) * (t - m))
                .sum::<f64>();
        }
        mean[ch] = m;
        var[ch] = v / n;
    }
    Ok((mean, var))
}

/// Normalizes with the given per-channel statistics; returns output and the
/// standardized input.
pub(crate) fn bn_apply(
    x: &Tensor,
    mean: &[f64],
    inv_std: &[f64],
    scale: &Tensor,
    shift: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (b, c, l) = bn_dims(x)?;
    if scale.len() != c || shift.len() != c {
        return Err(Error::shape(format!(
            "batch norm over {c} channels got scale {} / shift {}",
            scale.len(),
            shift.len()
        )));
    }
    let mut xhat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    for i in 0..b {
        for ch in 0..c {
            let r = (i * c + ch) * l..(i * c + ch + 1) * l;
            let (g, s) = (scale.data()[ch], shift.data()[ch]);
            for idx in r {
                let h = (x.data()[idx] - mean[ch]) * inv_std[ch];
                xhat.data_mut()[idx] = h;
                y.data_mut()[idx] = g * h + s;
            }
        }
    }
    Ok((y, xhat))
}

/// Backward through batch-statistics normalization.
pub(crate) fn bn_train_bwd(
    dy: &Tensor,
    xhat: &Tensor,
    inv_std: &[f64],
    scale: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (b, c, l) = bn_dims(dy).expect("checked in forward");
    let n = (b * l) as f64;
    let mut dx = Tensor::zeros(dy.shape());
    let mut dscale = Tensor::zeros(&[c]);
    let mut dshift = Tensor::zeros(&[c]);
    for ch in 0..c {
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for i in 0..b {
            let r = (i * c + ch) * l..(i * c + ch + 1) * l;
            for idx in r {
                sum_dy += dy.data()[idx];
                sum_dy_xhat += dy.data()[idx] * xhat.data()[idx];
            }
        }
        dscale.data_mut()[ch] = sum_dy_xhat;
        dshift.data_mut()[ch] = sum_dy;
        let k = scale.data()[ch] * inv_std[ch] / n;
        for i in 0..b {
            let r = (i * c + ch) * l..(i * c + ch + 1) * l;
            for idx in r {
                dx.data_mut()[idx] =
                    k * (n * dy.data()[idx] - sum_dy - xhat.data()[idx] * sum_dy_xhat);
            }
        }
    }
    (dx, dscale, dshift)
}

/// Backward through fixed-statistics normalization.
pub(crate) fn bn_eval_bwd(
    dy: &Tensor,
    xhat: &Tensor,
    inv_std: &[f64],
    scale: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (b, c, l) = bn_dims(dy).expect("checked in forward");
    let mut dx = Tensor::zeros(dy.shape());
    let mut dscale = Tensor::zeros(&[c]);
    let mut dshift = Tensor::zeros(&[c]);
    for i in 0..b {
        for ch in 0..c {
            let r = (i * c + ch) * l..(i * c + ch + 1) * l;
            let k = scale.data()[ch] * inv_std[ch];
            for idx in r {
                dx.data_mut()[idx] = k * dy.data()[idx];
                dscale.data_mut()[ch] += dy.data()[idx] * xhat.data()[idx];
                dshift.data_mut()[ch] += dy.data()[idx];
            }
        }
    }
    (dx, dscale, dshift)
}
