//! Forward kernels on plain tensors. The tape in [`super::tape`] calls these
//! and pairs each with its vector-Jacobian product.

use super::counter::{self, MacKind};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[inline]
pub fn softplus_scalar(x: f64) -> f64 {
    // max(x, 0) + ln(1 + e^{-|x|}) never overflows.
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: &Tensor) -> Tensor {
    x.map(softplus_scalar)
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Splits `shape` around `axis` into (outer, axis length, inner) strides.
pub(crate) fn axis_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Softmax over an arbitrary axis with per-slice max subtraction.
pub fn softmax_axis(x: &Tensor, axis: usize) -> Result<Tensor> {
    if x.is_empty() || axis >= x.rank() || x.shape()[axis] == 0 {
        return Err(Error::invalid(format!(
            "softmax over axis {axis} of shape {:?}",
            x.shape()
        )));
    }
    let (outer, len, inner) = axis_layout(x.shape(), axis);
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = f64::NEG_INFINITY;
            for k in 0..len {
                max = max.max(src[base + k * inner]);
            }
            let mut total = 0.0;
            for k in 0..len {
                let e = (src[base + k * inner] - max).exp();
                out[base + k * inner] = e;
                total += e;
            }
            for k in 0..len {
                out[base + k * inner] /= total;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub fn softmax_lastaxis(x: &Tensor) -> Result<Tensor> {
    if x.rank() == 0 {
        return Err(Error::invalid("softmax of a rank-0 tensor"));
    }
    softmax_axis(x, x.rank() - 1)
}

/// `gamma * tanh(alpha * x) + beta`, with `gamma`/`beta` broadcast over the last axis.
pub fn dynamic_tanh(x: &Tensor, alpha: f64, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let d = x.last_dim();
    if gamma.len() != d || beta.len() != d {
        return Err(Error::shape(format!(
            "dynamic tanh over feature width {d} with gamma {:?} and beta {:?}",
            gamma.shape(),
            beta.shape()
        )));
    }
    let g = gamma.data();
    let b = beta.data();
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| g[i % d] * (alpha * v).tanh() + b[i % d])
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// `x[..., in] @ w[in, out]`, treating every leading axis as batch.
pub fn matmul_last(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    if w.rank() != 2 || x.last_dim() != w.shape()[0] {
        return Err(Error::shape(format!(
            "matmul of {:?} by {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let (k, n) = (w.shape()[0], w.shape()[1]);
    let rows = x.len() / k.max(1);
    let xd = x.data();
    let wd = w.data();
    let mut out = vec![0.0; rows * n];
    for r in 0..rows {
        let xr = &xd[r * k..(r + 1) * k];
        let or = &mut out[r * n..(r + 1) * n];
        for (i, &xv) in xr.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wr = &wd[i * n..(i + 1) * n];
            for (o, &wv) in or.iter_mut().zip(wr) {
                *o += xv * wv;
            }
        }
    }
    counter::record(MacKind::Dense, (rows * k * n) as u64);
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = n;
    Tensor::new(shape, out)
}

/// Batched contraction along a named mode.
///
/// * mode 1: `a (P×P×N)`, `b (P×N×d)` gives `out[p,n,:] = Σ_q a[p,q,n]·b[q,n,:]`
/// * mode 2: `a (P×N×N)`, `b (P×N×d)` gives `out[p,n,:] = Σ_m a[p,n,m]·b[p,m,:]`
pub fn mode_multiply(a: &Tensor, b: &Tensor, mode: usize) -> Result<Tensor> {
    if a.rank() != 3 || b.rank() != 3 {
        return Err(Error::shape(format!(
            "mode product needs rank-3 operands, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (p, n, d) = (b.shape()[0], b.shape()[1], b.shape()[2]);
    let mut out = vec![0.0; p * n * d];
    let ad = a.data();
    let bd = b.data();
    match mode {
        1 => {
            if a.shape() != [p, p, n] {
                return Err(Error::shape(format!(
                    "mode-1 product of {:?} with {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            for pi in 0..p {
                for q in 0..p {
                    for ni in 0..n {
                        let w = ad[(pi * p + q) * n + ni];
                        let src = &bd[(q * n + ni) * d..(q * n + ni + 1) * d];
                        let dst = &mut out[(pi * n + ni) * d..(pi * n + ni + 1) * d];
                        for (o, &v) in dst.iter_mut().zip(src) {
                            *o += w * v;
                        }
                    }
                }
            }
            counter::record(MacKind::OffsetAttention, (p * p * n * d) as u64);
        }
        2 => {
            if a.shape() != [p, n, n] {
                return Err(Error::shape(format!(
                    "mode-2 product of {:?} with {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            for pi in 0..p {
                for ni in 0..n {
                    for m in 0..n {
                        let w = ad[(pi * n + ni) * n + m];
                        let src = &bd[(pi * n + m) * d..(pi * n + m + 1) * d];
                        let dst = &mut out[(pi * n + ni) * d..(pi * n + ni + 1) * d];
                        for (o, &v) in dst.iter_mut().zip(src) {
                            *o += w * v;
                        }
                    }
                }
            }
            counter::record(MacKind::AlignedAttention, (p * n * n * d) as u64);
        }
        other => return Err(Error::invalid(format!("mode must be 1 or 2, got {other}"))),
    }
    Tensor::new(vec![p, n, d], out)
}
