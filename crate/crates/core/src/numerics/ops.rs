//! Forward kernels on plain tensors. The tape records these and pairs each
//! one with its backward rule.

use super::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu_scalar(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `a [n x k] * b [k x p]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, k) = a.dims2("matmul")?;
    let (k2, p) = b.dims2("matmul")?;
    if k != k2 {
        return Err(Error::dim("matmul", format!("{n}x{k} times {k2}x{p}")));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; n * p];
    for i in 0..n {
        let orow = &mut out[i * p..(i + 1) * p];
        for kk in 0..k {
            let av = ad[i * k + kk];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[kk * p..(kk + 1) * p];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![n, p], out)
}

/// `x [n x d_in] * weight [d_in x d_out] + bias [d_out]`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let mut out = matmul(x, weight)?;
    let p = out.cols();
    if bias.len() != p {
        return Err(Error::dim("linear", format!("bias has {} entries, output has {p} columns", bias.len())));
    }
    for row in out.data_mut().chunks_mut(p) {
        for (o, b) in row.iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
    Ok(out)
}

fn check_conv(x: &Tensor, filters: &Tensor, dilation: usize) -> Result<(usize, usize, usize, usize)> {
    let (w, c_in) = x.dims2("causal_dilated_conv1d")?;
    let [k, f_in, c_out] = filters.shape()[..] else {
        return Err(Error::dim(
            "causal_dilated_conv1d",
            format!("filters must be K x c_in x c_out, got {:?}", filters.shape()),
        ));
    };
    if k == 0 {
        return Err(Error::Parameter("convolution kernel size must be at least 1".into()));
    }
    if dilation == 0 {
        return Err(Error::Parameter("dilation must be at least 1".into()));
    }
    if f_in != c_in {
        return Err(Error::dim(
            "causal_dilated_conv1d",
            format!("input has {c_in} channels, filters expect {f_in}"),
        ));
    }
    Ok((w, c_in, k, c_out))
}

/// Causal dilated 1-D convolution with implicit left zero padding of
/// `(K-1)*dilation`, so the output keeps the input length.
///
/// `out[t, o] = sum_k sum_c filters[k, c, o] * x[t - (K-1-k)*dilation, c]`,
/// accumulated in `(k, c)` order for every output element.
pub fn causal_dilated_conv1d(x: &Tensor, filters: &Tensor, dilation: usize) -> Result<Tensor> {
    let (w, c_in, k, c_out) = check_conv(x, filters, dilation)?;
    let (xd, fd) = (x.data(), filters.data());
    let mut out = vec![0.0; w * c_out];
    for t in 0..w {
        let orow = &mut out[t * c_out..(t + 1) * c_out];
        for kk in 0..k {
            let back = (k - 1 - kk) * dilation;
            if back > t {
                continue;
            }
            let src = t - back;
            for c in 0..c_in {
                let xv = xd[src * c_in + c];
                let frow = &fd[(kk * c_in + c) * c_out..(kk * c_in + c + 1) * c_out];
                for (o, f) in orow.iter_mut().zip(frow) {
                    *o += f * xv;
                }
            }
        }
    }
    Tensor::new(vec![w, c_out], out)
}

/// Gradients of [`causal_dilated_conv1d`] with respect to its input and filters.
pub(crate) fn causal_dilated_conv1d_backward(
    x: &Tensor,
    filters: &Tensor,
    dilation: usize,
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let (w, c_in) = (x.rows(), x.cols());
    let [k, _, c_out] = filters.shape()[..] else {
        unreachable!("validated in forward")
    };
    let (xd, fd) = (x.data(), filters.data());
    let mut dx = vec![0.0; xd.len()];
    let mut df = vec![0.0; fd.len()];
    for t in 0..w {
        let g = &grad_out[t * c_out..(t + 1) * c_out];
        for kk in 0..k {
            let back = (k - 1 - kk) * dilation;
            if back > t {
                continue;
            }
            let src = t - back;
            for c in 0..c_in {
                let base = (kk * c_in + c) * c_out;
                let xv = xd[src * c_in + c];
                let mut acc = 0.0;
                for o in 0..c_out {
                    acc += fd[base + o] * g[o];
                    df[base + o] += xv * g[o];
                }
                dx[src * c_in + c] += acc;
            }
        }
    }
    (dx, df)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    map(x, |v| leaky_relu_scalar(v, slope))
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    map(x, sigmoid_scalar)
}

/// Row-wise softmax of a matrix with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let (_, c) = x.dims2("softmax_rows")?;
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(c.max(1)) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Root mean square of `pred - target` over all elements.
pub fn rmse(pred: &[f64], target: &[f64]) -> f64 {
    debug_assert_eq!(pred.len(), target.len());
    let ss: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    (ss / pred.len() as f64).sqrt()
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())
        .expect("shape preserved")
}
