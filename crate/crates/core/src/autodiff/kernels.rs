//! Forward and adjoint kernels shared by the tape and the tape-free
//! inference path, so both produce bitwise-identical values.

use super::Tensor;
use crate::{Result, VpnError};

/// `alpha * op(a) * op(b) + beta * out`, where `op` optionally transposes.
fn gemm(a: &Tensor, trans_a: bool, b: &Tensor, trans_b: bool, beta: f64, out: &mut Tensor) {
    let (m, k) = if trans_a {
        (a.cols(), a.rows())
    } else {
        (a.rows(), a.cols())
    };
    let n = if trans_b { b.rows() } else { b.cols() };
    debug_assert_eq!(out.shape(), [m, n]);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a {
        (1, a.cols() as isize)
    } else {
        (a.cols() as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, b.cols() as isize)
    } else {
        (b.cols() as isize, 1)
    };
    let cols = out.cols() as isize;
    // SAFETY: strides describe the row-major buffers of `a`, `b` and `out`,
    // whose extents were checked against (m, k, n) by the callers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data().as_ptr(),
            rsa,
            csa,
            b.data().as_ptr(),
            rsb,
            csb,
            beta,
            out.data_mut().as_mut_ptr(),
            cols,
            1,
        );
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols() != b.rows() {
        return Err(VpnError::dim(
            "matmul",
            format!(
                "inner dimensions disagree: {}x{} * {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            ),
        ));
    }
    let mut out = Tensor::zeros(a.rows(), b.cols());
    gemm(a, false, b, false, 0.0, &mut out);
    Ok(out)
}

/// `acc += g * b^T`
pub(crate) fn matmul_grad_lhs(g: &Tensor, b: &Tensor, acc: &mut Tensor) {
    gemm(g, false, b, true, 1.0, acc);
}

/// `acc += a^T * g`
pub(crate) fn matmul_grad_rhs(a: &Tensor, g: &Tensor, acc: &mut Tensor) {
    gemm(a, true, g, false, 1.0, acc);
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if !a.same_shape(b) {
        return Err(VpnError::dim(
            "add",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let mut out = a.clone();
    for (o, v) in out.data_mut().iter_mut().zip(b.data()) {
        *o += v;
    }
    Ok(out)
}

/// Adds a `1 x k` row to every row of an `n x k` tensor.
pub fn add_row(a: &Tensor, row: &Tensor) -> Result<Tensor> {
    if row.rows() != 1 || row.cols() != a.cols() {
        return Err(VpnError::dim(
            "add_row",
            format!("cannot broadcast {:?} over {:?}", row.shape(), a.shape()),
        ));
    }
    let mut out = a.clone();
    let k = a.cols();
    if k > 0 {
        for chunk in out.data_mut().chunks_exact_mut(k) {
            for (o, v) in chunk.iter_mut().zip(row.data()) {
                *o += v;
            }
        }
    }
    Ok(out)
}

pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if !a.same_shape(b) {
        return Err(VpnError::dim(
            "hadamard",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let mut out = a.clone();
    for (o, v) in out.data_mut().iter_mut().zip(b.data()) {
        *o *= v;
    }
    Ok(out)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub(crate) fn softplus_scalar(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: &Tensor) -> Tensor {
    x.map(softplus_scalar)
}

/// Row-wise `log softmax` with max subtraction.
pub fn log_softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.cols() < 2 {
        return Err(VpnError::dim(
            "log_softmax",
            format!("need at least 2 classes, got {}", logits.cols()),
        ));
    }
    if !logits.is_finite() {
        return Err(VpnError::Numeric(
            "log_softmax received non-finite logits".into(),
        ));
    }
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    Ok(out)
}

pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    Ok(log_softmax(logits)?.map(f64::exp))
}

/// Projects every row onto the L2 ball of radius `cap`.
pub fn cap_row_norm(x: &Tensor, cap: f64) -> Tensor {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > cap {
            let scale = cap / norm;
            for v in row.iter_mut() {
                *v *= scale;
            }
        }
    }
    out
}

pub fn gather_rows(x: &Tensor, index: &[usize]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(index.len() * x.cols());
    for &i in index {
        if i >= x.rows() {
            return Err(VpnError::dim(
                "gather_rows",
                format!("row {i} out of range for {} rows", x.rows()),
            ));
        }
        data.extend_from_slice(x.row(i));
    }
    Tensor::from_vec(index.len(), x.cols(), data)
}

/// Index of the largest entry of each row; ties go to the lowest index.
pub fn argmax_rows(x: &Tensor) -> Vec<usize> {
    (0..x.rows()).map(|r| argmax(x.row(r))).collect()
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
