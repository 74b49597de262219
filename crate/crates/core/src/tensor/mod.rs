//! Dense tensors, a recording tape for reverse-mode differentiation, and the
//! Adam optimizer.
//!
//! Every network in the crate is written define-by-run: parameters live as
//! plain [`Tensor`] values inside the model, each training step loads them
//! onto a fresh [`Tape`], builds the loss, and calls [`Tape::backward`].

mod conv;
mod init;
mod optim;
mod tape;

pub use conv::Padding;
pub use init::{glorot_uniform, seeded_rng, Rng};
pub use optim::Adam;
pub use tape::{BATCH_NORM_EPS, BatchNormStats, Gradients, Tape, Var};

use std::sync::Arc;

use crate::error::{Error, Result};

/// A dense row-major array of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Constant sparse matrix in coordinate form, used as the fixed graph
/// operator in `Tape::spmm`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    pub rows: usize,
    pub cols: usize,
    /// `(row, col, value)` triplets; duplicates are summed.
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = entries.iter().find(|&&(r, c, _)| r >= rows || c >= cols) {
            return Err(Error::shape(
                "SparseMatrix::new",
                format!("entry ({r}, {c}) outside {rows}x{cols}"),
            ));
        }
        Ok(SparseMatrix {
            rows,
            cols,
            entries,
        })
    }

    /// `self · x` for a row-major `[cols, d]` block.
    pub fn matmul_dense(&self, x: &[f64], d: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * d];
        for &(r, c, v) in &self.entries {
            let src = &x[c * d..(c + 1) * d];
            let dst = &mut out[r * d..(r + 1) * d];
            for (o, s) in dst.iter_mut().zip(src) {
                *o += v * s;
            }
        }
        out
    }

    /// `selfᵀ · x` for a row-major `[rows, d]` block.
    pub fn matmul_dense_transposed(&self, x: &[f64], d: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.cols * d];
        for &(r, c, v) in &self.entries {
            let src = &x[r * d..(r + 1) * d];
            let dst = &mut out[c * d..(c + 1) * d];
            for (o, s) in dst.iter_mut().zip(src) {
                *o += v * s;
            }
        }
        out
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * self.cols];
        for &(r, c, v) in &self.entries {
            out[r * self.cols + c] += v;
        }
        out
    }

    pub fn into_shared(self) -> Arc<Self> {
        Arc::new(self)
    }
}

/// Row-major `c = a · b` with `a: [m, k]`, `b: [k, n]`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], accumulate: bool) {
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths are checked by the callers' shape validation;
    // strides describe dense row-major layouts of exactly these sizes.
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        matrixmultiply::dgemm(
            m, k, n,
            1.0,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), n as isize, 1,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `c (+)= aᵀ · b` with `a: [k, m]`, `b: [k, n]`.
pub(crate) fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], accumulate: bool) {
    let beta = if accumulate { 1.0 } else { 0.0 };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: as in `gemm`; `a` is read through transposed strides.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n,
            1.0,
            a.as_ptr(), 1, m as isize,
            b.as_ptr(), n as isize, 1,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `c (+)= a · bᵀ` with `a: [m, k]`, `b: [n, k]`.
pub(crate) fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], accumulate: bool) {
    let beta = if accumulate { 1.0 } else { 0.0 };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: as in `gemm`; `b` is read through transposed strides.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n,
            1.0,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), 1, k as isize,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
        assert_eq!(Tensor::new(&[2, 3], vec![0.0; 6]).unwrap().len(), 6);
    }

    #[test]
    fn gemm_variants_agree_with_loops() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        let mut want = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    want[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, &a, &b, &mut c, false);
        assert!(c.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));

        let at: Vec<f64> = (0..k * m).map(|i| a[(i % m) * k + i / m]).collect();
        let mut c2 = vec![0.0; m * n];
        gemm_tn(m, k, n, &at, &b, &mut c2, false);
        assert!(c2.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));

        let bt: Vec<f64> = (0..n * k).map(|i| b[(i % k) * n + i / k]).collect();
        let mut c3 = vec![1.0; m * n];
        gemm_nt(m, k, n, &a, &bt, &mut c3, true);
        assert!(c3.iter().zip(&want).all(|(x, y)| (x - 1.0 - y).abs() < 1e-12));
    }

    #[test]
    fn sparse_transpose_product() {
        let s = SparseMatrix::new(2, 3, vec![(0, 1, 2.0), (1, 2, -1.0), (1, 0, 0.5)]).unwrap();
        let x = [1.0, 2.0, 3.0];
        assert_eq!(s.matmul_dense(&x, 1), vec![4.0, -2.5]);
        assert_eq!(s.matmul_dense_transposed(&[1.0, 2.0], 1), vec![1.0, 2.0, -2.0]);
        assert!(SparseMatrix::new(2, 2, vec![(2, 0, 1.0)]).is_err());
    }
}
