//! Row-major dense arrays of `f64`.
//!
//! Only what the models and the tape need: elementwise maps, matrix products
//! with optional transposes, and row access for batches of points. A batch of
//! `n` points in `ℝᵈ` is an `n × d` array.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseArray {
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        contract!(len == data.len(), "shape {:?} needs {} values, got {}", shape, len, data.len());
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1, 1], data: vec![value] }
    }

    /// An `rows × cols` matrix. Panics when the lengths disagree; use
    /// [`DenseArray::from_vec`] for fallible construction.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix {rows}x{cols} with {} values", data.len());
        Self { shape: vec![rows, cols], data }
    }

    /// Stacks equal-length points into an `n × d` batch.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        contract!(!rows.is_empty(), "cannot build a batch from zero rows");
        let d = rows[0].as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            let r = r.as_ref();
            contract!(r.len() == d, "ragged rows: {} vs {}", r.len(), d);
            data.extend_from_slice(r);
        }
        Ok(Self::matrix(rows.len(), d, data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// Number of rows of a 2-D array (1 for a 1-D array).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[0],
        }
    }

    /// Number of columns of a 2-D array (the length for a 1-D array).
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols().max(1))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    /// Value of a one-element array.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on an array of {} values", self.data.len());
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.shape, other.shape, "elementwise shape mismatch");
        Self { shape: self.shape.clone(), data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect() }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "elementwise shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::matrix(c, r, out)
    }

    /// Selects rows by index into a new batch.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self::matrix(idx.len(), c, data)
    }

    /// Row-wise concatenation of two batches with equal width.
    pub fn vstack(&self, other: &Self) -> Self {
        assert_eq!(self.cols(), other.cols(), "vstack width mismatch");
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Self::matrix(self.rows() + other.rows(), self.cols(), data)
    }

    /// Shape of `op(a) · op(b)` where `op` optionally transposes.
    pub fn matmul_shape(a: &Self, ta: bool, b: &Self, tb: bool) -> (usize, usize, usize) {
        let (ar, ac) = if ta { (a.cols(), a.rows()) } else { (a.rows(), a.cols()) };
        let (br, bc) = if tb { (b.cols(), b.rows()) } else { (b.rows(), b.cols()) };
        assert_eq!(ac, br, "matmul inner dimension mismatch: {ar}x{ac} · {br}x{bc}");
        (ar, ac, bc)
    }

    /// `op(a) · op(b)`.
    pub fn matmul(a: &Self, ta: bool, b: &Self, tb: bool) -> Self {
        let (m, _, n) = Self::matmul_shape(a, ta, b, tb);
        let mut out = Self::zeros(&[m, n]);
        gemm(a, ta, b, tb, 0.0, &mut out);
        out
    }

    /// `self · other` without transposes.
    pub fn dot(&self, other: &Self) -> Self {
        Self::matmul(self, false, other, false)
    }
}

/// `c ← op(a)·op(b) + beta·c`.
pub fn gemm(a: &DenseArray, ta: bool, b: &DenseArray, tb: bool, beta: f64, c: &mut DenseArray) {
    let (m, k, n) = DenseArray::matmul_shape(a, ta, b, tb);
    assert_eq!((c.rows(), c.cols()), (m, n), "gemm output shape mismatch");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, a.cols() as isize) } else { (a.cols() as isize, 1) };
    let (rsb, csb) = if tb { (1, b.cols() as isize) } else { (b.cols() as isize, 1) };
    // SAFETY: strides describe the row-major buffers of `a`, `b` and `c`, whose
    // extents were checked against (m, k, n) above; `c` does not alias the inputs.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &DenseArray, ta: bool, b: &DenseArray, tb: bool) -> DenseArray {
        let a = if ta { a.transpose() } else { a.clone() };
        let b = if tb { b.transpose() } else { b.clone() };
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = (0..k).map(|l| a.get(i, l) * b.get(l, j)).sum();
            }
        }
        DenseArray::matrix(m, n, out)
    }

    #[test]
    fn matmul_all_transpose_combinations() {
        let a = DenseArray::matrix(2, 3, vec![1.0, -2.0, 0.5, 3.0, 4.0, -1.0]);
        let b = DenseArray::matrix(3, 2, vec![0.3, 1.0, -1.0, 2.0, 5.0, 0.0]);
        let bt = b.transpose();
        let at = a.transpose();
        for (x, tx, y, ty) in
            [(&a, false, &b, false), (&at, true, &b, false), (&a, false, &bt, true), (&at, true, &bt, true)]
        {
            let got = DenseArray::matmul(x, tx, y, ty);
            let want = naive(x, tx, y, ty);
            for (g, w) in got.data().iter().zip(want.data()) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(DenseArray::from_vec(&[2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn rows_and_select() {
        let x = DenseArray::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap();
        assert_eq!(x.rows(), 3);
        assert_eq!(x.row(1), &[3.0, 4.0]);
        let s = x.select_rows(&[2, 0]);
        assert_eq!(s.data(), &[5.0, 6.0, 1.0, 2.0]);
        assert_eq!(x.vstack(&s).rows(), 5);
    }
}
