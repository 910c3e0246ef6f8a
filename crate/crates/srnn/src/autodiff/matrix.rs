//! Dense row-major matrix of 64-bit floats.
//!
//! This is the only numeric container in the engine. Hidden states, weights,
//! activations and speed tables are all `Matrix` values. The multiply kernel
//! is delegated to `matrixmultiply::dgemm`; everything else is plain loops
//! that reduce in ascending index order so results are reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix", into = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Wire form of a matrix; deserialization re-checks the buffer length.
#[derive(Serialize, Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Matrix> {
        Matrix::from_vec(raw.rows, raw.cols, raw.data)
    }
}

impl From<Matrix> for RawMatrix {
    fn from(m: Matrix) -> RawMatrix {
        RawMatrix {
            rows: m.rows,
            cols: m.cols,
            data: m.data,
        }
    }
}

impl Matrix {
    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build from a row-major buffer. The buffer length must be rows*cols.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "buffer of length {} cannot fill a {}x{} matrix",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Build from rows given as slices; handy in tests.
    pub fn from_rows(rows: &[&[f64]]) -> Matrix {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Matrix product self * other.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "matmul: {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm_nn(1.0, self, other, 0.0, &mut out);
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Entrywise combine with a same-shaped matrix.
    pub fn zip(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!(
                "elementwise op: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// self += scale * other (shapes must match).
    pub fn add_scaled(&mut self, other: &Matrix, scale: f64) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    /// Squared Frobenius norm.
    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }
}

// Below this many output rows the packing overhead of the blocked kernel
// outweighs its throughput; a plain ikj loop wins on the short-and-wide
// products this model produces.
const SMALL_M: usize = 16;

/// Dot product with four independent accumulators so the lanes pipeline.
/// The final combine fixes the reduction order, keeping results identical
/// for identical inputs.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let chunks = a.len() / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..chunks {
        let p = i * 4;
        s0 += a[p] * b[p];
        s1 += a[p + 1] * b[p + 1];
        s2 += a[p + 2] * b[p + 2];
        s3 += a[p + 3] * b[p + 3];
    }
    let mut tail = 0.0;
    for p in chunks * 4..a.len() {
        tail += a[p] * b[p];
    }
    (s0 + s1) + (s2 + s3) + tail
}

/// c = alpha * a * b + beta * c
pub fn gemm_nn(alpha: f64, a: &Matrix, b: &Matrix, beta: f64, c: &mut Matrix) {
    debug_assert_eq!(a.cols, b.rows);
    debug_assert_eq!((c.rows, c.cols), (a.rows, b.cols));
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta != 1.0 {
            c.data.iter_mut().for_each(|x| *x *= beta);
        }
        return;
    }
    if m <= SMALL_M {
        if beta == 0.0 {
            c.data.iter_mut().for_each(|x| *x = 0.0);
        } else if beta != 1.0 {
            c.data.iter_mut().for_each(|x| *x *= beta);
        }
        for i in 0..m {
            let c_row = &mut c.data[i * n..(i + 1) * n];
            let a_row = &a.data[i * k..(i + 1) * k];
            for (p, &a_ip) in a_row.iter().enumerate() {
                let scaled = alpha * a_ip;
                let b_row = &b.data[p * n..(p + 1) * n];
                for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                    *cv += scaled * bv;
                }
            }
        }
        return;
    }
    unsafe {
        // SAFETY: buffer lengths are rows*cols by construction and the
        // strides describe row-major layout of those buffers.
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            k as isize,
            1,
            b.data.as_ptr(),
            n as isize,
            1,
            beta,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// c += a * b^T  (a: m x k, b: n x k, c: m x n)
pub fn gemm_nt_acc(a: &Matrix, b: &Matrix, c: &mut Matrix) {
    debug_assert_eq!(a.cols, b.cols);
    debug_assert_eq!((c.rows, c.cols), (a.rows, b.rows));
    let (m, k, n) = (a.rows, a.cols, b.rows);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    if m <= SMALL_M {
        // row-by-row dot products over contiguous slices
        for i in 0..m {
            let a_row = &a.data[i * k..(i + 1) * k];
            let c_row = &mut c.data[i * n..(i + 1) * n];
            for (j, cv) in c_row.iter_mut().enumerate() {
                let b_row = &b.data[j * k..(j + 1) * k];
                *cv += dot(a_row, b_row);
            }
        }
        return;
    }
    unsafe {
        // SAFETY: as in gemm_nn; b is addressed through transposed strides.
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            k as isize,
            1,
            b.data.as_ptr(),
            1,
            k as isize,
            1.0,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// c += a^T * b  (a: k x m, b: k x n, c: m x n)
pub fn gemm_tn_acc(a: &Matrix, b: &Matrix, c: &mut Matrix) {
    debug_assert_eq!(a.rows, b.rows);
    debug_assert_eq!((c.rows, c.cols), (a.cols, b.cols));
    let (m, k, n) = (a.cols, a.rows, b.cols);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    if k <= SMALL_M {
        // rank-k update as k contiguous axpy sweeps
        for p in 0..k {
            let a_row = &a.data[p * m..(p + 1) * m];
            let b_row = &b.data[p * n..(p + 1) * n];
            for (i, &av) in a_row.iter().enumerate() {
                let c_row = &mut c.data[i * n..(i + 1) * n];
                for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                    *cv += av * bv;
                }
            }
        }
        return;
    }
    unsafe {
        // SAFETY: as in gemm_nn; a is addressed through transposed strides.
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            1,
            m as isize,
            b.data.as_ptr(),
            n as isize,
            1,
            1.0,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
