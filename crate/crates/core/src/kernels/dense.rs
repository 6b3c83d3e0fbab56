use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column-major dense matrix of `f64`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.rows * self.cols > 64 {
            return write!(f, "DenseMatrix({}x{})", self.rows, self.cols);
        }
        writeln!(f, "DenseMatrix({}x{}) [", self.rows, self.cols)?;
        for i in 0..self.rows {
            let row: Vec<String> = (0..self.cols)
                .map(|j| format!("{:>12.5e}", self[(i, j)]))
                .collect();
            writeln!(f, "  {}", row.join(" "))?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i + i * n] = 1.0;
        }
        m
    }

    /// Rectangular identity: ones on the leading diagonal.
    pub fn eye(rows: usize, cols: usize) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows.min(cols) {
            m.data[i + i * rows] = 1.0;
        }
        m
    }

    /// Builds a matrix from column-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims(
                "DenseMatrix::from_col_major",
                format!("{} entries", rows * cols),
                format!("{} entries", data.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos % rows.max(1),
                col: pos / rows.max(1),
            });
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    /// Builds a matrix from a slice of rows; panics on ragged input.
    /// Intended for literals in tests and examples.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        let mut out = Self::zeros(m, n);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n, "ragged rows");
            for (j, v) in row.iter().enumerate() {
                out[(i, j)] = *v;
            }
        }
        out
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        DenseMatrix { rows, cols, data }
    }

    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        DenseMatrix { rows, cols, data }
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i + i * n] = *v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    /// Mutable access to two distinct columns at once.
    pub fn two_cols_mut(&mut self, a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
        assert!(a != b);
        let m = self.rows;
        if a < b {
            let (lo, hi) = self.data.split_at_mut(b * m);
            (&mut lo[a * m..(a + 1) * m], &mut hi[..m])
        } else {
            let (lo, hi) = self.data.split_at_mut(a * m);
            let (x, y) = (&mut hi[..m], &mut lo[b * m..(b + 1) * m]);
            (x, y)
        }
    }

    pub fn transpose(&self) -> DenseMatrix {
        let (m, n) = (self.rows, self.cols);
        let mut out = vec![0.0; m * n];
        const B: usize = 32;
        for jb in (0..n).step_by(B) {
            for ib in (0..m).step_by(B) {
                for j in jb..(jb + B).min(n) {
                    for i in ib..(ib + B).min(m) {
                        out[j + i * n] = self.data[i + j * m];
                    }
                }
            }
        }
        DenseMatrix::from_parts(n, m, out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn scaled(&self, alpha: f64) -> DenseMatrix {
        let mut out = self.clone();
        out.scale(alpha);
        out
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &DenseMatrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dims(
                "axpy",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        let mut out = self.clone();
        out.axpy(1.0, other)?;
        Ok(out)
    }

    /// Copy of the columns in `range`.
    pub fn columns(&self, range: Range<usize>) -> DenseMatrix {
        assert!(range.end <= self.cols);
        let data = self.data[range.start * self.rows..range.end * self.rows].to_vec();
        DenseMatrix::from_parts(self.rows, range.len(), data)
    }

    /// Copy of the rows in `range`.
    pub fn row_block(&self, range: Range<usize>) -> DenseMatrix {
        assert!(range.end <= self.rows);
        let h = range.len();
        let mut data = Vec::with_capacity(h * self.cols);
        for j in 0..self.cols {
            data.extend_from_slice(&self.col(j)[range.clone()]);
        }
        DenseMatrix::from_parts(h, self.cols, data)
    }

    /// Copy of the listed columns, in the given order.
    pub fn select_columns(&self, idx: &[usize]) -> DenseMatrix {
        let mut data = Vec::with_capacity(self.rows * idx.len());
        for &j in idx {
            data.extend_from_slice(self.col(j));
        }
        DenseMatrix::from_parts(self.rows, idx.len(), data)
    }

    /// `[self, other]`.
    pub fn hstack(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != other.rows {
            return Err(Error::dims(
                "hstack",
                format!("{} rows", self.rows),
                format!("{} rows", other.rows),
            ));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(DenseMatrix::from_parts(
            self.rows,
            self.cols + other.cols,
            data,
        ))
    }

    /// `[self; other]`.
    pub fn vstack(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.cols {
            return Err(Error::dims(
                "vstack",
                format!("{} cols", self.cols),
                format!("{} cols", other.cols),
            ));
        }
        let m = self.rows + other.rows;
        let mut data = Vec::with_capacity(m * self.cols);
        for j in 0..self.cols {
            data.extend_from_slice(self.col(j));
            data.extend_from_slice(other.col(j));
        }
        Ok(DenseMatrix::from_parts(m, self.cols, data))
    }

    /// Zeroes everything strictly below the diagonal.
    pub fn upper_triangle(&self) -> DenseMatrix {
        let mut out = self.clone();
        for j in 0..self.cols {
            for i in (j + 1)..self.rows {
                out.data[i + j * self.rows] = 0.0;
            }
        }
        out
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols))
            .map(|i| self[(i, i)])
            .collect()
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().iter().sum()
    }

    pub fn memory_entries(&self) -> usize {
        self.data.len()
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i + j * self.rows]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i + j * self.rows]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trans {
    No,
    Yes,
}

/// `C = op(A) * op(B)` on dense operands.
pub fn gemm(a: &DenseMatrix, ta: Trans, b: &DenseMatrix, tb: Trans) -> Result<DenseMatrix> {
    let (m, ka) = match ta {
        Trans::No => (a.rows, a.cols),
        Trans::Yes => (a.cols, a.rows),
    };
    let (kb, n) = match tb {
        Trans::No => (b.rows, b.cols),
        Trans::Yes => (b.cols, b.rows),
    };
    if ka != kb {
        return Err(Error::dims(
            "gemm",
            format!("inner dimension {ka}"),
            format!("inner dimension {kb}"),
        ));
    }
    let mut c = DenseMatrix::zeros(m, n);
    gemm_acc(1.0, a, ta, b, tb, 0.0, &mut c);
    Ok(c)
}

/// `C = alpha * op(A) * op(B) + beta * C`; dimensions are the caller's
/// responsibility.
pub(crate) fn gemm_acc(
    alpha: f64,
    a: &DenseMatrix,
    ta: Trans,
    b: &DenseMatrix,
    tb: Trans,
    beta: f64,
    c: &mut DenseMatrix,
) {
    let (m, k) = match ta {
        Trans::No => (a.rows, a.cols),
        Trans::Yes => (a.cols, a.rows),
    };
    let n = c.cols;
    assert_eq!(c.rows, m);
    let (rsa, csa) = match ta {
        Trans::No => (1, a.rows as isize),
        Trans::Yes => (a.rows as isize, 1),
    };
    let (rsb, csb) = match tb {
        Trans::No => (1, b.rows as isize),
        Trans::Yes => (b.rows as isize, 1),
    };
    // SAFETY: raw-pointer wrapper over matrixmultiply with strides derived
    // from the owning matrices.
    unsafe {
        gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            1,
            c.rows as isize,
        );
    }
}

/// Strided GEMM on raw column-major storage.
///
/// # Safety
/// All pointers must be valid for the addressed `m x k`, `k x n` and `m x n`
/// views, and `c` must not alias `a` or `b`.
#[allow(clippy::too_many_arguments)]
pub(crate) unsafe fn gemm_raw(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: *const f64,
    rsa: isize,
    csa: isize,
    b: *const f64,
    rsb: isize,
    csb: isize,
    beta: f64,
    c: *mut f64,
    rsc: isize,
    csc: isize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for j in 0..n {
            for i in 0..m {
                let p = c.offset(i as isize * rsc + j as isize * csc);
                *p = if beta == 0.0 { 0.0 } else { beta * *p };
            }
        }
        return;
    }
    matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
}

#[inline]
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    // four accumulators so the loop vectorizes; fixed order keeps it deterministic
    let mut acc = [0.0; 4];
    let chunks = x.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += x[i] * y[i];
        acc[1] += x[i + 1] * y[i + 1];
        acc[2] += x[i + 2] * y[i + 2];
        acc[3] += x[i + 3] * y[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..x.len() {
        s += x[i] * y[i];
    }
    s
}

#[inline]
pub(crate) fn axpy_slice(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn norm2(x: &[f64]) -> f64 {
    let scale = x.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let s: f64 = x.iter().map(|v| (v / scale) * (v / scale)).sum();
    scale * s.sqrt()
}
