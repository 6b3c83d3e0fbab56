use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::dense::{gemm, DenseMatrix, Trans};
use crate::error::{Error, Result};

/// Compressed-row sparse matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Validates and wraps CSR arrays.
    pub fn from_csr(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.len() != rows + 1 || row_ptr[0] != 0 {
            return Err(Error::InvalidArgument(format!(
                "row pointer array must have {} entries starting at 0",
                rows + 1
            )));
        }
        if row_ptr.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidArgument(
                "row pointers must be non-decreasing".into(),
            ));
        }
        let nnz = row_ptr[rows];
        if col_idx.len() != nnz || values.len() != nnz {
            return Err(Error::InvalidArgument(format!(
                "expected {nnz} column indices and values, got {} and {}",
                col_idx.len(),
                values.len()
            )));
        }
        for i in 0..rows {
            let row = &col_idx[row_ptr[i]..row_ptr[i + 1]];
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument(format!(
                    "column indices in row {i} are not strictly increasing"
                )));
            }
            if let Some(&j) = row.last() {
                if j >= cols {
                    return Err(Error::InvalidArgument(format!(
                        "column index {j} in row {i} out of range for {cols} columns"
                    )));
                }
            }
            for (k, v) in values[row_ptr[i]..row_ptr[i + 1]].iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        row: i,
                        col: row[k],
                    });
                }
            }
        }
        Ok(SparseMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Builds from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        for &(i, j, _) in &sorted {
            if i >= rows || j >= cols {
                return Err(Error::InvalidArgument(format!(
                    "entry ({i}, {j}) out of range for {rows}x{cols}"
                )));
            }
        }
        sorted.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in sorted {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            col_idx.push(j);
            values.push(v);
            row_ptr[i + 1] += 1;
            last = Some((i, j));
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self::from_csr(rows, cols, row_ptr, col_idx, values)
    }

    pub fn from_dense(a: &DenseMatrix) -> Self {
        let mut trip = Vec::new();
        for j in 0..a.cols() {
            for i in 0..a.rows() {
                let v = a[(i, j)];
                if v != 0.0 {
                    trip.push((i, j, v));
                }
            }
        }
        Self::from_triplets(a.rows(), a.cols(), &trip).expect("dense input is valid")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Iterates `(col, value)` over row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                out[(i, j)] = v;
            }
        }
        out
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut trip = Vec::with_capacity(self.nnz());
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                trip.push((j, i, v));
            }
        }
        Self::from_triplets(self.cols, self.rows, &trip).expect("transpose of valid CSR")
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn row_block(&self, range: Range<usize>) -> SparseMatrix {
        let start = self.row_ptr[range.start];
        let end = self.row_ptr[range.end];
        let row_ptr = self.row_ptr[range.start..=range.end]
            .iter()
            .map(|p| p - start)
            .collect();
        SparseMatrix {
            rows: range.len(),
            cols: self.cols,
            row_ptr,
            col_idx: self.col_idx[start..end].to_vec(),
            values: self.values[start..end].to_vec(),
        }
    }

    pub fn column_block(&self, range: Range<usize>) -> SparseMatrix {
        let mut row_ptr = Vec::with_capacity(self.rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                if range.contains(&j) {
                    col_idx.push(j - range.start);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        SparseMatrix {
            rows: self.rows,
            cols: range.len(),
            row_ptr,
            col_idx,
            values,
        }
    }
}

/// Borrowed view over either storage format.
#[derive(Clone, Copy, Debug)]
pub enum MatrixRef<'a> {
    Dense(&'a DenseMatrix),
    Sparse(&'a SparseMatrix),
}

impl<'a> From<&'a DenseMatrix> for MatrixRef<'a> {
    fn from(a: &'a DenseMatrix) -> Self {
        MatrixRef::Dense(a)
    }
}

impl<'a> From<&'a SparseMatrix> for MatrixRef<'a> {
    fn from(a: &'a SparseMatrix) -> Self {
        MatrixRef::Sparse(a)
    }
}

/// Owned matrix of either storage format, e.g. as read from disk.
#[derive(Clone, Debug, PartialEq)]
pub enum Matrix {
    Dense(DenseMatrix),
    Sparse(SparseMatrix),
}

impl Matrix {
    pub fn view(&self) -> MatrixRef<'_> {
        match self {
            Matrix::Dense(a) => MatrixRef::Dense(a),
            Matrix::Sparse(a) => MatrixRef::Sparse(a),
        }
    }

    pub fn rows(&self) -> usize {
        self.view().rows()
    }

    pub fn cols(&self) -> usize {
        self.view().cols()
    }
}

impl<'a> From<&'a Matrix> for MatrixRef<'a> {
    fn from(a: &'a Matrix) -> Self {
        a.view()
    }
}

/// Block owned by a `MatrixRef` slicing operation.
pub enum OwnedBlock {
    Dense(DenseMatrix),
    Sparse(SparseMatrix),
}

impl OwnedBlock {
    pub fn view(&self) -> MatrixRef<'_> {
        match self {
            OwnedBlock::Dense(a) => MatrixRef::Dense(a),
            OwnedBlock::Sparse(a) => MatrixRef::Sparse(a),
        }
    }
}

impl<'a> MatrixRef<'a> {
    pub fn rows(&self) -> usize {
        match self {
            MatrixRef::Dense(a) => a.rows(),
            MatrixRef::Sparse(a) => a.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            MatrixRef::Dense(a) => a.cols(),
            MatrixRef::Sparse(a) => a.cols(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        match self {
            MatrixRef::Dense(a) => a.frobenius_norm(),
            MatrixRef::Sparse(a) => a.frobenius_norm(),
        }
    }

    /// Number of stored entries (all entries for dense).
    pub fn nnz(&self) -> usize {
        match self {
            MatrixRef::Dense(a) => a.rows() * a.cols(),
            MatrixRef::Sparse(a) => a.nnz(),
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        match self {
            MatrixRef::Dense(a) => (*a).clone(),
            MatrixRef::Sparse(a) => a.to_dense(),
        }
    }

    pub fn column_block(&self, range: Range<usize>) -> OwnedBlock {
        match self {
            MatrixRef::Dense(a) => OwnedBlock::Dense(a.columns(range)),
            MatrixRef::Sparse(a) => OwnedBlock::Sparse(a.column_block(range)),
        }
    }

    pub fn row_block(&self, range: Range<usize>) -> OwnedBlock {
        match self {
            MatrixRef::Dense(a) => OwnedBlock::Dense(a.row_block(range)),
            MatrixRef::Sparse(a) => OwnedBlock::Sparse(a.row_block(range)),
        }
    }

    /// `||A - A^T||_F`; `None` when the matrix is not square.
    pub fn asymmetry(&self) -> Option<f64> {
        if self.rows() != self.cols() {
            return None;
        }
        Some(match self {
            MatrixRef::Dense(a) => {
                let n = a.rows();
                let mut s = 0.0;
                for j in 0..n {
                    for i in (j + 1)..n {
                        let d = a[(i, j)] - a[(j, i)];
                        s += 2.0 * d * d;
                    }
                }
                s.sqrt()
            }
            MatrixRef::Sparse(a) => {
                let d = a.to_dense();
                return MatrixRef::Dense(&d).asymmetry();
            }
        })
    }
}

/// `op(A) * B` for dense or sparse `A` and dense `B`.
///
/// The dense path uses a packed, blocked GEMM whose summation order is fixed
/// for a given problem shape, so results are bitwise reproducible.
pub fn matmul<'a>(
    a: impl Into<MatrixRef<'a>>,
    b: &DenseMatrix,
    transpose_a: bool,
) -> Result<DenseMatrix> {
    let a = a.into();
    let inner = if transpose_a { a.rows() } else { a.cols() };
    if inner != b.rows() {
        return Err(Error::dims(
            "matmul",
            format!("{} rows in B", inner),
            format!("{} rows in B", b.rows()),
        ));
    }
    match a {
        MatrixRef::Dense(d) => gemm(
            d,
            if transpose_a { Trans::Yes } else { Trans::No },
            b,
            Trans::No,
        ),
        MatrixRef::Sparse(s) => Ok(if transpose_a {
            sparse_tmul(s, b)
        } else {
            sparse_mul(s, b)
        }),
    }
}

fn sparse_mul(a: &SparseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(a.rows(), b.cols());
    for c in 0..b.cols() {
        let bc = b.col(c);
        let oc = out.col_mut(c);
        for (i, o) in oc.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in a.row_ptr[i]..a.row_ptr[i + 1] {
                s += a.values[k] * bc[a.col_idx[k]];
            }
            *o = s;
        }
    }
    out
}

fn sparse_tmul(a: &SparseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(a.cols(), b.cols());
    for c in 0..b.cols() {
        let bc = b.col(c);
        let oc = out.col_mut(c);
        for (i, &bi) in bc.iter().enumerate() {
            if bi == 0.0 {
                continue;
            }
            for k in a.row_ptr[i]..a.row_ptr[i + 1] {
                oc[a.col_idx[k]] += a.values[k] * bi;
            }
        }
    }
    out
}
