//! Householder QR factorizations.
//!
//! `thin_qr` is blocked: panels of `PANEL` columns are factored with level-2
//! reflections, then the accumulated block reflector `I - V T V^T` is applied
//! to the trailing columns with GEMM. `pivoted_qr` is the unblocked
//! column-pivoted variant used on small core matrices.

use serde::{Deserialize, Serialize};

use super::dense::{axpy_slice, dot, gemm_raw, norm2, DenseMatrix};
use crate::error::{Error, Result};

const PANEL: usize = 32;

/// Thin QR factors `M = Q R` with `Q` of orthonormal columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QrFactors {
    pub q: DenseMatrix,
    pub r: DenseMatrix,
}

/// Column-pivoted QR: `M[:, perm] = Q R`, with `|R_00| >= |R_11| >= ...`.
#[derive(Clone, Debug)]
pub struct PivotedQr {
    pub q: DenseMatrix,
    pub r: DenseMatrix,
    pub perm: Vec<usize>,
}

/// Overwrites `x` with the Householder vector (implicit leading one) and
/// returns `(beta, tau)` such that `(I - tau v v^T) x = beta e_1`.
fn make_reflector(x: &mut [f64]) -> (f64, f64) {
    let alpha = x[0];
    let xnorm = norm2(&x[1..]);
    if xnorm == 0.0 {
        return (alpha, 0.0);
    }
    let beta = -alpha.signum() * alpha.hypot(xnorm);
    let tau = (beta - alpha) / beta;
    let scal = 1.0 / (alpha - beta);
    for v in &mut x[1..] {
        *v *= scal;
    }
    x[0] = beta;
    (beta, tau)
}

/// Applies `I - tau v v^T` (v stored below the diagonal of column `j` in `w`,
/// rows `j..`) to column `c` of `w`.
#[inline]
fn reflect_column(w: &mut DenseMatrix, j: usize, c: usize, tau: f64) {
    if tau == 0.0 {
        return;
    }
    let (vcol, ccol) = w.two_cols_mut(j, c);
    let v = &vcol[j + 1..];
    let s = tau * (ccol[j] + dot(v, &ccol[j + 1..]));
    ccol[j] -= s;
    axpy_slice(-s, v, &mut ccol[j + 1..]);
}

struct BlockReflector {
    start: usize,
    v: DenseMatrix,
    t: DenseMatrix,
}

impl BlockReflector {
    /// Builds `V` (unit lower trapezoidal) and `T` (upper triangular) for the
    /// reflectors stored in columns `k..k+b` of `w`.
    fn from_panel(w: &DenseMatrix, k: usize, b: usize, tau: &[f64]) -> Self {
        let m = w.rows();
        let len = m - k;
        let mut v = DenseMatrix::zeros(len, b);
        for p in 0..b {
            let col = v.col_mut(p);
            col[p] = 1.0;
            col[p + 1..].copy_from_slice(&w.col(k + p)[k + p + 1..]);
        }
        let mut t = DenseMatrix::zeros(b, b);
        for i in 0..b {
            let ti = tau[k + i];
            t[(i, i)] = ti;
            if i == 0 || ti == 0.0 {
                continue;
            }
            // w = -tau_i V[:, 0:i]^T v_i, only rows >= i of v_i are nonzero
            let vi = &v.col(i)[i..];
            let mut wv: Vec<f64> = (0..i).map(|p| -ti * dot(&v.col(p)[i..], vi)).collect();
            // T[0:i, i] = T[0:i, 0:i] * w
            for r in 0..i {
                let mut s = 0.0;
                for c in r..i {
                    s += t[(r, c)] * wv[c];
                }
                wv[r] = s;
            }
            for r in 0..i {
                t[(r, i)] = wv[r];
            }
        }
        BlockReflector { start: k, v, t }
    }

    /// `C <- H^T C` (`transpose = true`) or `C <- H C` for the block starting
    /// at row `start` of `c`, restricted to columns `cols`.
    fn apply(&self, c: &mut DenseMatrix, cols: std::ops::Range<usize>, transpose: bool) {
        let len = self.v.rows();
        let b = self.v.cols();
        let nc = cols.len();
        if nc == 0 || b == 0 {
            return;
        }
        let ldc = c.rows() as isize;
        let offset = self.start + cols.start * c.rows();
        let mut work = DenseMatrix::zeros(b, nc);
        // SAFETY: views are in bounds of `v`, `c` and `work`; `work` and `v`
        // do not alias `c`.
        unsafe {
            let cp = c.as_mut_slice().as_mut_ptr().add(offset);
            gemm_raw(
                b,
                len,
                nc,
                1.0,
                self.v.as_slice().as_ptr(),
                len as isize,
                1,
                cp,
                1,
                ldc,
                0.0,
                work.as_mut_slice().as_mut_ptr(),
                1,
                b as isize,
            );
        }
        // work <- op(T) work
        for col in 0..nc {
            let wc = work.col_mut(col);
            if transpose {
                for i in (0..b).rev() {
                    let mut s = 0.0;
                    for p in 0..=i {
                        s += self.t[(p, i)] * wc[p];
                    }
                    wc[i] = s;
                }
            } else {
                for i in 0..b {
                    let mut s = 0.0;
                    for p in i..b {
                        s += self.t[(i, p)] * wc[p];
                    }
                    wc[i] = s;
                }
            }
        }
        unsafe {
            let cp = c.as_mut_slice().as_mut_ptr().add(offset);
            gemm_raw(
                len,
                b,
                nc,
                -1.0,
                self.v.as_slice().as_ptr(),
                1,
                len as isize,
                work.as_slice().as_ptr(),
                1,
                b as isize,
                1.0,
                cp,
                1,
                ldc,
            );
        }
    }
}

/// Householder thin QR of a tall (or square) matrix.
pub fn thin_qr(m: &DenseMatrix) -> Result<QrFactors> {
    let (rows, cols) = m.shape();
    if rows < cols {
        return Err(Error::dims(
            "thin_qr",
            format!("rows >= cols ({cols})"),
            format!("{rows} rows"),
        ));
    }
    let mut w = m.clone();
    let mut tau = vec![0.0; cols];
    let mut blocks = Vec::new();
    let mut k = 0;
    while k < cols {
        let b = PANEL.min(cols - k);
        for j in k..k + b {
            let (_, t) = make_reflector(&mut w.col_mut(j)[j..]);
            tau[j] = t;
            for c in j + 1..k + b {
                reflect_column(&mut w, j, c, t);
            }
        }
        let block = BlockReflector::from_panel(&w, k, b, &tau);
        if k + b < cols {
            block.apply(&mut w, k + b..cols, true);
        }
        blocks.push(block);
        k += b;
    }

    let mut r = DenseMatrix::zeros(cols, cols);
    for j in 0..cols {
        r.col_mut(j)[..=j].copy_from_slice(&w.col(j)[..=j]);
    }
    let mut q = DenseMatrix::eye(rows, cols);
    for block in blocks.iter().rev() {
        block.apply(&mut q, block.start..cols, false);
    }
    Ok(QrFactors { q, r })
}

/// Column-pivoted Householder QR (greedy max-norm pivoting). Works for any
/// shape; `R` is `min(m, n) x n` and `Q` is `m x min(m, n)`.
pub fn pivoted_qr(m: &DenseMatrix) -> Result<PivotedQr> {
    let (rows, cols) = m.shape();
    let kmax = rows.min(cols);
    let mut w = m.clone();
    let mut perm: Vec<usize> = (0..cols).collect();
    let mut tau = vec![0.0; kmax];
    let mut norms: Vec<f64> = (0..cols).map(|j| norm2(w.col(j))).collect();
    let mut ref_norms = norms.clone();
    let tol3z = f64::EPSILON.sqrt();

    for j in 0..kmax {
        let p = (j..cols)
            .max_by(|&a, &b| {
                norms[a]
                    .partial_cmp(&norms[b])
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap_or(j);
        if p != j {
            let (a, b) = w.two_cols_mut(j, p);
            a.swap_with_slice(b);
            perm.swap(j, p);
            norms.swap(j, p);
            ref_norms.swap(j, p);
        }
        let (_, t) = make_reflector(&mut w.col_mut(j)[j..]);
        tau[j] = t;
        for c in j + 1..cols {
            reflect_column(&mut w, j, c, t);
            if norms[c] != 0.0 {
                let ratio = w[(j, c)].abs() / norms[c];
                let temp = (1.0 - ratio * ratio).max(0.0);
                let temp2 = temp * (norms[c] / ref_norms[c]).powi(2);
                if temp2 <= tol3z {
                    let fresh = if j + 1 < rows {
                        norm2(&w.col(c)[j + 1..])
                    } else {
                        0.0
                    };
                    norms[c] = fresh;
                    ref_norms[c] = fresh;
                } else {
                    norms[c] *= temp.sqrt();
                }
            }
        }
    }

    let mut r = DenseMatrix::zeros(kmax, cols);
    for j in 0..cols {
        let top = (j + 1).min(kmax);
        r.col_mut(j)[..top].copy_from_slice(&w.col(j)[..top]);
    }
    let mut q = DenseMatrix::eye(rows, kmax);
    for j in (0..kmax).rev() {
        for c in j..kmax {
            reflect_with(&w, j, &mut q, c, tau[j]);
        }
    }
    Ok(PivotedQr { q, r, perm })
}

/// Applies the reflector stored in column `j` of `w` to column `c` of `q`.
fn reflect_with(w: &DenseMatrix, j: usize, q: &mut DenseMatrix, c: usize, tau: f64) {
    if tau == 0.0 {
        return;
    }
    let v = &w.col(j)[j + 1..];
    let qc = q.col_mut(c);
    let s = tau * (qc[j] + dot(v, &qc[j + 1..]));
    qc[j] -= s;
    axpy_slice(-s, v, &mut qc[j + 1..]);
}
