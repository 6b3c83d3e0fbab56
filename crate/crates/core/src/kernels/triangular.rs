use super::dense::{axpy_slice, norm2, DenseMatrix};
use crate::error::{Error, Result};

fn check_square(op: &'static str, r: &DenseMatrix) -> Result<()> {
    if r.rows() != r.cols() {
        return Err(Error::dims(
            op,
            "square triangular factor",
            format!("{}x{}", r.rows(), r.cols()),
        ));
    }
    Ok(())
}

fn check_diagonal(r: &DenseMatrix) -> Result<()> {
    match (0..r.rows()).find(|&i| r[(i, i)] == 0.0) {
        Some(index) => Err(Error::SingularTriangular { index }),
        None => Ok(()),
    }
}

/// Solves `X R = B` for upper-triangular `R`, one column of `X` at a time.
pub fn tri_solve_right(b: &DenseMatrix, r: &DenseMatrix) -> Result<DenseMatrix> {
    check_square("tri_solve_right", r)?;
    if b.cols() != r.rows() {
        return Err(Error::dims(
            "tri_solve_right",
            format!("B with {} columns", r.rows()),
            format!("{} columns", b.cols()),
        ));
    }
    check_diagonal(r)?;
    let mut x = b.clone();
    for j in 0..r.cols() {
        for i in 0..j {
            let rij = r[(i, j)];
            if rij != 0.0 {
                let (xi, xj) = x.two_cols_mut(i, j);
                axpy_slice(-rij, xi, xj);
            }
        }
        let inv = 1.0 / r[(j, j)];
        x.col_mut(j).iter_mut().for_each(|v| *v *= inv);
    }
    Ok(x)
}

/// Solves `X R^T = B` for upper-triangular `R`.
pub fn tri_solve_right_transposed(b: &DenseMatrix, r: &DenseMatrix) -> Result<DenseMatrix> {
    check_square("tri_solve_right_transposed", r)?;
    if b.cols() != r.rows() {
        return Err(Error::dims(
            "tri_solve_right_transposed",
            format!("B with {} columns", r.rows()),
            format!("{} columns", b.cols()),
        ));
    }
    check_diagonal(r)?;
    let n = r.rows();
    let mut x = b.clone();
    for j in (0..n).rev() {
        for i in j + 1..n {
            let rji = r[(j, i)];
            if rji != 0.0 {
                let (xi, xj) = x.two_cols_mut(i, j);
                axpy_slice(-rji, xi, xj);
            }
        }
        let inv = 1.0 / r[(j, j)];
        x.col_mut(j).iter_mut().for_each(|v| *v *= inv);
    }
    Ok(x)
}

/// In-place back substitution `x <- R^{-1} x`. No singularity check.
pub(crate) fn upper_solve_in_place(r: &DenseMatrix, x: &mut [f64]) {
    let n = r.rows();
    for j in (0..n).rev() {
        x[j] /= r[(j, j)];
        let xj = x[j];
        if xj != 0.0 {
            axpy_slice(-xj, &r.col(j)[..j], &mut x[..j]);
        }
    }
}

/// In-place forward substitution `x <- R^{-T} x`. No singularity check.
pub(crate) fn upper_transposed_solve_in_place(r: &DenseMatrix, x: &mut [f64]) {
    let n = r.rows();
    for j in 0..n {
        let col = &r.col(j)[..j];
        let mut s = x[j];
        for (c, xi) in col.iter().zip(&x[..j]) {
            s -= c * xi;
        }
        x[j] = s / r[(j, j)];
    }
}

/// Solves `R X = B` for upper-triangular `R`.
pub fn tri_solve_left(r: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    check_square("tri_solve_left", r)?;
    if b.rows() != r.rows() {
        return Err(Error::dims(
            "tri_solve_left",
            format!("{} rows", r.rows()),
            format!("{} rows", b.rows()),
        ));
    }
    check_diagonal(r)?;
    let mut x = b.clone();
    for c in 0..x.cols() {
        upper_solve_in_place(r, x.col_mut(c));
    }
    Ok(x)
}

/// Solves `R^T X = B` for upper-triangular `R`.
pub fn tri_solve_left_transposed(r: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    check_square("tri_solve_left_transposed", r)?;
    if b.rows() != r.rows() {
        return Err(Error::dims(
            "tri_solve_left_transposed",
            format!("{} rows", r.rows()),
            format!("{} rows", b.rows()),
        ));
    }
    check_diagonal(r)?;
    let mut x = b.clone();
    for c in 0..x.cols() {
        upper_transposed_solve_in_place(r, x.col_mut(c));
    }
    Ok(x)
}

/// Power-method estimates of `||R||_2` and `||R^{-1}||_2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormEstimates {
    pub norm_r: f64,
    pub norm_r_inv: f64,
}

/// Estimates `||R||_2` (iterating `z <- R^T (R z)`) and `||R^{-1}||_2`
/// (two triangular solves per step). Each step is `O(r^2)`.
///
/// Both estimates are Rayleigh-type lower bounds `||R x|| / ||x||`, so they
/// never exceed the true norms. Overflow or an exact zero on the diagonal
/// yields `norm_r_inv = +inf`.
pub fn estimate_norms(r: &DenseMatrix, iters: usize) -> Result<NormEstimates> {
    check_square("estimate_norms", r)?;
    if iters < 2 {
        return Err(Error::InvalidArgument(format!(
            "estimate_norms needs at least 2 iterations, got {iters}"
        )));
    }
    let n = r.rows();
    if n == 0 {
        return Ok(NormEstimates {
            norm_r: 0.0,
            norm_r_inv: 0.0,
        });
    }
    let start = || -> Vec<f64> {
        // deterministic start with no special alignment to triangular structure
        let v: Vec<f64> = (0..n)
            .map(|i| 1.0 + 0.5 * ((i * 7919 % 13) as f64 / 13.0))
            .collect();
        let nv = norm2(&v);
        v.into_iter().map(|x| x / nv).collect()
    };

    // ||R||
    let mut x = start();
    let mut norm_r: f64 = 0.0;
    for _ in 0..iters {
        let y = upper_mul(r, &x);
        let ny = norm2(&y);
        norm_r = norm_r.max(ny);
        if ny == 0.0 || !ny.is_finite() {
            break;
        }
        let mut z = upper_t_mul(r, &y);
        let nz = norm2(&z);
        if nz == 0.0 || !nz.is_finite() {
            break;
        }
        z.iter_mut().for_each(|v| *v /= nz);
        x = z;
    }

    // ||R^{-1}||
    let norm_r_inv = if (0..n).any(|i| r[(i, i)] == 0.0) {
        f64::INFINITY
    } else {
        let mut x = start();
        let mut est: f64 = 0.0;
        for _ in 0..iters {
            let mut y = x.clone();
            upper_solve_in_place(r, &mut y);
            let ny = norm2(&y);
            if !ny.is_finite() {
                est = f64::INFINITY;
                break;
            }
            est = est.max(ny);
            let mut z = y;
            upper_transposed_solve_in_place(r, &mut z);
            let nz = norm2(&z);
            if !nz.is_finite() {
                est = f64::INFINITY;
                break;
            }
            if nz == 0.0 {
                break;
            }
            z.iter_mut().for_each(|v| *v /= nz);
            x = z;
        }
        est
    };
    Ok(NormEstimates { norm_r, norm_r_inv })
}

fn upper_mul(r: &DenseMatrix, x: &[f64]) -> Vec<f64> {
    let n = r.rows();
    let mut y = vec![0.0; n];
    for j in 0..n {
        if x[j] != 0.0 {
            axpy_slice(x[j], &r.col(j)[..=j], &mut y[..=j]);
        }
    }
    y
}

fn upper_t_mul(r: &DenseMatrix, x: &[f64]) -> Vec<f64> {
    let n = r.rows();
    (0..n)
        .map(|j| {
            r.col(j)[..=j]
                .iter()
                .zip(&x[..=j])
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}
