//! Error measurement: the optimal truncated-SVD error and a residual-free
//! Frobenius error for factored approximants.

use crate::decomp::{Approximant, Factors};
use crate::error::{Error, Result};
use crate::kernels::{gemm, matmul, singular_values, DenseMatrix, MatrixRef, Trans};

/// Largest `m * n` handed to the dense SVD oracle.
pub const DEFAULT_SVD_CAP: usize = 2000 * 2000;

/// `sqrt(sum_{i > r_hat} sigma_i^2)` for non-increasing `sigma`.
pub fn tail_norm(sigma: &[f64], r_hat: usize) -> f64 {
    // sum from the small end for accuracy
    sigma
        .iter()
        .skip(r_hat)
        .rev()
        .map(|s| s * s)
        .sum::<f64>()
        .sqrt()
}

/// `||A - A_r_hat||_F` through the dense SVD.
pub fn optimal_error(a: &DenseMatrix, r_hat: usize) -> Result<f64> {
    optimal_error_capped(a, r_hat, DEFAULT_SVD_CAP)
}

pub fn optimal_error_capped(a: &DenseMatrix, r_hat: usize, cap: usize) -> Result<f64> {
    let requested = a.rows().saturating_mul(a.cols());
    if requested > cap {
        return Err(Error::CapExceeded {
            what: "dense SVD",
            requested,
            cap,
        });
    }
    Ok(tail_norm(&singular_values(a)?, r_hat))
}

/// `||A - A_hat||_F` from `||A||^2 - 2<A, A_hat> + ||A_hat||^2`, touching `A`
/// once and otherwise working with factor-sized blocks.
pub fn frobenius_error_factored<'a>(
    a: impl Into<MatrixRef<'a>>,
    approx: &Approximant,
) -> Result<f64> {
    let a = a.into();
    if (a.rows(), a.cols()) != approx.shape() {
        return Err(Error::dims(
            "factored error",
            format!("{:?}", approx.shape()),
            format!("{:?}", (a.rows(), a.cols())),
        ));
    }
    let norm_a = a.frobenius_norm();
    let (inner, norm_hat_sq) = match approx.factors() {
        Factors::Sketched { f, g, core, .. } => {
            let atf = matmul(a, f, true)?;
            let m = gemm(g, Trans::No, &atf, Trans::No)?;
            let inner = core.apply_to(&m)?.trace();
            let ggt = gemm(g, Trans::No, g, Trans::Yes)?;
            let s1 = core.apply_to(&ggt)?;
            let s = core.apply_to(&s1.transpose())?;
            let ftf = gemm(f, Trans::Yes, f, Trans::No)?;
            // trace(F^T F S)
            let hat: f64 = (0..ftf.cols())
                .map(|j| {
                    (0..ftf.rows())
                        .map(|i| ftf[(j, i)] * s[(i, j)])
                        .sum::<f64>()
                })
                .sum();
            (inner, hat)
        }
        Factors::Orthogonal { q, u0, sigma, v0 } => {
            let atq = matmul(a, q, true)?;
            let t = gemm(&atq, Trans::No, u0, Trans::No)?;
            let inner: f64 = sigma
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    s * t
                        .col(i)
                        .iter()
                        .zip(v0.col(i))
                        .map(|(x, y)| x * y)
                        .sum::<f64>()
                })
                .sum();
            (inner, sigma.iter().map(|s| s * s).sum())
        }
    };
    let sq = norm_a * norm_a - 2.0 * inner + norm_hat_sq;
    Ok(if sq.is_nan() {
        f64::NAN
    } else {
        sq.max(0.0).sqrt()
    })
}

/// `||A - A_hat||_F` from the residual formed one column block at a time:
/// exact to rounding, with `O(m * block)` extra memory.
pub fn frobenius_error_blocked<'a>(
    a: impl Into<MatrixRef<'a>>,
    approx: &Approximant,
    block: usize,
) -> Result<f64> {
    let a = a.into();
    let (m, n) = approx.shape();
    if (a.rows(), a.cols()) != (m, n) {
        return Err(Error::dims(
            "blocked error",
            format!("{m}x{n}"),
            format!("{}x{}", a.rows(), a.cols()),
        ));
    }
    // A_hat = L R^T with L m x k, R n x k
    let (left, right) = match approx.factors() {
        Factors::Sketched { f, g, core, .. } => (f.clone(), core.apply_to(g)?.transpose()),
        Factors::Orthogonal { q, u0, sigma, v0 } => {
            let mut l = gemm(q, Trans::No, u0, Trans::No)?;
            for (j, s) in sigma.iter().enumerate() {
                l.col_mut(j).iter_mut().for_each(|x| *x *= s);
            }
            (l, v0.clone())
        }
    };
    let block = block.max(1);
    let mut sum = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + block).min(n);
        let mut res = a.column_block(start..end).view().to_dense();
        let hat = gemm(&left, Trans::No, &right.row_block(start..end), Trans::Yes)?;
        res = res.sub(&hat)?;
        let nrm = res.frobenius_norm();
        sum += nrm * nrm;
        start = end;
    }
    Ok(sum.sqrt())
}

/// `||A - A_hat||_F` from an explicit residual.
pub fn frobenius_error_dense(a: &DenseMatrix, approx: &Approximant) -> Result<f64> {
    let hat = approx.materialize_capped(usize::MAX)?;
    Ok(a.sub(&hat)?.frobenius_norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomp::{approximate, Method, Options};
    use crate::kernels::svd;
    use crate::sketch::gaussian_matrix;

    #[test]
    fn identity_tail() {
        let a = DenseMatrix::identity(9);
        assert!((optimal_error(&a, 4).unwrap() - 5f64.sqrt()).abs() < 1e-14);
        assert_eq!(tail_norm(&[3.0, 2.0], 2), 0.0);
    }

    #[test]
    fn optimal_error_matches_direct_truncation() {
        let a = gaussian_matrix(30, 20, 5, 0);
        let f = svd(&a).unwrap();
        let k = 6;
        let mut us = f.u.columns(0..k);
        for j in 0..k {
            us.col_mut(j).iter_mut().for_each(|x| *x *= f.sigma[j]);
        }
        let ak = gemm(&us, Trans::No, &f.v.columns(0..k), Trans::Yes).unwrap();
        let direct = a.sub(&ak).unwrap().frobenius_norm();
        assert!((direct - optimal_error(&a, k).unwrap()).abs() < 1e-10);
        assert!(optimal_error_capped(&a, 1, 10).is_err());
    }

    #[test]
    fn factored_matches_dense_residual() {
        let a = gaussian_matrix(100, 80, 9, 0);
        for method in [
            Method::GnPlain,
            Method::GnStabilized,
            Method::Hmt,
            Method::SubspaceIter,
        ] {
            let approx = approximate((&a).into(), method, &Options::new(10).seed(2)).unwrap();
            let fact = frobenius_error_factored(&a, &approx).unwrap();
            let dense = frobenius_error_dense(&a, &approx).unwrap();
            assert!(
                (fact - dense).abs() <= 1e-6 * dense,
                "{method}: {fact} vs {dense}"
            );
            let blocked = frobenius_error_blocked(&a, &approx, 7).unwrap();
            assert!(
                (blocked - dense).abs() <= 1e-12 * dense,
                "{method}: {blocked} vs {dense}"
            );
        }
    }
}
