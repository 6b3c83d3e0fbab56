use super::dense::{dot, gemm, norm2, DenseMatrix, Trans};
use super::qr::thin_qr;
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 60;

/// Thin SVD `M = U diag(sigma) V^T` with `k = min(m, n)` columns,
/// singular values sorted in non-increasing order.
#[derive(Clone, Debug)]
pub struct SvdFactors {
    pub u: DenseMatrix,
    pub sigma: Vec<f64>,
    pub v: DenseMatrix,
}

/// One-sided Jacobi SVD on the transposed triangular factor of a QR
/// preconditioning step.
pub fn svd(m: &DenseMatrix) -> Result<SvdFactors> {
    if !m.is_finite() {
        return Err(Error::InvalidArgument(
            "svd input contains non-finite entries".into(),
        ));
    }
    if m.rows() < m.cols() {
        let t = svd_tall(&m.transpose())?;
        return Ok(SvdFactors {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        });
    }
    svd_tall(m)
}

/// Singular values only, in non-increasing order.
pub fn singular_values(m: &DenseMatrix) -> Result<Vec<f64>> {
    if !m.is_finite() {
        return Err(Error::InvalidArgument(
            "svd input contains non-finite entries".into(),
        ));
    }
    let tall = if m.rows() < m.cols() {
        m.transpose()
    } else {
        m.clone()
    };
    let n = tall.cols();
    if n == 0 {
        return Ok(Vec::new());
    }
    let qr = thin_qr(&tall)?;
    let mut w = qr.r.transpose();
    jacobi(&mut w, None)?;
    let mut s: Vec<f64> = (0..n).map(|j| norm2(w.col(j))).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

fn svd_tall(m: &DenseMatrix) -> Result<SvdFactors> {
    let (rows, n) = m.shape();
    if n == 0 {
        return Ok(SvdFactors {
            u: DenseMatrix::zeros(rows, 0),
            sigma: Vec::new(),
            v: DenseMatrix::zeros(0, 0),
        });
    }
    let qr = thin_qr(m)?;
    // R = V_w S U_w^T where W = R^T = U_w S V_w^T
    let mut w = qr.r.transpose();
    let mut vw = DenseMatrix::identity(n);
    jacobi(&mut w, Some(&mut vw))?;

    let mut sigma: Vec<f64> = (0..n).map(|j| norm2(w.col(j))).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));

    let mut uw = DenseMatrix::zeros(n, n);
    let mut vw_sorted = DenseMatrix::zeros(n, n);
    let mut missing = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        vw_sorted.col_mut(dst).copy_from_slice(vw.col(src));
        let s = sigma[src];
        if s > 0.0 {
            let inv = 1.0 / s;
            for (o, x) in uw.col_mut(dst).iter_mut().zip(w.col(src)) {
                *o = x * inv;
            }
        } else {
            missing.push(dst);
        }
    }
    sigma = order.iter().map(|&i| sigma[i]).collect();
    // columns at roundoff level carry no direction information; re-orthogonalize
    // them against the dominant ones (the reconstruction error this adds is O(eps * sigma_1))
    let negligible = f64::EPSILON * n as f64 * sigma[0];
    for j in 0..n {
        if sigma[j] > 0.0 && sigma[j] <= negligible {
            for _ in 0..2 {
                for k in 0..j {
                    let p = dot(uw.col(k), uw.col(j));
                    let (ck, cj) = uw.two_cols_mut(k, j);
                    cj.iter_mut().zip(ck.iter()).for_each(|(x, q)| *x -= p * q);
                }
            }
            let nj = norm2(uw.col(j));
            if nj > 0.5 {
                uw.col_mut(j).iter_mut().for_each(|x| *x /= nj);
            } else {
                uw.col_mut(j).fill(0.0);
                missing.push(j);
            }
        }
    }
    complete_orthonormal(&mut uw, &missing);

    let u = gemm(&qr.q, Trans::No, &vw_sorted, Trans::No)?;
    Ok(SvdFactors { u, sigma, v: uw })
}

/// Orthogonalizes the columns of `w` in place by plane rotations, optionally
/// accumulating the rotations into `v`.
fn jacobi(w: &mut DenseMatrix, mut v: Option<&mut DenseMatrix>) -> Result<()> {
    let n = w.cols();
    let tol = f64::EPSILON * (w.rows() as f64).sqrt();
    let mut norms: Vec<f64> = (0..n).map(|j| dot(w.col(j), w.col(j))).collect();
    for sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in i + 1..n {
                let alpha = norms[i];
                let beta = norms[j];
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma = dot(w.col(i), w.col(j));
                if gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(w, i, j, c, s);
                if let Some(v) = v.as_deref_mut() {
                    rotate(v, i, j, c, s);
                }
                norms[i] = dot(w.col(i), w.col(i));
                norms[j] = dot(w.col(j), w.col(j));
            }
        }
        if !rotated {
            log::trace!("jacobi svd converged after {} sweeps", sweep + 1);
            return Ok(());
        }
    }
    Err(Error::NonConvergence { sweeps: MAX_SWEEPS })
}

fn rotate(m: &mut DenseMatrix, i: usize, j: usize, c: f64, s: f64) {
    let (ci, cj) = m.two_cols_mut(i, j);
    for (a, b) in ci.iter_mut().zip(cj.iter_mut()) {
        let x = *a;
        let y = *b;
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

/// Fills the listed (zero) columns of `u` so that all columns are orthonormal.
fn complete_orthonormal(u: &mut DenseMatrix, missing: &[usize]) {
    let n = u.rows();
    let mut filled: Vec<bool> = (0..u.cols()).map(|j| !missing.contains(&j)).collect();
    let mut candidate = 0;
    for &dst in missing {
        while candidate < n {
            let mut e = vec![0.0; n];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for k in 0..u.cols() {
                    if filled[k] {
                        let p = dot(u.col(k), &e);
                        e.iter_mut().zip(u.col(k)).for_each(|(x, q)| *x -= p * q);
                    }
                }
            }
            let ne = norm2(&e);
            if ne > 0.5 {
                u.col_mut(dst)
                    .iter_mut()
                    .zip(&e)
                    .for_each(|(o, x)| *o = x / ne);
                filled[dst] = true;
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(m: &DenseMatrix, tol: f64) -> SvdFactors {
        let f = svd(m).unwrap();
        let k = m.rows().min(m.cols());
        assert_eq!(f.u.shape(), (m.rows(), k));
        assert_eq!(f.v.shape(), (m.cols(), k));
        let mut us = f.u.clone();
        for j in 0..k {
            us.col_mut(j).iter_mut().for_each(|x| *x *= f.sigma[j]);
        }
        let rec = gemm(&us, Trans::No, &f.v, Trans::Yes).unwrap();
        let scale = m.frobenius_norm().max(1.0);
        assert!(rec.sub(m).unwrap().frobenius_norm() <= tol * scale);
        let utu = gemm(&f.u, Trans::Yes, &f.u, Trans::No).unwrap();
        assert!(utu.sub(&DenseMatrix::identity(k)).unwrap().max_abs() <= tol);
        let vtv = gemm(&f.v, Trans::Yes, &f.v, Trans::No).unwrap();
        assert!(vtv.sub(&DenseMatrix::identity(k)).unwrap().max_abs() <= tol);
        assert!(f.sigma.windows(2).all(|w| w[0] >= w[1]));
        f
    }

    #[test]
    fn two_by_two_by_hand() {
        // [[3, 0], [4, 5]]: A^T A = [[25, 20], [20, 25]], eigenvalues 45 and 5
        let a = DenseMatrix::from_rows(&[&[3.0, 0.0], &[4.0, 5.0]]);
        let f = check(&a, 1e-14);
        assert!((f.sigma[0] - 45f64.sqrt()).abs() < 1e-14);
        assert!((f.sigma[1] - 5f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn diagonal_is_sorted() {
        let f = check(&DenseMatrix::diag(&[1.0, 3.0, 2.0]), 1e-15);
        assert_eq!(f.sigma, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn rank_deficient_and_wide() {
        let a = DenseMatrix::from_fn(12, 7, |i, j| ((i + 1) * (j + 2)) as f64);
        let f = check(&a, 1e-13);
        assert!(f.sigma[1] <= 1e-13 * f.sigma[0]);
        check(&a.transpose(), 1e-13);
        let z = DenseMatrix::zeros(5, 3);
        let f = check(&z, 1e-15);
        assert_eq!(f.sigma, vec![0.0; 3]);
    }

    #[test]
    fn pseudo_random_matches_singular_values() {
        let mut s = 99u64;
        let a = DenseMatrix::from_fn(60, 45, |_, _| {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        });
        let f = check(&a, 1e-12);
        let sv = singular_values(&a).unwrap();
        for (x, y) in f.sigma.iter().zip(&sv) {
            assert!((x - y).abs() <= 1e-13 * f.sigma[0]);
        }
        // ||A||_F^2 equals the sum of squared singular values
        let sum: f64 = sv.iter().map(|x| x * x).sum();
        assert!((sum - a.frobenius_norm().powi(2)).abs() <= 1e-12 * sum);
    }

    #[test]
    fn rejects_nan() {
        let mut a = DenseMatrix::identity(2);
        a[(0, 1)] = f64::NAN;
        assert!(svd(&a).is_err());
    }
}
