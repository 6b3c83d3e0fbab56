//! Core pseudoinverse construction, instability detection and the plain to
//! stabilized switch.
//!
//! Every core is stored as `pinv = P * T^{-1} * Q^T` (or `T^{-T}`), where `Q`
//! has orthonormal columns, `T` is upper triangular and `P` is optional.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::dense::norm2;
use crate::kernels::{
    estimate_norms, gemm, pivoted_qr, svd, thin_qr, tri_solve_left, tri_solve_left_transposed,
    tri_solve_right, tri_solve_right_transposed, DenseMatrix, Trans, UNIT_ROUNDOFF,
};

pub const DEFAULT_DETECT_ITERS: usize = 10;
pub const DEFAULT_THRESHOLD: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpsilonMode {
    /// `eps = coefficient * ||M||_2` (estimated).
    Relative,
    /// `eps = coefficient`.
    Absolute,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonPolicy {
    pub mode: EpsilonMode,
    pub coefficient: f64,
}

impl Default for EpsilonPolicy {
    fn default() -> Self {
        EpsilonPolicy {
            mode: EpsilonMode::Relative,
            coefficient: 10.0 * UNIT_ROUNDOFF,
        }
    }
}

impl EpsilonPolicy {
    pub fn relative(coefficient: f64) -> Result<Self> {
        Self::checked(EpsilonMode::Relative, coefficient)
    }

    pub fn absolute(epsilon: f64) -> Result<Self> {
        Self::checked(EpsilonMode::Absolute, epsilon)
    }

    fn checked(mode: EpsilonMode, coefficient: f64) -> Result<Self> {
        if !(coefficient > 0.0 && coefficient.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "epsilon coefficient must be positive and finite, got {coefficient}"
            )));
        }
        Ok(EpsilonPolicy { mode, coefficient })
    }

    /// Threshold for a core whose spectral norm is about `norm`.
    pub fn resolve(&self, norm: f64) -> f64 {
        let eps = match self.mode {
            EpsilonMode::Relative => self.coefficient * norm,
            EpsilonMode::Absolute => self.coefficient,
        };
        eps.max(f64::MIN_POSITIVE)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TruncationPath {
    PlainQr,
    SvdTruncate,
    RrqrTruncate,
    DiagPerturb,
}

impl TruncationPath {
    pub fn name(self) -> &'static str {
        match self {
            TruncationPath::PlainQr => "PlainQR",
            TruncationPath::SvdTruncate => "SVDTruncate",
            TruncationPath::RrqrTruncate => "RRQRTruncate",
            TruncationPath::DiagPerturb => "DiagPerturb",
        }
    }
}

impl std::fmt::Display for TruncationPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TruncationPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "plainqr" | "plain" => Ok(TruncationPath::PlainQr),
            "svdtruncate" | "svd" => Ok(TruncationPath::SvdTruncate),
            "rrqrtruncate" | "rrqr" => Ok(TruncationPath::RrqrTruncate),
            "diagperturb" | "diag" => Ok(TruncationPath::DiagPerturb),
            _ => Err(Error::InvalidArgument(format!(
                "unknown truncation path '{s}'"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstabilityReport {
    pub norm_r: f64,
    pub norm_r_inv: f64,
    pub condition_estimate: f64,
    pub flagged: bool,
    pub threshold: f64,
}

/// Factored (pseudo)inverse of an `(r+l) x r` core matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoreFactor {
    rows: usize,
    cols: usize,
    q: DenseMatrix,
    tri: DenseMatrix,
    tri_transposed: bool,
    right: Option<DenseMatrix>,
    epsilon: Option<f64>,
    path: TruncationPath,
    report: Option<InstabilityReport>,
    fallback_used: bool,
}

impl CoreFactor {
    /// Core shape `(r + l, r)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn numerical_rank(&self) -> usize {
        self.q.cols()
    }

    pub fn epsilon(&self) -> Option<f64> {
        self.epsilon
    }

    pub fn path(&self) -> TruncationPath {
        self.path
    }

    pub fn report(&self) -> Option<&InstabilityReport> {
        self.report.as_ref()
    }

    pub fn flagged(&self) -> bool {
        self.report.is_some_and(|r| r.flagged)
    }

    pub fn fallback_used(&self) -> bool {
        self.fallback_used
    }

    pub fn q(&self) -> &DenseMatrix {
        &self.q
    }

    /// Triangular block (`R` on the plain path).
    pub fn triangular(&self) -> &DenseMatrix {
        &self.tri
    }

    pub fn right_factor(&self) -> Option<&DenseMatrix> {
        self.right.as_ref()
    }

    pub fn tri_transposed(&self) -> bool {
        self.tri_transposed
    }

    pub fn memory_entries(&self) -> usize {
        self.q.memory_entries()
            + self.tri.memory_entries()
            + self.right.as_ref().map_or(0, |p| p.memory_entries())
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        shape: (usize, usize),
        q: DenseMatrix,
        tri: DenseMatrix,
        tri_transposed: bool,
        right: Option<DenseMatrix>,
        epsilon: Option<f64>,
        path: TruncationPath,
        report: Option<InstabilityReport>,
        fallback_used: bool,
    ) -> Result<Self> {
        let (rows, cols) = shape;
        let k = q.cols();
        let right_ok = match &right {
            Some(p) => p.shape() == (cols, k),
            None => k == cols,
        };
        if q.rows() != rows || tri.shape() != (k, k) || !right_ok {
            return Err(Error::InvalidArgument(format!(
                "inconsistent core factor: shape {rows}x{cols}, q {:?}, tri {:?}, right {:?}",
                q.shape(),
                tri.shape(),
                right.as_ref().map(|p| p.shape())
            )));
        }
        Ok(CoreFactor {
            rows,
            cols,
            q,
            tri,
            tri_transposed,
            right,
            epsilon,
            path,
            report,
            fallback_used,
        })
    }

    fn solve_left(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        if self.tri_transposed {
            tri_solve_left_transposed(&self.tri, b)
        } else {
            tri_solve_left(&self.tri, b)
        }
    }

    fn solve_right(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        if self.tri_transposed {
            tri_solve_right_transposed(b, &self.tri)
        } else {
            tri_solve_right(b, &self.tri)
        }
    }

    /// `pinv * W` for `W` with `r + l` rows, evaluated right to left.
    pub fn apply_to(&self, w: &DenseMatrix) -> Result<DenseMatrix> {
        if w.rows() != self.rows {
            return Err(Error::dims(
                "core apply",
                format!("{} rows", self.rows),
                format!("{} rows", w.rows()),
            ));
        }
        let qtw = gemm(&self.q, Trans::Yes, w, Trans::No)?;
        let t = self.solve_left(&qtw)?;
        match &self.right {
            Some(p) => gemm(p, Trans::No, &t, Trans::No),
            None => Ok(t),
        }
    }

    /// `W * pinv` for `W` with `r` columns, evaluated left to right.
    pub fn apply_from(&self, w: &DenseMatrix) -> Result<DenseMatrix> {
        if w.cols() != self.cols {
            return Err(Error::dims(
                "core apply",
                format!("{} columns", self.cols),
                format!("{} columns", w.cols()),
            ));
        }
        let wp = match &self.right {
            Some(p) => gemm(w, Trans::No, p, Trans::No)?,
            None => w.clone(),
        };
        let t = self.solve_right(&wp)?;
        gemm(&t, Trans::No, &self.q, Trans::Yes)
    }

    pub(crate) fn with_report(mut self, report: InstabilityReport) -> Self {
        self.report = Some(report);
        self
    }

    /// `W * P * T^{-1}` (the left half of the core), `k` columns.
    pub(crate) fn apply_left_half(&self, w: &DenseMatrix) -> Result<DenseMatrix> {
        let wp = match &self.right {
            Some(p) => gemm(w, Trans::No, p, Trans::No)?,
            None => w.clone(),
        };
        self.solve_right(&wp)
    }

    /// Explicit `r x (r + l)` pseudoinverse. Test and diagnostics use.
    pub fn to_dense(&self) -> Result<DenseMatrix> {
        self.apply_to(&DenseMatrix::identity(self.rows))
    }
}

fn check_core_shape(op: &'static str, m: &DenseMatrix) -> Result<()> {
    if m.rows() < m.cols() {
        return Err(Error::dims(
            op,
            "core with rows >= cols",
            format!("{}x{}", m.rows(), m.cols()),
        ));
    }
    if !m.is_finite() {
        return Err(Error::InvalidArgument(
            "core matrix contains non-finite entries".into(),
        ));
    }
    Ok(())
}

/// Power-iteration estimate of `||M||_2` (a lower bound).
pub fn spectral_norm_estimate(m: &DenseMatrix, iters: usize) -> f64 {
    let n = m.cols();
    if n == 0 || m.rows() == 0 {
        return 0.0;
    }
    let mut x = DenseMatrix::from_fn(n, 1, |i, _| 1.0 + 0.5 * ((i * 7919 % 13) as f64 / 13.0));
    let nx = x.frobenius_norm();
    x.scale(1.0 / nx);
    let mut est: f64 = 0.0;
    for _ in 0..iters.max(1) {
        let y = gemm(m, Trans::No, &x, Trans::No).expect("shapes agree");
        let ny = norm2(y.as_slice());
        est = est.max(ny);
        if ny == 0.0 || !ny.is_finite() {
            break;
        }
        let z = gemm(m, Trans::Yes, &y, Trans::No).expect("shapes agree");
        let nz = norm2(z.as_slice());
        if nz == 0.0 || !nz.is_finite() {
            break;
        }
        x = z.scaled(1.0 / nz);
    }
    est
}

/// Thin QR of the core; `R^{-1} Q^T` applied by triangular solves.
pub fn build_core_plain(m: &DenseMatrix) -> Result<CoreFactor> {
    check_core_shape("build_core_plain", m)?;
    let (rows, cols) = m.shape();
    let qr = thin_qr(m)?;
    if let Some(index) = (0..cols).find(|&i| qr.r[(i, i)] == 0.0) {
        return Err(Error::SingularCore { index });
    }
    Ok(CoreFactor {
        rows,
        cols,
        q: qr.q,
        tri: qr.r,
        tri_transposed: false,
        right: None,
        epsilon: None,
        path: TruncationPath::PlainQr,
        report: None,
        fallback_used: false,
    })
}

/// Epsilon-pseudoinverse of the core along one of the stabilized paths.
pub fn build_core_truncated(
    m: &DenseMatrix,
    epsilon: f64,
    path: TruncationPath,
) -> Result<CoreFactor> {
    check_core_shape("build_core_truncated", m)?;
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let (rows, cols) = m.shape();
    let mut core = match path {
        TruncationPath::PlainQr => return build_core_plain(m),
        TruncationPath::SvdTruncate => {
            let f = svd(m)?;
            let k = f.sigma.iter().take_while(|&&s| s > epsilon).count();
            CoreFactor {
                rows,
                cols,
                q: f.u.columns(0..k),
                tri: DenseMatrix::diag(&f.sigma[..k]),
                tri_transposed: false,
                right: Some(f.v.columns(0..k)),
                epsilon: Some(epsilon),
                path,
                report: None,
                fallback_used: false,
            }
        }
        TruncationPath::RrqrTruncate => {
            // M P = Q1 R; keep R1 = R[..k, :], then R1^T = Q2 R2 so that
            // pinv = P Q2 R2^{-T} Q1^T
            let pq = pivoted_qr(m)?;
            let k = (0..cols)
                .take_while(|&i| pq.r[(i, i)].abs() > epsilon)
                .count();
            let r1t = pq.r.row_block(0..k).transpose();
            let qr2 = thin_qr(&r1t)?;
            let mut right = DenseMatrix::zeros(cols, k);
            for (j, &p) in pq.perm.iter().enumerate() {
                for c in 0..k {
                    right[(p, c)] = qr2.q[(j, c)];
                }
            }
            CoreFactor {
                rows,
                cols,
                q: pq.q.columns(0..k),
                tri: qr2.r,
                tri_transposed: true,
                right: Some(right),
                epsilon: Some(epsilon),
                path,
                report: None,
                fallback_used: false,
            }
        }
        TruncationPath::DiagPerturb => {
            let qr = thin_qr(m)?;
            let mut r = qr.r;
            for i in 0..cols {
                let d = r[(i, i)];
                if d.abs() < epsilon {
                    r[(i, i)] = if d < 0.0 { -epsilon } else { epsilon };
                }
            }
            CoreFactor {
                rows,
                cols,
                q: qr.q,
                tri: r,
                tri_transposed: false,
                right: None,
                epsilon: Some(epsilon),
                path,
                report: None,
                fallback_used: false,
            }
        }
    };
    core.epsilon = Some(epsilon);
    Ok(core)
}

/// Stabilized core with `eps` resolved from `policy`.
pub fn build_core_sgn(
    m: &DenseMatrix,
    policy: &EpsilonPolicy,
    path: TruncationPath,
) -> Result<CoreFactor> {
    check_core_shape("build_core_sgn", m)?;
    let eps = policy.resolve(spectral_norm_estimate(m, DEFAULT_DETECT_ITERS));
    build_core_truncated(m, eps, path)
}

/// Condition check of a computed triangular factor; flags when
/// `||R|| ||R^{-1}|| u > threshold`.
pub fn detect(r: &DenseMatrix, threshold: f64) -> Result<InstabilityReport> {
    detect_with_iters(r, threshold, DEFAULT_DETECT_ITERS)
}

pub fn detect_with_iters(
    r: &DenseMatrix,
    threshold: f64,
    iters: usize,
) -> Result<InstabilityReport> {
    let est = estimate_norms(r, iters)?;
    let condition_estimate = est.norm_r * est.norm_r_inv;
    // inf * 0 for an all-zero factor is NaN, which is also a failure signal
    let flagged = condition_estimate.is_nan() || condition_estimate * UNIT_ROUNDOFF > threshold;
    Ok(InstabilityReport {
        norm_r: est.norm_r,
        norm_r_inv: est.norm_r_inv,
        condition_estimate,
        flagged,
        threshold,
    })
}

/// Plain core with detection attached (no switching). An exact zero on the
/// diagonal is an error.
pub fn build_core_plain_checked(m: &DenseMatrix, threshold: f64) -> Result<CoreFactor> {
    let mut core = build_core_plain(m)?;
    core.report = Some(detect(&core.tri, threshold)?);
    Ok(core)
}

pub fn core_with_fallback(m: &DenseMatrix, policy: &EpsilonPolicy) -> Result<CoreFactor> {
    core_with_fallback_at(m, policy, DEFAULT_THRESHOLD)
}

/// Plain core unless detection flags it (or it is exactly singular), in which
/// case the core is rebuilt along the rank-revealing path.
pub fn core_with_fallback_at(
    m: &DenseMatrix,
    policy: &EpsilonPolicy,
    threshold: f64,
) -> Result<CoreFactor> {
    let report = match build_core_plain(m) {
        Ok(mut core) => {
            let report = detect(&core.tri, threshold)?;
            if !report.flagged {
                core.report = Some(report);
                return Ok(core);
            }
            report
        }
        Err(Error::SingularCore { .. }) => {
            let qr = thin_qr(m)?;
            detect(&qr.r, threshold)?
        }
        Err(e) => return Err(e),
    };
    log::debug!(
        "core condition estimate {:.3e} exceeds threshold; switching to {}",
        report.condition_estimate,
        TruncationPath::RrqrTruncate
    );
    let mut core = build_core_sgn(m, policy, TruncationPath::RrqrTruncate)?;
    core.report = Some(report);
    core.fallback_used = true;
    Ok(core)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::singular_values;

    fn close(a: &DenseMatrix, b: &DenseMatrix, tol: f64) -> bool {
        a.sub(b).unwrap().max_abs() <= tol
    }

    #[test]
    fn plain_on_orthonormal_is_transpose() {
        let q = thin_qr(&DenseMatrix::from_fn(6, 3, |i, j| {
            ((i + 2 * j) % 5) as f64 + (i == j) as u8 as f64
        }))
        .unwrap()
        .q;
        let core = build_core_plain(&q).unwrap();
        assert!(close(&core.to_dense().unwrap(), &q.transpose(), 1e-12));
    }

    #[test]
    fn plain_on_diagonal() {
        let m = DenseMatrix::from_rows(&[&[2.0, 0.0], &[0.0, 3.0], &[0.0, 0.0]]);
        let want = DenseMatrix::from_rows(&[&[0.5, 0.0, 0.0], &[0.0, 1.0 / 3.0, 0.0]]);
        assert!(close(
            &build_core_plain(&m).unwrap().to_dense().unwrap(),
            &want,
            1e-14
        ));
    }

    #[test]
    fn svd_truncation_of_diagonal() {
        let m = DenseMatrix::diag(&[1.0, 1e-20]);
        let core = build_core_truncated(&m, 1e-15, TruncationPath::SvdTruncate).unwrap();
        assert_eq!(core.numerical_rank(), 1);
        assert!(close(
            &core.to_dense().unwrap(),
            &DenseMatrix::diag(&[1.0, 0.0]),
            1e-15
        ));
    }

    #[test]
    fn all_paths_agree_when_well_conditioned() {
        let m = DenseMatrix::from_fn(7, 4, |i, j| {
            ((i * 3 + j * 5) % 7) as f64 - 3.0 + 4.0 * (i == j) as u8 as f64
        });
        let plain = build_core_plain(&m).unwrap().to_dense().unwrap();
        let smin = *singular_values(&m).unwrap().last().unwrap();
        for path in [
            TruncationPath::SvdTruncate,
            TruncationPath::RrqrTruncate,
            TruncationPath::DiagPerturb,
        ] {
            let c = build_core_truncated(&m, 1e-15, path).unwrap();
            assert_eq!(c.numerical_rank(), 4);
            assert!(
                close(&c.to_dense().unwrap(), &plain, 1e-10 / smin),
                "{path}"
            );
        }
    }

    #[test]
    fn apply_orders_agree_with_dense() {
        let m = DenseMatrix::from_fn(6, 4, |i, j| 1.0 / (i + j + 1) as f64);
        for path in [
            TruncationPath::SvdTruncate,
            TruncationPath::RrqrTruncate,
            TruncationPath::DiagPerturb,
        ] {
            let c = build_core_truncated(&m, 1e-6, path).unwrap();
            let p = c.to_dense().unwrap();
            let w = DenseMatrix::from_fn(6, 3, |i, j| (i * j) as f64 - 1.0);
            let want = gemm(&p, Trans::No, &w, Trans::No).unwrap();
            assert!(close(
                &c.apply_to(&w).unwrap(),
                &want,
                1e-8 * want.max_abs().max(1.0)
            ));
            let w = DenseMatrix::from_fn(2, 4, |i, j| (i + j) as f64);
            let want = gemm(&w, Trans::No, &p, Trans::No).unwrap();
            assert!(close(
                &c.apply_from(&w).unwrap(),
                &want,
                1e-8 * want.max_abs().max(1.0)
            ));
        }
    }

    #[test]
    fn detect_examples() {
        assert!(!detect(&DenseMatrix::identity(4), 1.0).unwrap().flagged);
        assert!(
            detect(&DenseMatrix::diag(&[1.0, 1e-20]), 1.0)
                .unwrap()
                .flagged
        );
        assert!(detect(&DenseMatrix::zeros(3, 3), 1.0).unwrap().flagged);
    }

    #[test]
    fn fallback_switches_on_singular_core() {
        let m = DenseMatrix::from_rows(&[&[1.0, 0.0], &[0.0, 1e-18], &[0.0, 0.0]]);
        let c = core_with_fallback(&m, &EpsilonPolicy::default()).unwrap();
        assert_eq!(c.path(), TruncationPath::RrqrTruncate);
        assert!(c.fallback_used() && c.flagged());
        let m = DenseMatrix::from_rows(&[&[1.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]]);
        assert!(matches!(
            build_core_plain(&m),
            Err(Error::SingularCore { index: 1 })
        ));
        let c = core_with_fallback(&m, &EpsilonPolicy::default()).unwrap();
        assert_eq!(c.numerical_rank(), 1);
        let c = core_with_fallback(&DenseMatrix::identity(3), &EpsilonPolicy::default()).unwrap();
        assert_eq!(c.path(), TruncationPath::PlainQr);
    }

    #[test]
    fn zero_core_truncates_to_rank_zero() {
        let c = build_core_sgn(
            &DenseMatrix::zeros(4, 2),
            &EpsilonPolicy::default(),
            TruncationPath::RrqrTruncate,
        )
        .unwrap();
        assert_eq!(c.numerical_rank(), 0);
        assert_eq!(c.to_dense().unwrap(), DenseMatrix::zeros(2, 4));
    }

    #[test]
    fn policy_validation() {
        assert!(EpsilonPolicy::relative(0.0).is_err());
        assert!(EpsilonPolicy::absolute(f64::NAN).is_err());
        assert_eq!(EpsilonPolicy::absolute(1e-15).unwrap().resolve(5.0), 1e-15);
        assert_eq!(EpsilonPolicy::default().resolve(0.0), f64::MIN_POSITIVE);
    }
}
