//! Expected-error bounds for Gaussian sketches and a leading-order flop model.

use serde::{Deserialize, Serialize};

use crate::decomp::Method;
use crate::error::{Error, Result};
use crate::sketch::SketchKind;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub r: usize,
    pub r_hat: usize,
    pub ell: usize,
    /// `||A - A_r_hat||_F`
    pub tail_f: f64,
}

impl BoundInputs {
    pub fn new(r: usize, r_hat: usize, ell: usize, tail_f: f64) -> Self {
        BoundInputs {
            r,
            r_hat,
            ell,
            tail_f,
        }
    }

    fn check_rank(&self) -> Result<()> {
        if self.r_hat + 2 > self.r {
            return Err(Error::InvalidArgument(format!(
                "bound needs r_hat <= r - 2, got r = {}, r_hat = {}",
                self.r, self.r_hat
            )));
        }
        if !(self.tail_f >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tail norm must be non-negative, got {}",
                self.tail_f
            )));
        }
        Ok(())
    }

    fn check_ell(&self) -> Result<()> {
        if self.ell < 2 {
            return Err(Error::InvalidArgument(format!(
                "bound needs ell >= 2, got {}",
                self.ell
            )));
        }
        Ok(())
    }
}

/// `sqrt(1 + r/(r - r_hat - 1)) ||A - A_r_hat||_F`
pub fn bound_hmt(b: &BoundInputs) -> Result<f64> {
    b.check_rank()?;
    let (r, rh) = (b.r as f64, b.r_hat as f64);
    Ok((1.0 + r / (r - rh - 1.0)).sqrt() * b.tail_f)
}

/// `sqrt(1 + (r+ell)/(ell-1))` times the HMT bound.
pub fn bound_gn(b: &BoundInputs) -> Result<f64> {
    b.check_ell()?;
    let (r, l) = (b.r as f64, b.ell as f64);
    Ok((1.0 + (r + l) / (l - 1.0)).sqrt() * bound_hmt(b)?)
}

/// `2 sqrt(e) (r+ell)/ell` times the HMT bound; the additive rounding term
/// that the stabilized analysis carries is left out.
pub fn bound_sgn(b: &BoundInputs) -> Result<f64> {
    if b.ell == 0 {
        return Err(Error::InvalidArgument("bound needs ell >= 1".into()));
    }
    let (r, l) = (b.r as f64, b.ell as f64);
    Ok(2.0 * std::f64::consts::E.sqrt() * (r + l) / l * bound_hmt(b)?)
}

/// Smallest bound over every admissible `r_hat`, given the full spectrum.
pub fn best_bound(method: Method, r: usize, ell: usize, sigma: &[f64]) -> Option<f64> {
    (0..=r.checked_sub(2)?)
        .filter_map(|r_hat| {
            let b = BoundInputs::new(r, r_hat, ell, super::tail_norm(sigma, r_hat));
            match method {
                Method::Hmt => bound_hmt(&b).ok(),
                Method::GnPlain => bound_gn(&b).ok(),
                Method::GnStabilized => bound_sgn(&b).ok(),
                _ => None,
            }
        })
        .min_by(f64::total_cmp)
}

/// `E ||G^+||_2^2 <= e^2 m / ((m-n)^2 - 1)` for an `m x n` Gaussian `G`.
pub fn gauss_pinv_moment_bound(m: usize, n: usize) -> Result<f64> {
    if n < 2 || m < n + 2 {
        // m = n + 1 makes the denominator vanish
        return Err(Error::InvalidArgument(format!(
            "moment bound needs m - 2 >= n >= 2, got m = {m}, n = {n}"
        )));
    }
    let d = (m - n) as f64;
    Ok(std::f64::consts::E.powi(2) * m as f64 / (d * d - 1.0))
}

/// Leading-order flop counts, split so that the pieces can be checked alone.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopModel {
    /// Sketching `A X` and `Y^T A`.
    pub sketch: f64,
    /// QR of the `(r+ell) x r` core: `2(r+ell)r^2 - (2/3)r^3`.
    pub core: f64,
    /// Sketching `(Y^T A) X`; lower order, not in `total`.
    pub core_sketch: f64,
}

impl FlopModel {
    pub fn total(&self) -> f64 {
        self.sketch + self.core
    }
}

fn log2(n: usize) -> f64 {
    (n as f64).log2()
}

/// Flop model for generalized Nystrom. Logarithms are base 2.
pub fn flop_model(m: usize, n: usize, r: usize, ell: usize, kind: SketchKind) -> Result<FlopModel> {
    if m == 0 || n == 0 || r == 0 {
        return Err(Error::InvalidArgument(format!(
            "flop model needs positive sizes, got {m}x{n}, r = {r}"
        )));
    }
    let (mf, nf, rf, lf) = (m as f64, n as f64, r as f64, ell as f64);
    // one division keeps integer-valued counts exact
    let core = (6.0 * (rf + lf) * rf * rf - 2.0 * rf.powi(3)) / 3.0;
    let (sketch, core_sketch) = match kind {
        SketchKind::SubsampledDct => (10.0 * mf * nf * log2(n), 5.0 * nf * rf * log2(n)),
        // A X and Y^T A by dense products, then (Y^T A) X
        SketchKind::Gaussian => (2.0 * mf * nf * (2.0 * rf + lf), 2.0 * nf * (rf + lf) * rf),
        SketchKind::CountSketch => (2.0 * mf * nf, 2.0 * nf * (rf + lf)),
    };
    Ok(FlopModel {
        sketch,
        core,
        core_sketch,
    })
}

/// Householder QR of a tall `rows x cols` block.
fn qr_flops(rows: f64, cols: f64) -> f64 {
    2.0 * rows * cols * cols - 2.0 / 3.0 * cols.powi(3)
}

/// Leading terms for any method; sketches are `A` times a `k`-column operator.
pub fn method_flops(
    method: Method,
    m: usize,
    n: usize,
    r: usize,
    ell: usize,
    power: usize,
    kind: SketchKind,
) -> Result<f64> {
    if m == 0 || n == 0 || r == 0 {
        return Err(Error::InvalidArgument(format!(
            "flop model needs positive sizes, got {m}x{n}, r = {r}"
        )));
    }
    let (mf, nf, rf) = (m as f64, n as f64, r as f64);
    let sketch_once = match kind {
        SketchKind::SubsampledDct => 5.0 * mf * nf * log2(n),
        SketchKind::Gaussian => 2.0 * mf * nf * rf,
        SketchKind::CountSketch => 2.0 * mf * nf,
    };
    let p = power as f64;
    let matvec_block = 2.0 * mf * nf * rf;
    Ok(match method {
        Method::GnPlain | Method::GnStabilized => flop_model(m, n, r, ell, kind)?.total(),
        Method::Hmt | Method::SubspaceIter => {
            // A Omega, orth, power steps, B^T = A^T Q, SVD of B^T
            sketch_once
                + qr_flops(mf, rf)
                + p * (2.0 * matvec_block + qr_flops(nf, rf) + qr_flops(mf, rf))
                + matvec_block
                + qr_flops(nf, rf)
                + 12.0 * rf.powi(3)
        }
        Method::Nystrom => sketch_once + 2.0 * nf * rf * rf + rf.powi(3) / 3.0,
        Method::NystromHmt => {
            sketch_once + qr_flops(mf, rf) + matvec_block + 2.0 * nf * rf * rf + rf.powi(3) / 3.0
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_arithmetic() {
        let b = BoundInputs::new(10, 8, 5, 1.0);
        let h = bound_hmt(&b).unwrap();
        assert!((h - 11f64.sqrt()).abs() < 1e-15);
        assert!((bound_gn(&b).unwrap() - (1.0 + 15.0 / 4.0f64).sqrt() * h).abs() < 1e-14);
        assert!((bound_sgn(&b).unwrap() - 6.0 * std::f64::consts::E.sqrt() * h).abs() < 1e-13);
        assert!(bound_hmt(&BoundInputs::new(10, 9, 5, 1.0)).is_err());
        assert!(bound_gn(&BoundInputs::new(10, 8, 1, 1.0)).is_err());
    }

    #[test]
    fn moment_bound_values() {
        assert!((gauss_pinv_moment_bound(20, 10).unwrap() - 1.4927).abs() < 1e-4);
        assert!((gauss_pinv_moment_bound(12, 2).unwrap() - 0.8956).abs() < 1e-4);
        assert!(gauss_pinv_moment_bound(11, 10).is_err());
        assert!(gauss_pinv_moment_bound(10, 1).is_err());
    }

    #[test]
    fn flop_model_examples() {
        let f = flop_model(2, 2, 1, 1, SketchKind::SubsampledDct).unwrap();
        assert!((f.total() - (40.0 + 4.0 - 2.0 / 3.0)).abs() < 1e-12);
        for r in [6usize, 30, 300] {
            let c = flop_model(1000, 1000, r, r / 2, SketchKind::SubsampledDct)
                .unwrap()
                .core;
            assert_eq!(c, 7.0 * (r as f64).powi(3) / 3.0);
        }
        let a = flop_model(64, 64, 4, 2, SketchKind::SubsampledDct)
            .unwrap()
            .sketch;
        let b = flop_model(64, 128, 4, 2, SketchKind::SubsampledDct)
            .unwrap()
            .sketch;
        assert!((b / a - 2.0 * 7.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn best_bound_uses_admissible_r_hat() {
        let sigma: Vec<f64> = (0..40).map(|i| 0.9f64.powi(i)).collect();
        let best = best_bound(Method::Hmt, 20, 10, &sigma).unwrap();
        let at15 = bound_hmt(&BoundInputs::new(
            20,
            15,
            10,
            super::super::tail_norm(&sigma, 15),
        ))
        .unwrap();
        assert!(best <= at15);
        assert!(best_bound(Method::Nystrom, 20, 10, &sigma).is_none());
        assert!(best_bound(Method::Hmt, 1, 1, &sigma).is_none());
    }
}
