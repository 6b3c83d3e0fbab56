//! Orthonormal DCT-II and its inverse via a length-n complex FFT.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::dense::DenseMatrix;

/// A planned orthonormal DCT-II of fixed length. Reusable across calls.
pub struct Dct {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    twiddle: Vec<Complex64>,
    scratch: Vec<Complex64>,
    buf: Vec<Complex64>,
}

impl Dct {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n.max(1));
        let inverse = planner.plan_fft_inverse(n.max(1));
        let twiddle = (0..n)
            .map(|k| Complex64::from_polar(1.0, -PI * k as f64 / (2.0 * n as f64)))
            .collect();
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Dct {
            n,
            forward,
            inverse,
            twiddle,
            scratch: vec![Complex64::default(); scratch_len],
            buf: vec![Complex64::default(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn alpha(&self, k: usize) -> f64 {
        let n = self.n as f64;
        if k == 0 {
            (1.0 / n).sqrt()
        } else {
            (2.0 / n).sqrt()
        }
    }

    /// In-place orthonormal DCT-II of `x` (length `n`).
    pub fn forward(&mut self, x: &mut [f64]) {
        let n = self.n;
        assert_eq!(x.len(), n, "dct length");
        if n == 0 {
            return;
        }
        let half = n.div_ceil(2);
        for i in 0..half {
            self.buf[i] = Complex64::new(x[2 * i], 0.0);
        }
        for i in 0..n / 2 {
            self.buf[n - 1 - i] = Complex64::new(x[2 * i + 1], 0.0);
        }
        self.forward
            .process_with_scratch(&mut self.buf, &mut self.scratch);
        for k in 0..n {
            x[k] = self.alpha(k) * (self.twiddle[k] * self.buf[k]).re;
        }
    }

    /// In-place inverse (orthonormal DCT-III) of `x`.
    pub fn inverse(&mut self, x: &mut [f64]) {
        let n = self.n;
        assert_eq!(x.len(), n, "dct length");
        if n == 0 {
            return;
        }
        for k in 0..n {
            let ck = x[k] / self.alpha(k);
            let cnk = if k == 0 {
                0.0
            } else {
                x[n - k] / self.alpha(n - k)
            };
            self.buf[k] = self.twiddle[k].conj() * Complex64::new(ck, -cnk);
        }
        self.inverse
            .process_with_scratch(&mut self.buf, &mut self.scratch);
        let inv_n = 1.0 / n as f64;
        let half = n.div_ceil(2);
        for i in 0..half {
            x[2 * i] = self.buf[i].re * inv_n;
        }
        for i in 0..n / 2 {
            x[2 * i + 1] = self.buf[n - 1 - i].re * inv_n;
        }
    }
}

/// O(n^2) orthonormal DCT-II straight from the definition.
pub fn dct2_reference(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let nf = n as f64;
    (0..n)
        .map(|k| {
            let alpha = if k == 0 {
                (1.0 / nf).sqrt()
            } else {
                (2.0 / nf).sqrt()
            };
            alpha
                * x.iter()
                    .enumerate()
                    .map(|(i, v)| v * (PI * (2 * i + 1) as f64 * k as f64 / (2.0 * nf)).cos())
                    .sum::<f64>()
        })
        .collect()
}

/// Applies the DCT-II to every column of `m` in place.
pub fn dct2_columns(m: &mut DenseMatrix) {
    let mut dct = Dct::new(m.rows());
    for j in 0..m.cols() {
        dct.forward(m.col_mut(j));
    }
}

/// Applies the DCT-II to every row of `m` in place (via blocked transposes).
pub fn dct2_rows(m: &mut DenseMatrix) {
    let (rows, cols) = m.shape();
    let mut dct = Dct::new(cols);
    const BLOCK: usize = 64;
    let mut buf = vec![0.0; cols * BLOCK];
    let data = m.as_mut_slice();
    let mut start = 0;
    while start < rows {
        let h = BLOCK.min(rows - start);
        for j in 0..cols {
            for r in 0..h {
                buf[r * cols + j] = data[j * rows + start + r];
            }
        }
        for r in 0..h {
            dct.forward(&mut buf[r * cols..(r + 1) * cols]);
        }
        for j in 0..cols {
            for r in 0..h {
                data[j * rows + start + r] = buf[r * cols + j];
            }
        }
        start += h;
    }
}
