//! Synthetic test matrices with prescribed singular values.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{gemm, thin_qr, DenseMatrix, Trans};
use crate::sketch::gaussian_matrix;

// Gallery randomness lives far away from the sketch streams of the same seed.
const STREAM_LEFT: u64 = 1 << 40;
const STREAM_RIGHT: u64 = (1 << 40) + 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SpectrumKind {
    /// `sigma_i = ratio^(i-1)`.
    Geometric { ratio: f64 },
    /// Geometric from `first` (at index 1) to `last` (at index `at`), continuing
    /// with the same ratio afterwards.
    GeometricRange { first: f64, last: f64, at: usize },
    /// `sigma_i = i^(-s)`.
    AlgebraicPower { s: f64 },
    /// `sigma_i = exp(-c i)`.
    Exponential { c: f64 },
    /// `sigma_i = 1` for `i <= k`, zero afterwards.
    Rank { k: usize },
    /// Explicit non-increasing values; missing trailing values are zero.
    Explicit { values: Vec<f64> },
}

impl SpectrumKind {
    /// The first `len` singular values.
    pub fn values(&self, len: usize) -> Vec<f64> {
        (1..=len)
            .map(|i| {
                let x = i as f64;
                match self {
                    SpectrumKind::Geometric { ratio } => ratio.powi(i as i32 - 1),
                    SpectrumKind::GeometricRange { first, last, at } => {
                        let steps = (*at).max(2) as f64 - 1.0;
                        first * (last / first).powf((x - 1.0) / steps)
                    }
                    SpectrumKind::AlgebraicPower { s } => x.powf(-s),
                    SpectrumKind::Exponential { c } => (-c * x).exp(),
                    SpectrumKind::Rank { k } => {
                        if i <= *k {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    SpectrumKind::Explicit { values } => values.get(i - 1).copied().unwrap_or(0.0),
                }
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        match self {
            SpectrumKind::Geometric { ratio } if !(*ratio > 0.0 && *ratio <= 1.0) => {
                bad(format!("geometric ratio must lie in (0, 1], got {ratio}"))
            }
            SpectrumKind::GeometricRange { first, last, at }
                if !(*first > 0.0 && *last > 0.0 && *last <= *first && *at >= 2) =>
            {
                bad(format!("invalid geometric range {first} -> {last} at {at}"))
            }
            SpectrumKind::AlgebraicPower { s } if !(*s >= 0.0 && s.is_finite()) => {
                bad(format!("invalid power {s}"))
            }
            SpectrumKind::Exponential { c } if !(*c >= 0.0 && c.is_finite()) => {
                bad(format!("invalid rate {c}"))
            }
            SpectrumKind::Explicit { values }
                if values.iter().any(|v| !(*v >= 0.0 && v.is_finite()))
                    || values.windows(2).any(|w| w[1] > w[0]) =>
            {
                bad("explicit spectrum must be finite, non-negative and non-increasing".into())
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for SpectrumKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpectrumKind::Geometric { ratio } => write!(f, "geometric:{ratio}"),
            SpectrumKind::GeometricRange { first, last, at } => {
                if *first == 1.0 {
                    write!(f, "geomrange:{last:e}:{at}")
                } else {
                    write!(f, "geomrange:{first:e}:{last:e}:{at}")
                }
            }
            SpectrumKind::AlgebraicPower { s } => write!(f, "algebraic:{s}"),
            SpectrumKind::Exponential { c } => write!(f, "exponential:{c}"),
            SpectrumKind::Rank { k } => write!(f, "rank:{k}"),
            SpectrumKind::Explicit { values } => {
                let v: Vec<String> = values.iter().map(|x| format!("{x:e}")).collect();
                write!(f, "explicit:{}", v.join(":"))
            }
        }
    }
}

impl FromStr for SpectrumKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let kind = parts.next().unwrap_or_default().to_ascii_lowercase();
        let args: Vec<&str> = parts.collect();
        let num = |i: usize| -> Result<f64> {
            args.get(i)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("spectrum '{s}' is missing an argument"))
                })?
                .parse::<f64>()
                .map_err(|_| {
                    Error::InvalidArgument(format!("spectrum '{s}' has a non-numeric argument"))
                })
        };
        let int = |i: usize| -> Result<usize> {
            args.get(i)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("spectrum '{s}' is missing an argument"))
                })?
                .parse::<usize>()
                .map_err(|_| {
                    Error::InvalidArgument(format!("spectrum '{s}' needs an integer argument"))
                })
        };
        let spec = match (kind.as_str(), args.len()) {
            ("geometric", 1) => SpectrumKind::Geometric { ratio: num(0)? },
            ("geomrange", 2) => SpectrumKind::GeometricRange {
                first: 1.0,
                last: num(0)?,
                at: int(1)?,
            },
            ("geomrange", 3) => SpectrumKind::GeometricRange {
                first: num(0)?,
                last: num(1)?,
                at: int(2)?,
            },
            ("algebraic", 1) => SpectrumKind::AlgebraicPower { s: num(0)? },
            ("exponential", 1) => SpectrumKind::Exponential { c: num(0)? },
            ("rank", 1) => SpectrumKind::Rank { k: int(0)? },
            ("explicit", n) if n >= 1 => SpectrumKind::Explicit {
                values: (0..n).map(num).collect::<Result<_>>()?,
            },
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unrecognized spectrum '{s}'"
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// A complete gallery matrix description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GallerySpec {
    pub spectrum: SpectrumKind,
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    pub psd: bool,
}

impl GallerySpec {
    pub fn new(spectrum: SpectrumKind, m: usize, n: usize, seed: u64) -> Self {
        GallerySpec {
            spectrum,
            m,
            n,
            seed,
            psd: false,
        }
    }

    pub fn psd(mut self, on: bool) -> Self {
        self.psd = on;
        self
    }

    /// The `min(m, n)` singular values the generated matrix has.
    pub fn singular_values(&self) -> Vec<f64> {
        self.spectrum.values(self.m.min(self.n))
    }

    pub fn build(&self) -> Result<DenseMatrix> {
        gallery(&self.spectrum, self.m, self.n, self.seed, self.psd)
    }
}

impl fmt::Display for GallerySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "spectrum={},m={},n={},seed={},psd={}",
            self.spectrum, self.m, self.n, self.seed, self.psd
        )
    }
}

impl FromStr for GallerySpec {
    type Err = Error;

    /// `spectrum=geometric:0.9,n=2000[,m=..][,seed=..][,psd=true]`; `m` defaults to `n`.
    fn from_str(s: &str) -> Result<Self> {
        let mut spectrum = None;
        let (mut m, mut n, mut seed, mut psd) = (None, None, 0u64, false);
        for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (key, value) = item.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("gallery item '{item}' is not key=value"))
            })?;
            let parse_usize = |v: &str| {
                v.parse::<usize>().map_err(|_| {
                    Error::InvalidArgument(format!(
                        "gallery {key} must be a positive integer, got '{v}'"
                    ))
                })
            };
            match key.trim() {
                "spectrum" => spectrum = Some(value.parse::<SpectrumKind>()?),
                "m" => m = Some(parse_usize(value)?),
                "n" => n = Some(parse_usize(value)?),
                "seed" => {
                    seed = value.parse().map_err(|_| {
                        Error::InvalidArgument(format!(
                            "gallery seed must be an integer, got '{value}'"
                        ))
                    })?
                }
                "psd" => {
                    psd = value.parse().map_err(|_| {
                        Error::InvalidArgument(format!(
                            "gallery psd must be true or false, got '{value}'"
                        ))
                    })?
                }
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown gallery key '{other}'"
                    )))
                }
            }
        }
        let spectrum = spectrum
            .ok_or_else(|| Error::InvalidArgument("gallery spec needs spectrum=".into()))?;
        let n = n.ok_or_else(|| Error::InvalidArgument("gallery spec needs n=".into()))?;
        Ok(GallerySpec {
            spectrum,
            m: m.unwrap_or(n),
            n,
            seed,
            psd,
        })
    }
}

/// Haar-distributed `rows x cols` matrix with orthonormal columns.
fn random_orthonormal(rows: usize, cols: usize, seed: u64, stream: u64) -> Result<DenseMatrix> {
    let g = gaussian_matrix(rows, cols, seed, stream);
    let mut qr = thin_qr(&g)?;
    // sign(R_ii) normalization makes Q Haar distributed
    for j in 0..cols {
        if qr.r[(j, j)] < 0.0 {
            qr.q.col_mut(j).iter_mut().for_each(|v| *v = -*v);
        }
    }
    Ok(qr.q)
}

/// `A = U diag(sigma) V^T` with random orthonormal `U`, `V`, or
/// `A = Q diag(sigma) Q^T` when `psd` is set.
pub fn gallery(
    spectrum: &SpectrumKind,
    m: usize,
    n: usize,
    seed: u64,
    psd: bool,
) -> Result<DenseMatrix> {
    spectrum.validate()?;
    if m == 0 || n == 0 {
        return Err(Error::dims(
            "gallery",
            "positive dimensions",
            format!("{m}x{n}"),
        ));
    }
    if psd && m != n {
        return Err(Error::dims(
            "gallery",
            "square dimensions for a PSD matrix",
            format!("{m}x{n}"),
        ));
    }
    let sigma = spectrum.values(m.min(n));
    let p = sigma.iter().take_while(|&&s| s > 0.0).count();
    let u = random_orthonormal(m, p, seed, STREAM_LEFT)?;
    let v = if psd {
        u.clone()
    } else {
        random_orthonormal(n, p, seed, STREAM_RIGHT)?
    };
    let mut us = u;
    for (j, s) in sigma[..p].iter().enumerate() {
        us.col_mut(j).iter_mut().for_each(|x| *x *= s);
    }
    let mut a = gemm(&us, Trans::No, &v, Trans::Yes)?;
    if psd {
        // exact symmetry, not just up to rounding
        for j in 0..n {
            for i in j + 1..n {
                let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
                a[(i, j)] = avg;
                a[(j, i)] = avg;
            }
        }
    }
    Ok(a)
}
