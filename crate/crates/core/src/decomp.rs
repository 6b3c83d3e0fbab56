//! Randomized low-rank approximation methods and the factored approximant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{gemm, matmul, svd, thin_qr, DenseMatrix, MatrixRef, Trans};
use crate::sketch::{SketchKind, SketchSpec, StackedSketch, STREAM_X, STREAM_Y};
use crate::stability::{
    build_core_plain_checked, build_core_sgn, core_with_fallback_at, detect, CoreFactor,
    EpsilonPolicy, TruncationPath, DEFAULT_THRESHOLD,
};

/// Largest `m * n` that [`Approximant::materialize`] will allocate by default.
pub const DEFAULT_MATERIALIZE_CAP: usize = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Hmt,
    Nystrom,
    NystromHmt,
    SubspaceIter,
    GnPlain,
    GnStabilized,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Hmt,
        Method::Nystrom,
        Method::NystromHmt,
        Method::SubspaceIter,
        Method::GnPlain,
        Method::GnStabilized,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Hmt => "hmt",
            Method::Nystrom => "nystrom",
            Method::NystromHmt => "nystrom-hmt",
            Method::SubspaceIter => "subspace",
            Method::GnPlain => "gn",
            Method::GnStabilized => "sgn",
        }
    }

    pub fn is_generalized_nystrom(self) -> bool {
        matches!(self, Method::GnPlain | Method::GnStabilized)
    }

    pub fn requires_symmetric(self) -> bool {
        matches!(self, Method::Nystrom | Method::NystromHmt)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method '{s}'")))
    }
}

/// How the core pseudoinverse is built for the sketched methods.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoreMode {
    /// Thin QR only; detection is recorded but never acted on.
    Plain,
    /// Thin QR, rebuilt along the rank-revealing path when detection flags it.
    Fallback,
    /// Always the epsilon-pseudoinverse along the given path.
    Stabilized(TruncationPath),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Options {
    pub rank: usize,
    /// Oversampling `l` for generalized Nystrom; `None` means `ceil(r / 2)`.
    pub oversample: Option<usize>,
    pub seed: u64,
    pub sketch: SketchKind,
    /// Power iterations; `None` means 0 for HMT and 2 for subspace iteration.
    pub power: Option<usize>,
    pub epsilon: EpsilonPolicy,
    pub path: TruncationPath,
    pub fallback: bool,
    pub threshold: f64,
}

impl Options {
    pub fn new(rank: usize) -> Self {
        Options {
            rank,
            oversample: None,
            seed: 0,
            sketch: SketchKind::Gaussian,
            power: None,
            epsilon: EpsilonPolicy::default(),
            path: TruncationPath::RrqrTruncate,
            fallback: false,
            threshold: DEFAULT_THRESHOLD,
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn oversample(mut self, l: usize) -> Self {
        self.oversample = Some(l);
        self
    }

    pub fn sketch(mut self, kind: SketchKind) -> Self {
        self.sketch = kind;
        self
    }

    pub fn power(mut self, p: usize) -> Self {
        self.power = Some(p);
        self
    }

    pub fn epsilon(mut self, policy: EpsilonPolicy) -> Self {
        self.epsilon = policy;
        self
    }

    pub fn path(mut self, path: TruncationPath) -> Self {
        self.path = path;
        self
    }

    pub fn fallback(mut self, on: bool) -> Self {
        self.fallback = on;
        self
    }

    pub fn resolved_oversample(&self) -> usize {
        self.oversample.unwrap_or(self.rank.div_ceil(2))
    }

    pub fn resolved_power(&self, method: Method) -> usize {
        match method {
            Method::SubspaceIter => self.power.unwrap_or(2),
            _ => self.power.unwrap_or(0),
        }
    }

    pub fn core_mode(&self, method: Method) -> CoreMode {
        match method {
            Method::GnStabilized => CoreMode::Stabilized(self.path),
            Method::GnPlain if !self.fallback => CoreMode::Plain,
            _ => CoreMode::Fallback,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Factors {
    /// `F pinv(core) G` with `F = A X`, `G = Y^T A` (or `F^T` for Nystrom).
    Sketched {
        f: DenseMatrix,
        g: DenseMatrix,
        core: CoreFactor,
        x: StackedSketch,
        y: Option<StackedSketch>,
    },
    /// `Q U0 diag(sigma) V0^T`.
    Orthogonal {
        q: DenseMatrix,
        u0: DenseMatrix,
        sigma: Vec<f64>,
        v0: DenseMatrix,
    },
}

/// A rank-`r` approximation of an `m x n` matrix, kept in factored form.
#[derive(Clone, Debug, PartialEq)]
pub struct Approximant {
    pub(crate) method: Method,
    pub(crate) rows: usize,
    pub(crate) cols: usize,
    pub(crate) rank: usize,
    pub(crate) oversample: usize,
    pub(crate) seed: u64,
    pub(crate) sketch: SketchKind,
    pub(crate) power: usize,
    pub(crate) core_mode: Option<CoreMode>,
    pub(crate) epsilon: EpsilonPolicy,
    pub(crate) warnings: Vec<String>,
    pub(crate) factors: Factors,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// `A_hat * W`
    Right,
    /// `W * A_hat`
    Left,
}

impl Approximant {
    pub fn method(&self) -> Method {
        self.method
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn oversample(&self) -> usize {
        self.oversample
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sketch_kind(&self) -> SketchKind {
        self.sketch
    }

    pub fn power(&self) -> usize {
        self.power
    }

    pub fn core_mode(&self) -> Option<CoreMode> {
        self.core_mode
    }

    pub fn epsilon_policy(&self) -> &EpsilonPolicy {
        &self.epsilon
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn factors(&self) -> &Factors {
        &self.factors
    }

    pub fn core(&self) -> Option<&CoreFactor> {
        match &self.factors {
            Factors::Sketched { core, .. } => Some(core),
            Factors::Orthogonal { .. } => None,
        }
    }

    /// Instability flag of the plain core (false for orthogonal methods).
    pub fn flagged(&self) -> bool {
        self.core().is_some_and(CoreFactor::flagged)
    }

    pub fn path(&self) -> Option<TruncationPath> {
        self.core().map(CoreFactor::path)
    }

    /// Approximate singular values (orthogonal methods only).
    pub fn singular_values(&self) -> Option<&[f64]> {
        match &self.factors {
            Factors::Orthogonal { sigma, .. } => Some(sigma),
            Factors::Sketched { .. } => None,
        }
    }

    /// Stored floats across all factors.
    pub fn memory_entries(&self) -> usize {
        match &self.factors {
            Factors::Sketched { f, g, core, .. } => {
                // Nystrom's G is F^T and need not be stored separately
                let g_entries = if self.method.requires_symmetric() {
                    0
                } else {
                    g.memory_entries()
                };
                f.memory_entries() + g_entries + core.memory_entries()
            }
            Factors::Orthogonal { q, u0, sigma, v0 } => {
                q.memory_entries() + u0.memory_entries() + sigma.len() + v0.memory_entries()
            }
        }
    }

    /// `A_hat W` (right) or `W A_hat` (left) without forming `A_hat`.
    pub fn apply(&self, w: &DenseMatrix, side: Side) -> Result<DenseMatrix> {
        let (expect, got, what) = match side {
            Side::Right => (self.cols, w.rows(), "rows"),
            Side::Left => (self.rows, w.cols(), "columns"),
        };
        if expect != got {
            return Err(Error::dims(
                "approximant apply",
                format!("W with {expect} {what}"),
                format!("{got} {what}"),
            ));
        }
        match (&self.factors, side) {
            (Factors::Sketched { f, g, core, .. }, Side::Right) => {
                let gw = gemm(g, Trans::No, w, Trans::No)?;
                gemm(f, Trans::No, &core.apply_to(&gw)?, Trans::No)
            }
            (Factors::Sketched { f, g, core, .. }, Side::Left) => {
                let wf = gemm(w, Trans::No, f, Trans::No)?;
                gemm(&core.apply_from(&wf)?, Trans::No, g, Trans::No)
            }
            (Factors::Orthogonal { q, u0, sigma, v0 }, Side::Right) => {
                let mut t = gemm(v0, Trans::Yes, w, Trans::No)?;
                scale_rows(&mut t, sigma);
                let t = gemm(u0, Trans::No, &t, Trans::No)?;
                gemm(q, Trans::No, &t, Trans::No)
            }
            (Factors::Orthogonal { q, u0, sigma, v0 }, Side::Left) => {
                let t = gemm(w, Trans::No, q, Trans::No)?;
                let mut t = gemm(&t, Trans::No, u0, Trans::No)?;
                scale_cols(&mut t, sigma);
                gemm(&t, Trans::No, v0, Trans::Yes)
            }
        }
    }

    /// Rebuilds a plain-QR core as an epsilon-pseudoinverse along `path`,
    /// recovering the core matrix from its stored `Q R`. Cores that were
    /// already truncated are returned unchanged.
    pub fn restabilized(&self, path: TruncationPath, threshold: f64) -> Result<Approximant> {
        let Factors::Sketched { f, g, core, x, y } = &self.factors else {
            return Err(Error::Unsupported {
                op: "core stabilization",
                method: self.method.name().into(),
            });
        };
        if core.path() != TruncationPath::PlainQr
            || core.right_factor().is_some()
            || core.tri_transposed()
        {
            return Ok(self.clone());
        }
        let raw = gemm(core.q(), Trans::No, core.triangular(), Trans::No)?;
        let report = detect(core.triangular(), threshold)?;
        let fixed = build_core_sgn(&raw, &self.epsilon, path)?.with_report(report);
        let mut out = self.clone();
        if out.method == Method::GnPlain {
            out.method = Method::GnStabilized;
        }
        out.core_mode = Some(CoreMode::Stabilized(path));
        out.factors = Factors::Sketched {
            f: f.clone(),
            g: g.clone(),
            core: fixed,
            x: x.clone(),
            y: y.clone(),
        };
        Ok(out)
    }

    pub fn materialize(&self) -> Result<DenseMatrix> {
        self.materialize_capped(DEFAULT_MATERIALIZE_CAP)
    }

    /// Explicit `m x n` product, refusing when `m n > cap`.
    pub fn materialize_capped(&self, cap: usize) -> Result<DenseMatrix> {
        let requested = self.rows.saturating_mul(self.cols);
        if requested > cap {
            return Err(Error::CapExceeded {
                what: "materialized approximant",
                requested,
                cap,
            });
        }
        match &self.factors {
            Factors::Sketched { f, g, core, .. } => {
                let left = core.apply_left_half(f)?;
                let right = gemm(core.q(), Trans::Yes, g, Trans::No)?;
                gemm(&left, Trans::No, &right, Trans::No)
            }
            Factors::Orthogonal { q, u0, sigma, v0 } => {
                let mut qu = gemm(q, Trans::No, u0, Trans::No)?;
                scale_cols(&mut qu, sigma);
                gemm(&qu, Trans::No, v0, Trans::Yes)
            }
        }
    }
}

fn scale_rows(m: &mut DenseMatrix, s: &[f64]) {
    for j in 0..m.cols() {
        m.col_mut(j).iter_mut().zip(s).for_each(|(v, x)| *v *= x);
    }
}

fn scale_cols(m: &mut DenseMatrix, s: &[f64]) {
    for (j, x) in s.iter().enumerate() {
        m.col_mut(j).iter_mut().for_each(|v| *v *= x);
    }
}

fn check_rank(op: &'static str, a: &MatrixRef, r: usize, extra: usize) -> Result<()> {
    let limit = a.rows().min(a.cols());
    if r == 0 || r + extra > limit {
        return Err(Error::dims(
            op,
            format!(
                "1 <= r{} <= min(m, n) = {limit}",
                if extra > 0 { " + l" } else { "" }
            ),
            format!(
                "r = {r}{}",
                if extra > 0 {
                    format!(", l = {extra}")
                } else {
                    String::new()
                }
            ),
        ));
    }
    Ok(())
}

fn orth(m: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(thin_qr(m)?.q)
}

/// Randomized range finder with optional subspace iteration, followed by an
/// SVD of the small projected matrix.
pub fn hmt(a: MatrixRef, opts: &Options) -> Result<Approximant> {
    hmt_with_power(a, opts, opts.resolved_power(Method::Hmt), Method::Hmt)
}

pub fn subspace_iteration(a: MatrixRef, opts: &Options) -> Result<Approximant> {
    hmt_with_power(
        a,
        opts,
        opts.resolved_power(Method::SubspaceIter),
        Method::SubspaceIter,
    )
}

fn hmt_with_power(
    a: MatrixRef,
    opts: &Options,
    power: usize,
    method: Method,
) -> Result<Approximant> {
    let r = opts.rank;
    check_rank("hmt", &a, r, 0)?;
    let (m, n) = (a.rows(), a.cols());
    let omega =
        StackedSketch::single(SketchSpec::new(opts.sketch, n, r, opts.seed).with_stream(STREAM_X));
    let mut q = orth(&omega.apply_right(a)?)?;
    for _ in 0..power {
        let z = orth(&matmul(a, &q, true)?)?;
        q = orth(&matmul(a, &z, false)?)?;
    }
    // B^T = A^T Q = U' S V'^T, so Q B = (Q V') S U'^T
    let bt = matmul(a, &q, true)?;
    let f = svd(&bt)?;
    Ok(Approximant {
        method,
        rows: m,
        cols: n,
        rank: r,
        oversample: 0,
        seed: opts.seed,
        sketch: opts.sketch,
        power,
        core_mode: None,
        epsilon: opts.epsilon,
        warnings: Vec::new(),
        factors: Factors::Orthogonal {
            q,
            u0: f.v,
            sigma: f.sigma,
            v0: f.u,
        },
    })
}

fn check_symmetric(a: &MatrixRef) -> Result<()> {
    let asym = a.asymmetry().ok_or_else(|| {
        Error::dims(
            "nystrom",
            "square input",
            format!("{}x{}", a.rows(), a.cols()),
        )
    })?;
    let tol = 1e-8 * a.frobenius_norm();
    if asym > tol {
        return Err(Error::NotSymmetric { asym, tol });
    }
    Ok(())
}

fn nystrom_core(
    method: Method,
    a: MatrixRef,
    f: DenseMatrix,
    m: DenseMatrix,
    x: StackedSketch,
    opts: &Options,
) -> Result<Approximant> {
    let mut warnings = Vec::new();
    if let Some(i) = (0..m.rows()).find(|&i| m[(i, i)] < 0.0) {
        let msg = format!(
            "core has a negative diagonal entry at {i}: input is likely not positive semidefinite"
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let core = core_with_fallback_at(&m, &opts.epsilon, opts.threshold)?;
    let n = a.rows();
    Ok(Approximant {
        method,
        rows: n,
        cols: n,
        rank: opts.rank,
        oversample: 0,
        seed: opts.seed,
        sketch: opts.sketch,
        power: 0,
        core_mode: Some(CoreMode::Fallback),
        epsilon: opts.epsilon,
        warnings,
        factors: Factors::Sketched {
            g: f.transpose(),
            f,
            core,
            x,
            y: None,
        },
    })
}

/// `A X (X^T A X)^+ (A X)^T` for symmetric positive semidefinite `A`.
pub fn nystrom_psd(a: MatrixRef, opts: &Options) -> Result<Approximant> {
    check_symmetric(&a)?;
    check_rank("nystrom", &a, opts.rank, 0)?;
    let n = a.rows();
    let x = StackedSketch::single(
        SketchSpec::new(opts.sketch, n, opts.rank, opts.seed).with_stream(STREAM_X),
    );
    let f = x.apply_right(a)?;
    let m = x.apply_left(&f)?;
    nystrom_core(Method::Nystrom, a, f, m, x, opts)
}

/// Nystrom with `X` replaced by `Q = orth(A Omega)`.
pub fn nystrom_hmt(a: MatrixRef, opts: &Options) -> Result<Approximant> {
    check_symmetric(&a)?;
    check_rank("nystrom-hmt", &a, opts.rank, 0)?;
    let n = a.rows();
    let x = StackedSketch::single(
        SketchSpec::new(opts.sketch, n, opts.rank, opts.seed).with_stream(STREAM_X),
    );
    let q = orth(&x.apply_right(a)?)?;
    let f = matmul(a, &q, false)?;
    let m = gemm(&q, Trans::Yes, &f, Trans::No)?;
    nystrom_core(Method::NystromHmt, a, f, m, x, opts)
}

/// Builds the core pseudoinverse of `m` according to `mode`. Detection is
/// always run on the plain triangular factor and attached.
pub(crate) fn build_core(
    m: &DenseMatrix,
    mode: CoreMode,
    policy: &EpsilonPolicy,
    threshold: f64,
) -> Result<CoreFactor> {
    match mode {
        CoreMode::Plain => build_core_plain_checked(m, threshold),
        CoreMode::Fallback => core_with_fallback_at(m, policy, threshold),
        CoreMode::Stabilized(path) => {
            let report = detect(&thin_qr(m)?.r, threshold)?;
            let core = build_core_sgn(m, policy, path)?;
            Ok(core.with_report(report))
        }
    }
}

/// Assembles a generalized Nystrom approximant from computed sketches.
#[allow(clippy::too_many_arguments)]
pub(crate) fn assemble_gn(
    method: Method,
    shape: (usize, usize),
    f: DenseMatrix,
    g: DenseMatrix,
    raw_core: &DenseMatrix,
    x: StackedSketch,
    y: StackedSketch,
    mode: CoreMode,
    opts: &Options,
    prebuilt: Option<CoreFactor>,
) -> Result<Approximant> {
    let core = match prebuilt {
        Some(core) => core,
        None => build_core(raw_core, mode, &opts.epsilon, opts.threshold)?,
    };
    let rank = x.sketch_dim();
    Ok(Approximant {
        method,
        rows: shape.0,
        cols: shape.1,
        rank,
        oversample: y.sketch_dim() - rank,
        seed: opts.seed,
        sketch: opts.sketch,
        power: 0,
        core_mode: Some(mode),
        epsilon: opts.epsilon,
        warnings: Vec::new(),
        factors: Factors::Sketched {
            f,
            g,
            core,
            x,
            y: Some(y),
        },
    })
}

/// The sketches `X` (`n x r`) and `Y` (`m x (r + l)`) of a generalized Nystrom run.
pub(crate) fn gn_sketches(a: &MatrixRef, opts: &Options) -> Result<(StackedSketch, StackedSketch)> {
    let (r, l) = (opts.rank, opts.resolved_oversample());
    if l == 0 {
        return Err(Error::InvalidArgument(
            "oversampling l must be positive".into(),
        ));
    }
    check_rank("generalized nystrom", a, r, l)?;
    let x = StackedSketch::single(
        SketchSpec::new(opts.sketch, a.cols(), r, opts.seed).with_stream(STREAM_X),
    );
    let y = StackedSketch::single(
        SketchSpec::new(opts.sketch, a.rows(), r + l, opts.seed).with_stream(STREAM_Y),
    );
    Ok((x, y))
}

fn gn(a: MatrixRef, opts: &Options, method: Method) -> Result<Approximant> {
    let (x, y) = gn_sketches(&a, opts)?;
    let f = x.apply_right(a)?;
    let g = y.apply_left(a)?;
    let raw = x.apply_right(&g)?;
    assemble_gn(
        method,
        (a.rows(), a.cols()),
        f,
        g,
        &raw,
        x,
        y,
        opts.core_mode(method),
        opts,
        None,
    )
}

/// Plain generalized Nystrom: `(A X R^{-1}) (Q^T Y^T A)` with `Y^T A X = Q R`.
pub fn gn_plain(a: MatrixRef, opts: &Options) -> Result<Approximant> {
    gn(a, opts, Method::GnPlain)
}

/// Stabilized generalized Nystrom with an epsilon-pseudoinverse core.
pub fn gn_stabilized(a: MatrixRef, opts: &Options) -> Result<Approximant> {
    gn(a, opts, Method::GnStabilized)
}

pub fn approximate(a: MatrixRef, method: Method, opts: &Options) -> Result<Approximant> {
    match method {
        Method::Hmt => hmt(a, opts),
        Method::SubspaceIter => subspace_iteration(a, opts),
        Method::Nystrom => nystrom_psd(a, opts),
        Method::NystromHmt => nystrom_hmt(a, opts),
        Method::GnPlain => gn_plain(a, opts),
        Method::GnStabilized => gn_stabilized(a, opts),
    }
}
