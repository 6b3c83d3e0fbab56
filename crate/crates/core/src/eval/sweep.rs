//! Benchmark sweeps over methods, ranks, oversampling policies, matrices and seeds.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::bounds::{best_bound, method_flops};
use super::error::{
    frobenius_error_blocked, frobenius_error_dense, frobenius_error_factored, tail_norm,
};
use super::gallery::GallerySpec;
use crate::decomp::{approximate, Method, Options};

/// Columns per residual block in error measurement.
pub const ERROR_BLOCK: usize = 256;
use crate::error::{Error, Result};
use crate::kernels::{singular_values, Matrix, MatrixRef};
use crate::sketch::SketchKind;
use crate::stability::EpsilonPolicy;

pub const CSV_HEADER: [&str; 14] = [
    "method",
    "m",
    "n",
    "r",
    "ell",
    "seed",
    "spectrum",
    "error_f",
    "opt_error_f",
    "bound",
    "wall_ms",
    "flops_model",
    "flagged",
    "path",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OversamplePolicy {
    /// `ell = ceil(r / 2)`
    Half,
    Fixed(usize),
}

impl OversamplePolicy {
    pub fn resolve(self, r: usize) -> usize {
        match self {
            OversamplePolicy::Half => r.div_ceil(2),
            OversamplePolicy::Fixed(l) => l,
        }
    }
}

impl fmt::Display for OversamplePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OversamplePolicy::Half => f.write_str("half"),
            OversamplePolicy::Fixed(l) => write!(f, "{l}"),
        }
    }
}

impl FromStr for OversamplePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "half" | "r/2" => Ok(OversamplePolicy::Half),
            _ => s.parse().map(OversamplePolicy::Fixed).map_err(|_| {
                Error::InvalidArgument(format!(
                    "oversampling must be 'half' or an integer, got '{s}'"
                ))
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ErrorMode {
    /// Residual formed one column block at a time.
    #[default]
    Blocked,
    /// Residual-free estimate, no `m x n` temporaries. Cancellation limits
    /// it to about `1e-8 ||A||_F`.
    Factored,
    /// Explicit residual; exact to rounding but needs `m n` memory.
    Dense,
}

#[derive(Clone, Debug)]
pub enum SweepMatrix {
    Gallery(GallerySpec),
    Loaded { label: String, matrix: Matrix },
}

impl SweepMatrix {
    fn label(&self) -> String {
        match self {
            SweepMatrix::Gallery(g) => g.spectrum.to_string(),
            SweepMatrix::Loaded { label, .. } => label.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub methods: Vec<Method>,
    pub ranks: Vec<usize>,
    pub oversample: Vec<OversamplePolicy>,
    pub matrices: Vec<SweepMatrix>,
    pub seeds: Vec<u64>,
    pub repetitions: usize,
    pub sketch: SketchKind,
    pub power: Option<usize>,
    pub epsilon: EpsilonPolicy,
    pub fallback: bool,
    pub error_mode: ErrorMode,
    /// Add a dense-SVD row per matrix when `m n` fits under `svd_cap`.
    pub against_svd: bool,
    /// Largest `m n` for the SVD oracle; gallery matrices beyond it use
    /// their constructed spectrum, loaded ones report no optimal error.
    pub svd_cap: usize,
    pub jobs: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            methods: Vec::new(),
            ranks: Vec::new(),
            oversample: vec![OversamplePolicy::Half],
            matrices: Vec::new(),
            seeds: Vec::new(),
            repetitions: 3,
            sketch: SketchKind::Gaussian,
            power: None,
            epsilon: EpsilonPolicy::default(),
            fallback: false,
            error_mode: ErrorMode::Blocked,
            against_svd: false,
            svd_cap: 1000 * 1000,
            jobs: 1,
        }
    }
}

/// One sweep cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub method: String,
    pub m: usize,
    pub n: usize,
    pub r: usize,
    pub ell: usize,
    pub seed: u64,
    pub spectrum: String,
    pub error_f: Option<f64>,
    pub opt_error_f: Option<f64>,
    pub bound: Option<f64>,
    /// Bound shown for orientation only (non-Gaussian sketch).
    pub bound_reference: bool,
    pub wall_ms: Option<f64>,
    pub flops_model: Option<f64>,
    pub flagged: bool,
    pub path: Option<String>,
    pub failure: Option<String>,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let k = xs.len();
    if k % 2 == 1 {
        xs[k / 2]
    } else {
        0.5 * (xs[k / 2 - 1] + xs[k / 2])
    }
}

struct Prepared {
    label: String,
    matrix: Matrix,
    sigma: Option<Vec<f64>>,
    svd_ms: Option<f64>,
}

fn prepare(input: &SweepMatrix, cfg: &SweepConfig) -> Result<Prepared> {
    let (label, matrix) = match input {
        SweepMatrix::Gallery(g) => (input.label(), Matrix::Dense(g.build()?)),
        SweepMatrix::Loaded { matrix, .. } => (input.label(), matrix.clone()),
    };
    let (m, n) = (matrix_ref(&matrix).rows(), matrix_ref(&matrix).cols());
    let fits = m.saturating_mul(n) <= cfg.svd_cap;
    let (sigma, svd_ms) = if fits {
        let dense = matrix_ref(&matrix).to_dense();
        let t = Instant::now();
        let s = singular_values(&dense)?;
        (Some(s), Some(t.elapsed().as_secs_f64() * 1e3))
    } else if let SweepMatrix::Gallery(g) = input {
        (Some(g.singular_values()), None)
    } else {
        (None, None)
    };
    Ok(Prepared {
        label,
        matrix,
        sigma,
        svd_ms,
    })
}

fn matrix_ref(m: &Matrix) -> MatrixRef<'_> {
    m.into()
}

struct Cell {
    matrix: usize,
    method: Method,
    r: usize,
    ell: usize,
    seed: u64,
}

fn run_cell(cell: &Cell, prep: &Prepared, cfg: &SweepConfig) -> Report {
    let a = matrix_ref(&prep.matrix);
    let (m, n) = (a.rows(), a.cols());
    let mut report = Report {
        method: cell.method.name().to_string(),
        m,
        n,
        r: cell.r,
        ell: cell.ell,
        seed: cell.seed,
        spectrum: prep.label.clone(),
        error_f: None,
        opt_error_f: prep.sigma.as_ref().map(|s| tail_norm(s, cell.r)),
        bound: None,
        bound_reference: cfg.sketch != SketchKind::Gaussian,
        wall_ms: None,
        flops_model: None,
        flagged: false,
        path: None,
        failure: None,
    };
    let mut opts = Options::new(cell.r)
        .oversample(cell.ell)
        .seed(cell.seed)
        .sketch(cfg.sketch)
        .epsilon(cfg.epsilon)
        .fallback(cfg.fallback);
    if let Some(p) = cfg.power {
        opts = opts.power(p);
    }
    report.flops_model = method_flops(
        cell.method,
        m,
        n,
        cell.r,
        cell.ell,
        opts.resolved_power(cell.method),
        cfg.sketch,
    )
    .ok();
    if let Some(sigma) = &prep.sigma {
        report.bound = best_bound(cell.method, cell.r, cell.ell, sigma);
    }
    let mut times = Vec::with_capacity(cfg.repetitions.max(1));
    let mut first = None;
    for _ in 0..cfg.repetitions.max(1) {
        let t = Instant::now();
        match approximate(a, cell.method, &opts) {
            Ok(approx) => {
                times.push(t.elapsed().as_secs_f64() * 1e3);
                first.get_or_insert(approx);
            }
            Err(e) => {
                report.failure = Some(e.to_string());
                return report;
            }
        }
    }
    let approx = first.expect("at least one repetition");
    report.wall_ms = Some(median(times));
    report.flagged = approx.flagged();
    report.path = approx.path().map(|p| p.name().to_string());
    let err = match (cfg.error_mode, &prep.matrix) {
        (ErrorMode::Blocked, _) => frobenius_error_blocked(a, &approx, ERROR_BLOCK),
        (ErrorMode::Dense, Matrix::Dense(d)) => frobenius_error_dense(d, &approx),
        (ErrorMode::Dense, Matrix::Sparse(s)) => frobenius_error_dense(&s.to_dense(), &approx),
        (ErrorMode::Factored, _) => frobenius_error_factored(a, &approx),
    };
    match err {
        Ok(e) => report.error_f = Some(e),
        Err(e) => report.failure = Some(e.to_string()),
    }
    report
}

/// Runs every cell of the grid. Cells that fail carry the message in
/// `failure`; a matrix that cannot be built fails all of its cells.
pub fn run_sweep(cfg: &SweepConfig) -> Vec<Report> {
    let mut reports = Vec::new();
    let mut prepared = Vec::with_capacity(cfg.matrices.len());
    for input in &cfg.matrices {
        prepared.push(prepare(input, cfg).map_err(|e| e.to_string()));
    }
    let mut cells = Vec::new();
    for (mi, _) in cfg.matrices.iter().enumerate() {
        for &method in &cfg.methods {
            for &r in &cfg.ranks {
                for &pol in &cfg.oversample {
                    for &seed in &cfg.seeds {
                        cells.push(Cell {
                            matrix: mi,
                            method,
                            r,
                            ell: pol.resolve(r),
                            seed,
                        });
                    }
                }
            }
        }
    }

    let results: Vec<Mutex<Option<Report>>> = cells.iter().map(|_| Mutex::new(None)).collect();
    let next = Mutex::new(0usize);
    let work = || loop {
        let i = {
            let mut g = next.lock().expect("sweep counter");
            let i = *g;
            *g += 1;
            i
        };
        let Some(cell) = cells.get(i) else { break };
        let report = match &prepared[cell.matrix] {
            Ok(prep) => run_cell(cell, prep, cfg),
            Err(msg) => failed_cell(cell, &cfg.matrices[cell.matrix], msg),
        };
        log::debug!(
            "cell {i}: {} r={} seed={} done",
            report.method,
            report.r,
            report.seed
        );
        *results[i].lock().expect("sweep slot") = Some(report);
    };
    let jobs = cfg.jobs.max(1).min(cells.len().max(1));
    if jobs == 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..jobs {
                s.spawn(work);
            }
        });
    }
    reports.extend(
        results
            .into_iter()
            .filter_map(|m| m.into_inner().expect("sweep slot")),
    );

    if cfg.against_svd {
        for (input, prep) in cfg.matrices.iter().zip(&prepared) {
            if let Ok(prep) = prep {
                if let Some(ms) = prep.svd_ms {
                    let a = matrix_ref(&prep.matrix);
                    let (m, n) = (a.rows(), a.cols());
                    reports.push(Report {
                        method: "svd".into(),
                        m,
                        n,
                        r: m.min(n),
                        ell: 0,
                        seed: 0,
                        spectrum: input.label(),
                        error_f: Some(0.0),
                        opt_error_f: Some(0.0),
                        bound: None,
                        bound_reference: false,
                        wall_ms: Some(ms),
                        flops_model: None,
                        flagged: false,
                        path: None,
                        failure: None,
                    });
                }
            }
        }
    }
    reports
}

fn failed_cell(cell: &Cell, input: &SweepMatrix, msg: &str) -> Report {
    let (m, n) = match input {
        SweepMatrix::Gallery(g) => (g.m, g.n),
        SweepMatrix::Loaded { matrix, .. } => {
            (matrix_ref(matrix).rows(), matrix_ref(matrix).cols())
        }
    };
    Report {
        method: cell.method.name().to_string(),
        m,
        n,
        r: cell.r,
        ell: cell.ell,
        seed: cell.seed,
        spectrum: input.label(),
        error_f: None,
        opt_error_f: None,
        bound: None,
        bound_reference: false,
        wall_ms: None,
        flops_model: None,
        flagged: false,
        path: None,
        failure: Some(msg.to_string()),
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// CSV with the fixed header; empty fields mean "not available".
pub fn write_csv<W: Write>(reports: &[Report], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let wrap = |e: csv::Error| Error::Serialization(e.to_string());
    out.write_record(CSV_HEADER).map_err(wrap)?;
    for r in reports {
        out.write_record([
            r.method.clone(),
            r.m.to_string(),
            r.n.to_string(),
            r.r.to_string(),
            r.ell.to_string(),
            r.seed.to_string(),
            r.spectrum.clone(),
            opt(r.error_f),
            opt(r.opt_error_f),
            opt(r.bound),
            opt(r.wall_ms),
            opt(r.flops_model),
            r.flagged.to_string(),
            r.path.clone().unwrap_or_default(),
        ])
        .map_err(wrap)?;
    }
    out.flush().map_err(|e| Error::Serialization(e.to_string()))
}

pub fn write_jsonl<W: Write>(reports: &[Report], mut w: W) -> Result<()> {
    for r in reports {
        let line = serde_json::to_string(r).map_err(|e| Error::Serialization(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::Serialization(e.to_string()))?;
    }
    Ok(())
}
