use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde_json::{json, Value};

use randlr::decomp::{approximate as run_method, Approximant, CoreMode, Method, Options};
use randlr::eval::{
    frobenius_error_blocked, run_sweep, write_csv, write_jsonl, ErrorMode, GallerySpec,
    OversamplePolicy, SweepConfig, SweepMatrix, ERROR_BLOCK,
};
use randlr::io::{load_container, save_approximant, save_state, Contents};
use randlr::kernels::{thin_qr, Matrix, MatrixRef};
use randlr::sketch::SketchKind;
use randlr::stability::{
    detect, CoreFactor, EpsilonMode, EpsilonPolicy, InstabilityReport, TruncationPath,
    DEFAULT_THRESHOLD,
};
use randlr::update::UpdatableState;
use randlr::{Error, Result};

use crate::output::emit;
use crate::{input, ApproximateArgs, BenchmarkArgs, CheckArgs, MethodArgs, OnOff, UpdateArgs};

pub fn exit_code(e: &Error) -> u8 {
    if e.is_io_error() {
        3
    } else if e.is_dimension_error() {
        4
    } else {
        match e {
            Error::InvalidArgument(_) | Error::Unsupported { .. } => 2,
            _ => 5,
        }
    }
}

fn parse_epsilon(s: Option<&str>) -> Result<EpsilonPolicy> {
    let Some(s) = s else {
        return Ok(EpsilonPolicy::default());
    };
    let bad = || {
        Error::InvalidArgument(format!(
            "epsilon must be a number or rel:<coefficient>, got '{s}'"
        ))
    };
    match s.split_once(':') {
        Some(("rel", c)) => EpsilonPolicy::relative(c.parse().map_err(|_| bad())?),
        Some(("abs", c)) => EpsilonPolicy::absolute(c.parse().map_err(|_| bad())?),
        Some(_) => Err(bad()),
        None => EpsilonPolicy::absolute(s.parse().map_err(|_| bad())?),
    }
}

fn epsilon_json(p: &EpsilonPolicy) -> Value {
    let mode = match p.mode {
        EpsilonMode::Relative => "relative",
        EpsilonMode::Absolute => "absolute",
    };
    json!({ "mode": mode, "coefficient": p.coefficient })
}

fn core_mode_json(mode: Option<CoreMode>) -> Value {
    match mode {
        None => Value::Null,
        Some(CoreMode::Plain) => json!("plain"),
        Some(CoreMode::Fallback) => json!("fallback"),
        Some(CoreMode::Stabilized(p)) => json!(format!("stabilized:{}", p.name())),
    }
}

fn options(m: &MethodArgs) -> Result<(Method, Options)> {
    let method: Method = m.method.parse()?;
    let mut opts = Options::new(m.rank)
        .seed(m.seed)
        .sketch(m.sketch.parse::<SketchKind>()?)
        .epsilon(parse_epsilon(m.epsilon.as_deref())?)
        .path(m.path.parse::<TruncationPath>()?)
        .fallback(m.fallback == OnOff::On);
    if let Some(l) = m.oversample {
        opts = opts.oversample(l);
    }
    if let Some(p) = m.power {
        opts = opts.power(p);
    }
    if let Some(t) = m.threshold {
        if !(t > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "threshold must be positive, got {t}"
            )));
        }
        opts.threshold = t;
    }
    Ok((method, opts))
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn approximant_summary(approx: &Approximant) -> Value {
    let core = approx.core();
    let report = core.and_then(CoreFactor::report);
    json!({
        "method": approx.method().name(),
        "m": approx.shape().0,
        "n": approx.shape().1,
        "rank": approx.rank(),
        "oversample": approx.oversample(),
        "seed": approx.seed(),
        "sketch": approx.sketch_kind().name(),
        "power": approx.power(),
        "epsilon": epsilon_json(approx.epsilon_policy()),
        "core_mode": core_mode_json(approx.core_mode()),
        "path": approx.path().map(TruncationPath::name),
        "flagged": approx.flagged(),
        "condition_estimate": report.map(|r| r.condition_estimate),
        "numerical_rank": core.map(CoreFactor::numerical_rank),
        "fallback_used": core.is_some_and(CoreFactor::fallback_used),
        "warnings": approx.warnings(),
    })
}

fn merge(mut base: Value, extra: Value) -> Value {
    if let (Value::Object(b), Value::Object(e)) = (&mut base, extra) {
        b.extend(e);
    }
    base
}

pub fn approximate(args: ApproximateArgs) -> Result<()> {
    let (method, opts) = options(&args.method)?;
    if args.state && !method.is_generalized_nystrom() {
        return Err(Error::Unsupported {
            op: "updatable state",
            method: method.name().into(),
        });
    }
    let a = input::load(&args.input)?;
    let a_ref = MatrixRef::from(&a);
    let t = Instant::now();
    let (approx, state) = if args.state {
        let s = UpdatableState::new(a_ref, method, &opts)?;
        (s.approximant(), Some(s))
    } else {
        (run_method(a_ref, method, &opts)?, None)
    };
    let wall = ms(t);
    let (error_f, error_ms) = if args.check_error {
        let t = Instant::now();
        (
            Some(frobenius_error_blocked(a_ref, &approx, ERROR_BLOCK)?),
            Some(ms(t)),
        )
    } else {
        (None, None)
    };
    if let Some(out) = &args.output {
        match &state {
            Some(s) => save_state(s, out)?,
            None => save_approximant(&approx, out)?,
        }
    }
    let summary = merge(
        json!({ "command": "approximate", "input": args.input }),
        merge(
            approximant_summary(&approx),
            json!({
                "fallback": args.method.fallback == OnOff::On,
                "threshold": opts.threshold,
                "wall_ms": wall,
                "error_f": error_f,
                "error_estimator": error_f.map(|_| "blocked-residual"),
                "error_ms": error_ms,
                "output": args.output,
                "kind": if state.is_some() { "state" } else { "approximant" },
            }),
        ),
    );
    emit(&summary, args.pretty);
    Ok(())
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::InvalidArgument(format!("seeds must look like 0..10,42, got '{s}'"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((lo, hi)) = part.split_once("..") {
            let lo: u64 = lo.parse().map_err(|_| bad())?;
            let hi: u64 = hi.parse().map_err(|_| bad())?;
            if hi <= lo {
                return Err(bad());
            }
            out.extend(lo..hi);
        } else {
            out.push(part.parse().map_err(|_| bad())?);
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

pub fn benchmark(args: BenchmarkArgs) -> Result<()> {
    if args.gallery.is_empty() && args.input.is_empty() {
        return Err(Error::InvalidArgument(
            "benchmark needs at least one --gallery or --input".into(),
        ));
    }
    let mut matrices = Vec::new();
    for g in &args.gallery {
        matrices.push(SweepMatrix::Gallery(g.parse::<GallerySpec>()?));
    }
    for path in &args.input {
        let label = Path::new(path)
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.clone());
        matrices.push(SweepMatrix::Loaded {
            label,
            matrix: input::load(path)?,
        });
    }
    let error_mode = match args.error_mode.as_str() {
        "blocked" => ErrorMode::Blocked,
        "factored" => ErrorMode::Factored,
        "dense" => ErrorMode::Dense,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown error mode '{other}'"
            )))
        }
    };
    if args.reps == 0 {
        return Err(Error::InvalidArgument("--reps must be at least 1".into()));
    }
    let cfg = SweepConfig {
        methods: args
            .methods
            .iter()
            .map(|m| m.parse())
            .collect::<Result<_>>()?,
        ranks: args.ranks.clone(),
        oversample: args
            .oversample
            .iter()
            .map(|o| o.parse::<OversamplePolicy>())
            .collect::<Result<_>>()?,
        matrices,
        seeds: parse_seeds(&args.seeds)?,
        repetitions: args.reps,
        sketch: args.sketch.parse()?,
        power: args.power,
        epsilon: parse_epsilon(args.epsilon.as_deref())?,
        fallback: args.fallback == OnOff::On,
        error_mode,
        against_svd: args.against_svd,
        svd_cap: args.svd_cap,
        jobs: args.jobs,
    };
    let reports = run_sweep(&cfg);
    for r in reports.iter().filter(|r| r.failure.is_some()) {
        log::warn!(
            "{} r={} seed={} on {}: {}",
            r.method,
            r.r,
            r.seed,
            r.spectrum,
            r.failure.as_deref().unwrap_or("")
        );
    }
    match &args.output {
        Some(path) => {
            let f = File::create(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            write_csv(&reports, BufWriter::new(f))?;
        }
        None => write_csv(&reports, io::stdout().lock())?,
    }
    if let Some(path) = &args.jsonl {
        let f = File::create(path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        let mut w = BufWriter::new(f);
        write_jsonl(&reports, &mut w)?;
        w.flush().map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
    }
    if args.output.is_some() {
        let failures = reports.iter().filter(|r| r.failure.is_some()).count();
        emit(
            &json!({
                "command": "benchmark",
                "cells": reports.len(),
                "failures": failures,
                "output": args.output,
                "jsonl": args.jsonl,
                "sketch": cfg.sketch.name(),
                "seeds": cfg.seeds,
                "repetitions": cfg.repetitions,
            }),
            false,
        );
    }
    Ok(())
}

fn load_matrix_arg(s: &str) -> Result<Matrix> {
    input::load(s)
}

pub fn update(args: UpdateArgs) -> Result<()> {
    let mut state = match load_container(&args.container)?.1 {
        Contents::State(s) => s,
        Contents::Approximant(a) => {
            return Err(Error::Unsupported {
                op: "update of a container saved without --state",
                method: a.method().name().into(),
            })
        }
    };
    let before = state.shape();
    let t = Instant::now();
    let kind = if let Some(p) = &args.append_rows {
        state.append_rows(&load_matrix_arg(p)?)?;
        "append_rows"
    } else if let Some(p) = &args.append_cols {
        state.append_cols(&load_matrix_arg(p)?)?;
        "append_cols"
    } else if let Some(p) = &args.add {
        state.additive_update(&load_matrix_arg(p)?)?;
        "additive"
    } else if let Some(delta) = args.increase_rank {
        let a = load_matrix_arg(args.matrix.as_deref().expect("clap requires --matrix"))?;
        state.resample_increase_rank(&a, delta)?;
        "increase_rank"
    } else {
        unreachable!("clap requires one update kind")
    };
    let wall = ms(t);
    let out = args
        .output
        .clone()
        .unwrap_or_else(|| args.container.clone());
    save_state(&state, &out)?;
    let approx = state.approximant();
    let error_f = match &args.check_error {
        Some(p) => Some(frobenius_error_blocked(
            &load_matrix_arg(p)?,
            &approx,
            ERROR_BLOCK,
        )?),
        None => None,
    };
    let summary = merge(
        json!({ "command": "update", "update": kind, "container": args.container, "previous_shape": [before.0, before.1] }),
        merge(
            approximant_summary(&approx),
            json!({
                "next_stream": state.next_stream(),
                "update_count": state.update_count(),
                "wall_ms": wall,
                "error_f": error_f,
                "output": out,
            }),
        ),
    );
    emit(&summary, args.pretty);
    Ok(())
}

/// Detection on the plain triangular factor when it is stored, otherwise the
/// report recorded at build time, re-thresholded.
fn core_report(core: &CoreFactor, threshold: Option<f64>) -> Result<Option<InstabilityReport>> {
    let plain = core.path() == TruncationPath::PlainQr
        && !core.tri_transposed()
        && core.right_factor().is_none();
    let stored = core.report().copied();
    let thr = threshold
        .or(stored.map(|r| r.threshold))
        .unwrap_or(DEFAULT_THRESHOLD);
    if plain {
        return Ok(Some(detect(core.triangular(), thr)?));
    }
    Ok(stored.map(|mut r| {
        r.threshold = thr;
        r.flagged = r.condition_estimate.is_nan()
            || r.condition_estimate * randlr::kernels::UNIT_ROUNDOFF > thr;
        r
    }))
}

fn report_json(r: Option<InstabilityReport>) -> Value {
    match r {
        Some(r) => json!({
            "flagged": r.flagged,
            "condition_estimate": r.condition_estimate,
            "norm_r": r.norm_r,
            "norm_r_inv": r.norm_r_inv,
            "threshold": r.threshold,
        }),
        None => json!({ "flagged": false, "condition_estimate": null }),
    }
}

pub fn check(args: CheckArgs) -> Result<()> {
    let fix_path: TruncationPath = args.path.parse()?;
    if let Some(t) = args.threshold {
        if !(t > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "threshold must be positive, got {t}"
            )));
        }
    }
    let (contents, source) = match (&args.container, &args.input) {
        (Some(c), _) => (load_container(c)?.1, json!(c)),
        (None, Some(i)) => {
            let a = input::load(i)?;
            let method: Method = args.method.as_deref().unwrap_or("gn").parse()?;
            let mut opts = Options::new(args.rank.expect("clap requires --rank"))
                .seed(args.seed)
                .sketch(args.sketch.parse()?);
            if let Some(l) = args.oversample {
                opts = opts.oversample(l);
            }
            if let Some(t) = args.threshold {
                opts.threshold = t;
            }
            (
                Contents::Approximant(run_method(MatrixRef::from(&a), method, &opts)?),
                json!(i),
            )
        }
        (None, None) => unreachable!("clap requires a source"),
    };

    let (report, mut summary) = match &contents {
        Contents::State(s) => {
            let r = detect(
                &thin_qr(s.raw_core())?.r,
                args.threshold.unwrap_or(DEFAULT_THRESHOLD),
            )?;
            (Some(r), approximant_summary(&s.approximant()))
        }
        Contents::Approximant(a) => {
            let r = match a.core() {
                Some(core) => core_report(core, args.threshold)?,
                None => None,
            };
            (r, approximant_summary(a))
        }
    };
    summary = merge(summary, report_json(report));

    let mut fixed = false;
    let mut written = None;
    if args.fix {
        let dest = args.output.clone().or_else(|| args.container.clone());
        let thr = args.threshold.unwrap_or(DEFAULT_THRESHOLD);
        let after = match contents {
            Contents::State(mut s) => {
                s.restabilize(fix_path)?;
                if let Some(d) = &dest {
                    save_state(&s, d)?;
                }
                s.approximant()
            }
            Contents::Approximant(a) => {
                let f = a.restabilized(fix_path, thr)?;
                if let Some(d) = &dest {
                    save_approximant(&f, d)?;
                }
                f
            }
        };
        fixed = true;
        written = dest;
        summary = merge(
            summary,
            json!({
                "method": after.method().name(),
                "path": after.path().map(TruncationPath::name),
                "core_mode": core_mode_json(after.core_mode()),
                "numerical_rank": after.core().map(CoreFactor::numerical_rank),
            }),
        );
    }
    let summary = merge(
        json!({ "command": "check", "source": source }),
        merge(summary, json!({ "fixed": fixed, "output": written })),
    );
    emit(&summary, args.pretty);
    Ok(())
}
