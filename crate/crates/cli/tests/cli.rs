use std::path::Path;
use std::process::{Command, Output};

use randlr::io::{load_container, load_state, write_matrix_market, Contents};
use randlr::kernels::{DenseMatrix, Matrix};
use serde_json::Value;

fn randlr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_randlr"))
        .args(args)
        .env_remove("RANDLR_SEED")
        .output()
        .expect("binary runs")
}

fn json_line(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stdout);
    let line = text.lines().last().unwrap_or_else(|| {
        panic!(
            "no output; stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        )
    });
    serde_json::from_str(line).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn exact_rank_gn_summary() {
    let out = randlr(&[
        "approximate",
        "--input",
        "spectrum=rank:5,n=60,m=70,seed=3",
        "--method",
        "gn",
        "--rank",
        "5",
        "--check-error",
    ]);
    assert!(out.status.success());
    let v = json_line(&out);
    assert!(v["error_f"].as_f64().unwrap() <= 1e-10, "{v}");
    assert_eq!(v["method"], "gn");
    assert_eq!(v["oversample"], 3);
    assert_eq!(v["m"], 70);
}

#[test]
fn nystrom_rejects_nonsymmetric_file() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("a.mtx");
    let a = DenseMatrix::from_rows(&[&[1.0, 2.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
    write_matrix_market(&Matrix::Dense(a), &file).unwrap();
    let out = randlr(&[
        "approximate",
        "--input",
        path_str(&file),
        "--method",
        "nystrom",
        "--rank",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("symmetric"));
}

#[test]
fn sgn_on_near_singular_matrix_succeeds_flagged() {
    let out = randlr(&[
        "approximate",
        "--input",
        "spectrum=geomrange:1e-15:100,n=200,seed=2",
        "--method",
        "sgn",
        "--rank",
        "100",
        "--oversample",
        "50",
    ]);
    assert!(out.status.success());
    let v = json_line(&out);
    assert_eq!(v["flagged"], true);
    assert_eq!(v["path"], "RRQRTruncate");
}

#[test]
fn fallback_never_fails_on_ill_conditioning() {
    let out = randlr(&[
        "approximate",
        "--input",
        "spectrum=rank:3,n=40,seed=1",
        "--rank",
        "8",
        "--fallback",
        "on",
    ]);
    assert!(out.status.success());
    let v = json_line(&out);
    assert_eq!(v["fallback_used"], true);
    assert_eq!(v["numerical_rank"], 3);
}

#[test]
fn exit_codes_for_bad_args_and_missing_files() {
    assert_eq!(
        randlr(&["approximate", "--input", "x.mtx"]).status.code(),
        Some(2)
    );
    assert_eq!(
        randlr(&[
            "approximate",
            "--input",
            "spectrum=rank:2,n=10",
            "--rank",
            "2",
            "--method",
            "bogus"
        ])
        .status
        .code(),
        Some(2)
    );
    let missing = randlr(&[
        "approximate",
        "--input",
        "/nonexistent/a.mtx",
        "--rank",
        "2",
    ]);
    assert_eq!(missing.status.code(), Some(3));
    assert!(!String::from_utf8_lossy(&missing.stderr).contains("panicked"));
    assert_eq!(
        randlr(&[
            "update",
            "--container",
            "/nonexistent/c.rlr",
            "--add",
            "x.mtx"
        ])
        .status
        .code(),
        Some(3)
    );
    assert_eq!(
        randlr(&[
            "approximate",
            "--input",
            "spectrum=rank:2,n=10",
            "--rank",
            "9"
        ])
        .status
        .code(),
        Some(4)
    );
}

#[test]
fn seed_comes_from_environment() {
    let out = Command::new(env!("CARGO_BIN_EXE_randlr"))
        .args([
            "approximate",
            "--input",
            "spectrum=rank:2,n=10",
            "--rank",
            "2",
        ])
        .env("RANDLR_SEED", "77")
        .output()
        .unwrap();
    assert_eq!(json_line(&out)["seed"], 77);
}

#[test]
fn benchmark_one_cell_csv() {
    let args = [
        "benchmark",
        "--gallery",
        "spectrum=geometric:0.9,n=60,seed=1",
        "--methods",
        "gn",
        "--ranks",
        "10",
        "--seeds",
        "4",
        "--reps",
        "3",
    ];
    let a = randlr(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let text = String::from_utf8(a.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "method,m,n,r,ell,seed,spectrum,error_f,opt_error_f,bound,wall_ms,flops_model,flagged,path"
    );
    assert_eq!(lines.len(), 2);
    let b = String::from_utf8(randlr(&args).stdout).unwrap();
    // error columns agree; timings may not
    let cols = |l: &str| l.split(',').take(10).map(String::from).collect::<Vec<_>>();
    assert_eq!(cols(lines[1]), cols(b.lines().nth(1).unwrap()));
}

#[test]
fn benchmark_writes_files_and_svd_row() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("out.csv");
    let jl = dir.path().join("out.jsonl");
    let out = randlr(&[
        "benchmark",
        "--gallery",
        "spectrum=algebraic:1,n=50,seed=1",
        "--methods",
        "gn,hmt,nystrom",
        "--ranks",
        "6,10",
        "--oversample",
        "half,4",
        "--seeds",
        "0..2",
        "--reps",
        "1",
        "--against-svd",
        "--output",
        path_str(&csv),
        "--jsonl",
        path_str(&jl),
    ]);
    assert!(out.status.success());
    let v = json_line(&out);
    // 3 methods x 2 ranks x 2 policies x 2 seeds + the SVD row
    assert_eq!(v["cells"], 25);
    // nystrom needs a symmetric input
    assert_eq!(v["failures"], 8);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 26);
    assert_eq!(std::fs::read_to_string(&jl).unwrap().lines().count(), 25);
}

#[test]
fn check_and_fix() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.rlr");
    let bad = dir.path().join("bad.rlr");
    let run = |input: &str, out: &Path| {
        let o = randlr(&[
            "approximate",
            "--input",
            input,
            "--rank",
            "8",
            "--output",
            path_str(out),
        ]);
        assert!(o.status.success());
    };
    run("spectrum=geometric:0.7,n=40,seed=1", &good);
    run("spectrum=rank:3,n=40,seed=1", &bad);

    let g = randlr(&["check", "--container", path_str(&good)]);
    assert!(g.status.success());
    assert_eq!(json_line(&g)["flagged"], false);

    let b = randlr(&["check", "--container", path_str(&bad)]);
    assert!(b.status.success(), "detection is not failure");
    assert_eq!(json_line(&b)["flagged"], true);

    let f = randlr(&["check", "--container", path_str(&bad), "--fix"]);
    assert!(f.status.success());
    assert_eq!(json_line(&f)["path"], "RRQRTruncate");
    let reloaded = load_container(&bad).unwrap().1.into_approximant();
    assert_eq!(reloaded.path().unwrap().name(), "RRQRTruncate");
    assert_eq!(reloaded.core().unwrap().numerical_rank(), 3);

    let direct = randlr(&[
        "check",
        "--input",
        "spectrum=rank:3,n=40,seed=1",
        "--rank",
        "8",
        "--pretty",
    ]);
    assert!(String::from_utf8_lossy(&direct.stdout)
        .lines()
        .any(|l| l.starts_with("flagged") && l.ends_with("true")));
}

#[test]
fn update_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("s.rlr");
    let o = randlr(&[
        "approximate",
        "--input",
        "spectrum=geometric:0.8,n=30,m=40,seed=2",
        "--rank",
        "6",
        "--state",
        "--output",
        path_str(&state),
    ]);
    assert!(o.status.success());
    let before = load_state(&state).unwrap();

    // zero additive update changes only the counters
    let zero = dir.path().join("zero.mtx");
    write_matrix_market(&Matrix::Dense(DenseMatrix::zeros(40, 30)), &zero).unwrap();
    let u = randlr(&[
        "update",
        "--container",
        path_str(&state),
        "--add",
        path_str(&zero),
    ]);
    assert!(u.status.success());
    let after = load_state(&state).unwrap();
    assert_eq!(after.update_count(), before.update_count() + 1);
    assert_eq!(after.f(), before.f());
    assert_eq!(after.g(), before.g());
    assert_eq!(after.raw_core(), before.raw_core());
    assert_eq!(after.x(), before.x());
    assert_eq!(after.y(), before.y());

    let rows = randlr(&[
        "update",
        "--container",
        path_str(&state),
        "--append-rows",
        "spectrum=rank:2,n=30,m=5,seed=5",
    ]);
    assert!(rows.status.success());
    let v = json_line(&rows);
    assert_eq!(v["m"], 45);
    assert_eq!(v["update_count"], 2);
    assert!(v["next_stream"].as_u64().unwrap() > before.next_stream());

    let approx_only = dir.path().join("a.rlr");
    randlr(&[
        "approximate",
        "--input",
        "spectrum=rank:2,n=10",
        "--rank",
        "2",
        "--output",
        path_str(&approx_only),
    ]);
    let refused = randlr(&[
        "update",
        "--container",
        path_str(&approx_only),
        "--add",
        path_str(&zero),
    ]);
    assert_eq!(refused.status.code(), Some(2));
    assert!(matches!(
        load_container(&approx_only).unwrap().1,
        Contents::Approximant(_)
    ));
}
