//! `randlr`: randomized low-rank approximation from the command line.
//!
//! Exit codes: 0 success, 2 bad arguments, 3 I/O or file format errors,
//! 4 dimension or matrix-precondition errors, 5 numerical failure.

mod commands;
mod input;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "randlr",
    version,
    about = "Randomized low-rank matrix approximation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute a low-rank approximant and save its factors.
    Approximate(ApproximateArgs),
    /// Run a benchmark grid and emit one CSV row per cell.
    Benchmark(BenchmarkArgs),
    /// Apply an update to a saved state.
    Update(UpdateArgs),
    /// Report core conditioning, optionally rebuilding an unstable core.
    Check(CheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Args, Debug, Clone)]
struct MethodArgs {
    /// hmt, nystrom, nystrom-hmt, subspace, gn or sgn.
    #[arg(long, default_value = "gn")]
    method: String,
    #[arg(long)]
    rank: usize,
    /// Oversampling for gn/sgn; default ceil(rank/2).
    #[arg(long)]
    oversample: Option<usize>,
    /// Absolute epsilon as a number, or rel:C for C times the core norm.
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long, env = "RANDLR_SEED", default_value_t = 0)]
    seed: u64,
    /// gaussian, dct or countsketch.
    #[arg(long, default_value = "gaussian")]
    sketch: String,
    /// Fall back to a truncated core when gn detects instability.
    #[arg(long, value_enum, default_value_t = OnOff::Off)]
    fallback: OnOff,
    /// Power iterations for hmt/subspace.
    #[arg(long)]
    power: Option<usize>,
    /// Truncation path for sgn: svd, rrqr or diag.
    #[arg(long, default_value = "rrqr")]
    path: String,
    /// Instability threshold on the condition estimate times unit roundoff.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args, Debug)]
struct ApproximateArgs {
    /// Matrix Market file or inline gallery spec (spectrum=...,n=...).
    #[arg(long)]
    input: String,
    #[command(flatten)]
    method: MethodArgs,
    /// Container to write.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Save an updatable state (gn/sgn only) instead of a plain approximant.
    #[arg(long)]
    state: bool,
    /// Measure the Frobenius error of the result.
    #[arg(long)]
    check_error: bool,
    #[arg(long)]
    pretty: bool,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    /// Inline gallery spec; repeatable.
    #[arg(long)]
    gallery: Vec<String>,
    /// Matrix Market file; repeatable.
    #[arg(long)]
    input: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "gn,sgn,hmt")]
    methods: Vec<String>,
    #[arg(long, value_delimiter = ',', required = true)]
    ranks: Vec<usize>,
    /// Oversampling policies: half or an integer.
    #[arg(long, value_delimiter = ',', default_value = "half")]
    oversample: Vec<String>,
    /// Seeds as a list and/or ranges, e.g. 0..10,42.
    #[arg(long, env = "RANDLR_SEED", default_value = "0")]
    seeds: String,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long, default_value = "gaussian")]
    sketch: String,
    #[arg(long)]
    power: Option<usize>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long, value_enum, default_value_t = OnOff::Off)]
    fallback: OnOff,
    /// blocked (exact residual in column blocks), factored or dense.
    #[arg(long, default_value = "blocked")]
    error_mode: String,
    /// Add a dense SVD timing row per matrix (up to --svd-cap entries).
    #[arg(long)]
    against_svd: bool,
    #[arg(long, default_value_t = 1_000_000)]
    svd_cap: usize,
    /// Cells run concurrently; kernels stay single-threaded.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also write JSON lines here.
    #[arg(long)]
    jsonl: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("kind").required(true).args(["append_rows", "append_cols", "add", "increase_rank"])))]
struct UpdateArgs {
    #[arg(long)]
    container: PathBuf,
    /// Rows to append (Matrix Market or gallery spec).
    #[arg(long)]
    append_rows: Option<String>,
    #[arg(long)]
    append_cols: Option<String>,
    /// Additive perturbation E, so that A becomes A + E.
    #[arg(long)]
    add: Option<String>,
    /// Raise the rank by this much; needs --matrix.
    #[arg(long, requires = "matrix")]
    increase_rank: Option<usize>,
    /// The current full matrix, for --increase-rank.
    #[arg(long)]
    matrix: Option<String>,
    /// Where to write; defaults to rewriting --container.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Report the Frobenius error against this (updated) matrix.
    #[arg(long)]
    check_error: Option<String>,
    #[arg(long)]
    pretty: bool,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("source").required(true).args(["container", "input"])))]
struct CheckArgs {
    #[arg(long)]
    container: Option<PathBuf>,
    /// Recompute from a matrix instead of reading a container.
    #[arg(long, requires = "rank")]
    input: Option<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    oversample: Option<usize>,
    #[arg(long, env = "RANDLR_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "gaussian")]
    sketch: String,
    #[arg(long)]
    threshold: Option<f64>,
    /// Rebuild a plain core as an epsilon-pseudoinverse.
    #[arg(long)]
    fix: bool,
    /// Truncation path used by --fix.
    #[arg(long, default_value = "rrqr")]
    path: String,
    /// Where --fix writes; defaults to rewriting --container.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    pretty: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Approximate(a) => commands::approximate(a),
        Command::Benchmark(b) => commands::benchmark(b),
        Command::Update(u) => commands::update(u),
        Command::Check(c) => commands::check(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
