//! Test matrices, error oracles, theoretical bounds, flop counts and sweeps.

mod bounds;
mod error;
mod gallery;
mod sweep;

pub use bounds::{
    best_bound, bound_gn, bound_hmt, bound_sgn, flop_model, gauss_pinv_moment_bound, method_flops,
    BoundInputs, FlopModel,
};
pub use error::{
    frobenius_error_blocked, frobenius_error_dense, frobenius_error_factored, optimal_error,
    optimal_error_capped, tail_norm, DEFAULT_SVD_CAP,
};
pub use gallery::{gallery, GallerySpec, SpectrumKind};
pub use sweep::{
    run_sweep, write_csv, write_jsonl, ErrorMode, OversamplePolicy, Report, SweepConfig,
    SweepMatrix, CSV_HEADER, ERROR_BLOCK,
};
