//! Deterministic dense and sparse linear-algebra primitives.

pub mod dct;
pub mod dense;
pub mod qr;
pub mod sparse;
pub mod svd;
pub mod triangular;

pub use dct::{dct2_columns, dct2_reference, dct2_rows, Dct};
pub use dense::{gemm, DenseMatrix, Trans};
pub use qr::{pivoted_qr, thin_qr, PivotedQr, QrFactors};
pub use sparse::{matmul, Matrix, MatrixRef, OwnedBlock, SparseMatrix};
pub use svd::{singular_values, svd, SvdFactors};
pub use triangular::{
    estimate_norms, tri_solve_left, tri_solve_left_transposed, tri_solve_right,
    tri_solve_right_transposed, NormEstimates,
};

/// Unit roundoff of IEEE double precision, `2^-53`.
pub const UNIT_ROUNDOFF: f64 = 1.0 / 9007199254740992.0;
