//! Matrix Market reader and writer (real `coordinate` and `array` formats).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::error::{Error, Result};
use crate::kernels::{DenseMatrix, Matrix, SparseMatrix};

#[derive(Debug, Error, PartialEq)]
pub enum MatrixMarketError {
    #[error("line {line}: malformed header: {reason}")]
    MalformedHeader { line: usize, reason: String },
    #[error("line {line}: field '{field}' is not real-valued")]
    UnsupportedField { line: usize, field: String },
    #[error("line {line}: symmetry '{symmetry}' is not supported")]
    UnsupportedSymmetry { line: usize, symmetry: String },
    #[error("line {line}: malformed size line: {reason}")]
    MalformedSize { line: usize, reason: String },
    #[error("line {line}: malformed entry: {reason}")]
    MalformedEntry { line: usize, reason: String },
    #[error("line {line}: index ({row}, {col}) outside a {rows}x{cols} matrix")]
    IndexOutOfRange {
        line: usize,
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("line {line}: expected {expected} entries, found {found}")]
    TooFewEntries {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: more entries than the {expected} declared")]
    TooManyEntries { line: usize, expected: usize },
    #[error("line {line}: non-finite value")]
    NonFinite { line: usize },
}

impl MatrixMarketError {
    pub fn line(&self) -> usize {
        match self {
            Self::MalformedHeader { line, .. }
            | Self::UnsupportedField { line, .. }
            | Self::UnsupportedSymmetry { line, .. }
            | Self::MalformedSize { line, .. }
            | Self::MalformedEntry { line, .. }
            | Self::IndexOutOfRange { line, .. }
            | Self::TooFewEntries { line, .. }
            | Self::TooManyEntries { line, .. }
            | Self::NonFinite { line } => *line,
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Format {
    Coordinate,
    Array,
}

#[derive(Clone, Copy, PartialEq)]
enum Symmetry {
    General,
    Symmetric,
}

type MmResult<T> = std::result::Result<T, MatrixMarketError>;

pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_matrix_market(&text)?)
}

pub fn parse_matrix_market(text: &str) -> MmResult<Matrix> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (hline, header) = lines.next().ok_or(MatrixMarketError::MalformedHeader {
        line: 1,
        reason: "empty input".into(),
    })?;
    let (format, symmetry) = parse_header(hline, header)?;

    let mut body = lines.filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('%')
    });
    let (sline, size) = body.next().ok_or(MatrixMarketError::MalformedSize {
        line: hline + 1,
        reason: "missing size line".into(),
    })?;
    let dims: Vec<&str> = size.split_whitespace().collect();
    let parse_dim = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| MatrixMarketError::MalformedSize {
                line: sline,
                reason: format!("'{s}' is not a non-negative integer"),
            })
    };
    let want = if format == Format::Coordinate { 3 } else { 2 };
    if dims.len() != want {
        return Err(MatrixMarketError::MalformedSize {
            line: sline,
            reason: format!("expected {want} integers, found {}", dims.len()),
        });
    }
    let rows = parse_dim(dims[0])?;
    let cols = parse_dim(dims[1])?;
    if symmetry == Symmetry::Symmetric && rows != cols {
        return Err(MatrixMarketError::MalformedSize {
            line: sline,
            reason: format!("symmetric matrix must be square, got {rows}x{cols}"),
        });
    }

    match format {
        Format::Coordinate => {
            let nnz = parse_dim(dims[2])?;
            let mut triplets = Vec::with_capacity(if symmetry == Symmetry::Symmetric {
                2 * nnz
            } else {
                nnz
            });
            let mut count = 0;
            let mut last_line = sline;
            for (line, l) in body {
                if count == nnz {
                    return Err(MatrixMarketError::TooManyEntries {
                        line,
                        expected: nnz,
                    });
                }
                let toks: Vec<&str> = l.split_whitespace().collect();
                if toks.len() != 3 {
                    return Err(MatrixMarketError::MalformedEntry {
                        line,
                        reason: format!("expected 'row col value', found {} tokens", toks.len()),
                    });
                }
                let idx = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|_| MatrixMarketError::MalformedEntry {
                            line,
                            reason: format!("'{s}' is not a positive integer index"),
                        })
                };
                let (i, j) = (idx(toks[0])?, idx(toks[1])?);
                if i == 0 || j == 0 || i > rows || j > cols {
                    return Err(MatrixMarketError::IndexOutOfRange {
                        line,
                        row: i,
                        col: j,
                        rows,
                        cols,
                    });
                }
                if symmetry == Symmetry::Symmetric && j > i {
                    return Err(MatrixMarketError::MalformedEntry {
                        line,
                        reason: "symmetric storage requires entries on or below the diagonal"
                            .into(),
                    });
                }
                let v = parse_value(line, toks[2])?;
                triplets.push((i - 1, j - 1, v));
                if symmetry == Symmetry::Symmetric && i != j {
                    triplets.push((j - 1, i - 1, v));
                }
                count += 1;
                last_line = line;
            }
            if count < nnz {
                return Err(MatrixMarketError::TooFewEntries {
                    line: last_line,
                    expected: nnz,
                    found: count,
                });
            }
            let sparse = SparseMatrix::from_triplets(rows, cols, &triplets)
                .expect("validated triplets always form a valid CSR matrix");
            Ok(Matrix::Sparse(sparse))
        }
        Format::Array => {
            // symmetric arrays list the lower triangle column by column
            let positions: Vec<(usize, usize)> = match symmetry {
                Symmetry::General => (0..cols)
                    .flat_map(|j| (0..rows).map(move |i| (i, j)))
                    .collect(),
                Symmetry::Symmetric => (0..cols)
                    .flat_map(|j| (j..rows).map(move |i| (i, j)))
                    .collect(),
            };
            let mut data = vec![0.0; rows * cols];
            let mut count = 0;
            let mut last_line = sline;
            for (line, l) in body {
                for tok in l.split_whitespace() {
                    if count == positions.len() {
                        return Err(MatrixMarketError::TooManyEntries {
                            line,
                            expected: positions.len(),
                        });
                    }
                    let v = parse_value(line, tok)?;
                    let (i, j) = positions[count];
                    data[i + j * rows] = v;
                    if symmetry == Symmetry::Symmetric {
                        data[j + i * rows] = v;
                    }
                    count += 1;
                }
                last_line = line;
            }
            if count < positions.len() {
                return Err(MatrixMarketError::TooFewEntries {
                    line: last_line,
                    expected: positions.len(),
                    found: count,
                });
            }
            Ok(Matrix::Dense(DenseMatrix::from_parts(rows, cols, data)))
        }
    }
}

fn parse_header(line: usize, header: &str) -> MmResult<(Format, Symmetry)> {
    let toks: Vec<String> = header
        .split_whitespace()
        .map(|t| t.to_ascii_lowercase())
        .collect();
    let malformed = |reason: &str| MatrixMarketError::MalformedHeader {
        line,
        reason: reason.into(),
    };
    if toks.first().map(String::as_str) != Some("%%matrixmarket") {
        return Err(malformed("first line must start with %%MatrixMarket"));
    }
    if toks.len() != 5 {
        return Err(malformed(
            "expected '%%MatrixMarket matrix <format> <field> <symmetry>'",
        ));
    }
    if toks[1] != "matrix" {
        return Err(malformed("object must be 'matrix'"));
    }
    let format = match toks[2].as_str() {
        "coordinate" => Format::Coordinate,
        "array" => Format::Array,
        other => return Err(malformed(&format!("unknown format '{other}'"))),
    };
    match toks[3].as_str() {
        "real" | "double" | "integer" => {}
        other => {
            return Err(MatrixMarketError::UnsupportedField {
                line,
                field: other.into(),
            })
        }
    }
    let symmetry = match toks[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        other => {
            return Err(MatrixMarketError::UnsupportedSymmetry {
                line,
                symmetry: other.into(),
            })
        }
    };
    Ok((format, symmetry))
}

fn parse_value(line: usize, tok: &str) -> MmResult<f64> {
    let v: f64 = tok.parse().map_err(|_| MatrixMarketError::MalformedEntry {
        line,
        reason: format!("'{tok}' is not a number"),
    })?;
    if !v.is_finite() {
        return Err(MatrixMarketError::NonFinite { line });
    }
    Ok(v)
}

/// Serializes a matrix as `array real general` (dense) or
/// `coordinate real general` (sparse). Values use shortest round-trip form.
pub fn format_matrix_market(m: &Matrix) -> String {
    let mut out = String::new();
    match m {
        Matrix::Dense(d) => {
            out.push_str("%%MatrixMarket matrix array real general\n");
            let _ = writeln!(out, "{} {}", d.rows(), d.cols());
            for v in d.as_slice() {
                let _ = writeln!(out, "{v:?}");
            }
        }
        Matrix::Sparse(s) => {
            out.push_str("%%MatrixMarket matrix coordinate real general\n");
            let _ = writeln!(out, "{} {} {}", s.rows(), s.cols(), s.nnz());
            for i in 0..s.rows() {
                for (j, v) in s.row(i) {
                    let _ = writeln!(out, "{} {} {v:?}", i + 1, j + 1);
                }
            }
        }
    }
    out
}

pub fn write_matrix_market(m: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_matrix_market(m)).map_err(|e| Error::io(path, e))
}
