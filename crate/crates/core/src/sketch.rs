//! Random sketch operators: generation from a seed and fast application.

use std::f64::consts::PI;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::dct::{dct2_columns, dct2_rows};
use crate::kernels::{gemm, matmul, DenseMatrix, MatrixRef, Trans};

/// Stream reserved for the right sketch `X` of a run.
pub const STREAM_X: u64 = 0;
/// Stream reserved for the left sketch `Y` of a run.
pub const STREAM_Y: u64 = 1;
/// First stream available to updates.
pub const FIRST_FRESH_STREAM: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SketchKind {
    Gaussian,
    SubsampledDct,
    CountSketch,
}

impl SketchKind {
    pub fn name(self) -> &'static str {
        match self {
            SketchKind::Gaussian => "gaussian",
            SketchKind::SubsampledDct => "dct",
            SketchKind::CountSketch => "countsketch",
        }
    }
}

impl std::str::FromStr for SketchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(SketchKind::Gaussian),
            "dct" | "subsampled-dct" | "subsampleddct" => Ok(SketchKind::SubsampledDct),
            "countsketch" | "count-sketch" => Ok(SketchKind::CountSketch),
            _ => Err(Error::InvalidArgument(format!("unknown sketch kind '{s}'"))),
        }
    }
}

/// Everything needed to regenerate an operator bit for bit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SketchSpec {
    pub kind: SketchKind,
    pub ambient_dim: usize,
    pub sketch_dim: usize,
    pub seed: u64,
    pub stream: u64,
}

impl SketchSpec {
    pub fn new(kind: SketchKind, ambient_dim: usize, sketch_dim: usize, seed: u64) -> Self {
        SketchSpec {
            kind,
            ambient_dim,
            sketch_dim,
            seed,
            stream: 0,
        }
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    fn validate(&self, allow_wide: bool) -> Result<()> {
        if self.sketch_dim == 0 || self.ambient_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "sketch dimensions must be positive (ambient {}, sketch {})",
                self.ambient_dim, self.sketch_dim
            )));
        }
        let wide_ok = allow_wide && self.kind != SketchKind::SubsampledDct;
        if self.sketch_dim > self.ambient_dim && !wide_ok {
            return Err(Error::dims(
                "sketch generation",
                format!("sketch_dim <= ambient_dim = {}", self.ambient_dim),
                format!("sketch_dim = {}", self.sketch_dim),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
enum OperatorData {
    Gaussian(DenseMatrix),
    Dct {
        signs: Vec<f64>,
        selected: Vec<usize>,
        scale: f64,
    },
    CountSketch {
        bucket: Vec<usize>,
        signs: Vec<f64>,
    },
}

/// A generated `ambient_dim x sketch_dim` random matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SketchOperator {
    spec: SketchSpec,
    data: OperatorData,
}

fn rng_for(spec: &SketchSpec) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(spec.stream);
    rng
}

/// Uniform integer in `[0, range)` by Lemire's multiply-shift with rejection.
fn uniform_below(rng: &mut ChaCha8Rng, range: u64) -> u64 {
    let mut m = rng.next_u64() as u128 * range as u128;
    if (m as u64) < range {
        let threshold = range.wrapping_neg() % range;
        while (m as u64) < threshold {
            m = rng.next_u64() as u128 * range as u128;
        }
    }
    (m >> 64) as u64
}

fn random_sign(rng: &mut ChaCha8Rng) -> f64 {
    if rng.next_u64() >> 63 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Fills `out` with standard normals by Box-Muller, using both outputs of each pair.
pub fn fill_gaussian(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    let mut chunks = out.chunks_exact_mut(2);
    for pair in &mut chunks {
        let (z0, z1) = box_muller(rng, SCALE);
        pair[0] = z0;
        pair[1] = z1;
    }
    if let [last] = chunks.into_remainder() {
        *last = box_muller(rng, SCALE).0;
    }
}

fn box_muller(rng: &mut ChaCha8Rng, scale: f64) -> (f64, f64) {
    let u1 = ((rng.next_u64() >> 11) + 1) as f64 * scale;
    let u2 = (rng.next_u64() >> 11) as f64 * scale;
    let radius = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (2.0 * PI * u2).sin_cos();
    (radius * c, radius * s)
}

/// A Gaussian matrix from an explicit seed and stream, filled column-major.
pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64, stream: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut data = vec![0.0; rows * cols];
    fill_gaussian(&mut rng, &mut data);
    DenseMatrix::from_parts(rows, cols, data)
}

pub fn generate(spec: &SketchSpec) -> Result<SketchOperator> {
    spec.validate(false)?;
    Ok(generate_unchecked(spec))
}

/// Like [`generate`], but Gaussian and CountSketch operators may have more
/// columns than rows (needed for row segments of stacked sketches).
pub(crate) fn generate_segment(spec: &SketchSpec) -> Result<SketchOperator> {
    spec.validate(true)?;
    Ok(generate_unchecked(spec))
}

fn generate_unchecked(spec: &SketchSpec) -> SketchOperator {
    let mut rng = rng_for(spec);
    let (n, k) = (spec.ambient_dim, spec.sketch_dim);
    let data = match spec.kind {
        SketchKind::Gaussian => {
            let mut data = vec![0.0; n * k];
            fill_gaussian(&mut rng, &mut data);
            OperatorData::Gaussian(DenseMatrix::from_parts(n, k, data))
        }
        SketchKind::SubsampledDct => {
            let signs: Vec<f64> = (0..n).map(|_| random_sign(&mut rng)).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            for j in 0..k {
                let t = j + uniform_below(&mut rng, (n - j) as u64) as usize;
                perm.swap(j, t);
            }
            perm.truncate(k);
            OperatorData::Dct {
                signs,
                selected: perm,
                scale: (n as f64 / k as f64).sqrt(),
            }
        }
        SketchKind::CountSketch => {
            let mut bucket = Vec::with_capacity(n);
            let mut signs = Vec::with_capacity(n);
            for _ in 0..n {
                bucket.push(uniform_below(&mut rng, k as u64) as usize);
                signs.push(random_sign(&mut rng));
            }
            OperatorData::CountSketch { bucket, signs }
        }
    };
    SketchOperator { spec: *spec, data }
}

impl SketchOperator {
    pub fn spec(&self) -> &SketchSpec {
        &self.spec
    }

    pub fn ambient_dim(&self) -> usize {
        self.spec.ambient_dim
    }

    pub fn sketch_dim(&self) -> usize {
        self.spec.sketch_dim
    }

    /// The explicit `ambient x sketch` matrix.
    pub fn to_dense(&self) -> DenseMatrix {
        let (n, k) = (self.ambient_dim(), self.sketch_dim());
        match &self.data {
            OperatorData::Gaussian(x) => x.clone(),
            OperatorData::Dct {
                signs,
                selected,
                scale,
            } => {
                let nf = n as f64;
                DenseMatrix::from_fn(n, k, |i, j| {
                    let s = selected[j];
                    let alpha = if s == 0 {
                        (1.0 / nf).sqrt()
                    } else {
                        (2.0 / nf).sqrt()
                    };
                    scale
                        * signs[i]
                        * alpha
                        * (PI * (2 * i + 1) as f64 * s as f64 / (2.0 * nf)).cos()
                })
            }
            OperatorData::CountSketch { bucket, signs } => {
                let mut x = DenseMatrix::zeros(n, k);
                for i in 0..n {
                    x[(i, bucket[i])] = signs[i];
                }
                x
            }
        }
    }
}

/// `A X` for `X = op` (`A.cols == ambient_dim`).
pub fn apply_right<'a>(a: impl Into<MatrixRef<'a>>, op: &SketchOperator) -> Result<DenseMatrix> {
    let a = a.into();
    if a.cols() != op.ambient_dim() {
        return Err(Error::dims(
            "sketch apply_right",
            format!("A with {} columns", op.ambient_dim()),
            format!("{} columns", a.cols()),
        ));
    }
    let m = a.rows();
    let k = op.sketch_dim();
    match (&op.data, a) {
        (OperatorData::Gaussian(x), a) => matmul(a, x, false),
        (
            OperatorData::Dct {
                signs,
                selected,
                scale,
            },
            MatrixRef::Dense(d),
        ) => {
            let mut work = d.clone();
            for (j, s) in signs.iter().enumerate() {
                if *s < 0.0 {
                    work.col_mut(j).iter_mut().for_each(|v| *v = -*v);
                }
            }
            dct2_rows(&mut work);
            let mut out = work.select_columns(selected);
            out.scale(*scale);
            Ok(out)
        }
        (OperatorData::Dct { .. }, a) => matmul(a, &op.to_dense(), false),
        (OperatorData::CountSketch { bucket, signs }, MatrixRef::Dense(d)) => {
            let mut out = DenseMatrix::zeros(m, k);
            for i in 0..d.cols() {
                let (b, s) = (bucket[i], signs[i]);
                out.col_mut(b)
                    .iter_mut()
                    .zip(d.col(i))
                    .for_each(|(o, v)| *o += s * v);
            }
            Ok(out)
        }
        (OperatorData::CountSketch { bucket, signs }, MatrixRef::Sparse(sp)) => {
            let mut out = DenseMatrix::zeros(m, k);
            for i in 0..m {
                for (j, v) in sp.row(i) {
                    out[(i, bucket[j])] += signs[j] * v;
                }
            }
            Ok(out)
        }
    }
}

/// `Y^T A` for `Y = op` (`A.rows == ambient_dim`).
pub fn apply_left<'a>(op: &SketchOperator, a: impl Into<MatrixRef<'a>>) -> Result<DenseMatrix> {
    let a = a.into();
    if a.rows() != op.ambient_dim() {
        return Err(Error::dims(
            "sketch apply_left",
            format!("A with {} rows", op.ambient_dim()),
            format!("{} rows", a.rows()),
        ));
    }
    let n = a.cols();
    let k = op.sketch_dim();
    match (&op.data, a) {
        (OperatorData::Gaussian(y), MatrixRef::Dense(d)) => gemm(y, Trans::Yes, d, Trans::No),
        (OperatorData::Gaussian(y), a) => Ok(matmul(a, y, true)?.transpose()),
        (
            OperatorData::Dct {
                signs,
                selected,
                scale,
            },
            MatrixRef::Dense(d),
        ) => {
            let mut work = d.clone();
            let rows = work.rows();
            for j in 0..n {
                let col = work.col_mut(j);
                for i in 0..rows {
                    col[i] *= signs[i];
                }
            }
            dct2_columns(&mut work);
            let mut out = DenseMatrix::zeros(k, n);
            for j in 0..n {
                let src = work.col(j);
                let dst = out.col_mut(j);
                for (o, &s) in dst.iter_mut().zip(selected.iter()) {
                    *o = scale * src[s];
                }
            }
            Ok(out)
        }
        (OperatorData::Dct { .. }, a) => Ok(matmul(a, &op.to_dense(), true)?.transpose()),
        (OperatorData::CountSketch { bucket, signs }, MatrixRef::Dense(d)) => {
            let mut out = DenseMatrix::zeros(k, n);
            for j in 0..n {
                let src = d.col(j);
                let dst = out.col_mut(j);
                for i in 0..src.len() {
                    dst[bucket[i]] += signs[i] * src[i];
                }
            }
            Ok(out)
        }
        (OperatorData::CountSketch { bucket, signs }, MatrixRef::Sparse(sp)) => {
            let mut out = DenseMatrix::zeros(k, n);
            for i in 0..sp.rows() {
                for (j, v) in sp.row(i) {
                    out[(bucket[i], j)] += signs[i] * v;
                }
            }
            Ok(out)
        }
    }
}

/// A sketch assembled from independently generated pieces: column blocks,
/// each stacked vertically from row segments. Grows as data is appended.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackedSketch {
    blocks: Vec<Vec<SketchSpec>>,
}

impl StackedSketch {
    pub fn single(spec: SketchSpec) -> Self {
        StackedSketch {
            blocks: vec![vec![spec]],
        }
    }

    pub fn blocks(&self) -> &[Vec<SketchSpec>] {
        &self.blocks
    }

    pub fn ambient_dim(&self) -> usize {
        self.blocks
            .first()
            .map(|b| b.iter().map(|s| s.ambient_dim).sum())
            .unwrap_or(0)
    }

    pub fn sketch_dim(&self) -> usize {
        self.blocks.iter().map(|b| b[0].sketch_dim).sum()
    }

    /// Sketch widths of the column blocks, in order.
    pub fn block_widths(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b[0].sketch_dim).collect()
    }

    /// Appends one row segment to every column block (`specs[c]` for block `c`).
    pub(crate) fn push_rows(&mut self, specs: Vec<SketchSpec>) {
        debug_assert_eq!(specs.len(), self.blocks.len());
        for (block, spec) in self.blocks.iter_mut().zip(specs) {
            block.push(spec);
        }
    }

    /// Appends a new column block made of the given row segments.
    pub(crate) fn push_block(&mut self, segments: Vec<SketchSpec>) {
        self.blocks.push(segments);
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let ambient = self.ambient_dim();
        for block in &self.blocks {
            if block.is_empty() || block.iter().map(|s| s.ambient_dim).sum::<usize>() != ambient {
                return Err(Error::InvalidArgument(
                    "stacked sketch blocks disagree on ambient dimension".into(),
                ));
            }
            if block.iter().any(|s| s.sketch_dim != block[0].sketch_dim) {
                return Err(Error::InvalidArgument(
                    "stacked sketch segments disagree on width".into(),
                ));
            }
            for s in block {
                s.validate(true)?;
            }
        }
        Ok(())
    }

    /// Explicit `ambient x sketch` matrix.
    pub fn to_dense(&self) -> Result<DenseMatrix> {
        let mut cols: Option<DenseMatrix> = None;
        for block in &self.blocks {
            let mut rows: Option<DenseMatrix> = None;
            for spec in block {
                let seg = generate_segment(spec)?.to_dense();
                rows = Some(match rows {
                    None => seg,
                    Some(r) => r.vstack(&seg)?,
                });
            }
            let b = rows.expect("non-empty block");
            cols = Some(match cols {
                None => b,
                Some(c) => c.hstack(&b)?,
            });
        }
        Ok(cols.unwrap_or_else(|| DenseMatrix::zeros(0, 0)))
    }

    /// `A X` restricted to column block `c`.
    pub fn apply_right_block<'a>(
        &self,
        a: impl Into<MatrixRef<'a>>,
        c: usize,
    ) -> Result<DenseMatrix> {
        let a = a.into();
        let block = &self.blocks[c];
        if a.cols() != self.ambient_dim() {
            return Err(Error::dims(
                "stacked sketch apply_right",
                format!("A with {} columns", self.ambient_dim()),
                format!("{} columns", a.cols()),
            ));
        }
        if let [spec] = block.as_slice() {
            return apply_right(a, &generate_segment(spec)?);
        }
        let mut out = DenseMatrix::zeros(a.rows(), block[0].sketch_dim);
        let mut offset = 0;
        for spec in block {
            let part = a.column_block(offset..offset + spec.ambient_dim);
            out.axpy(1.0, &apply_right(part.view(), &generate_segment(spec)?)?)?;
            offset += spec.ambient_dim;
        }
        Ok(out)
    }

    /// `Y^T A` restricted to column block `c`.
    pub fn apply_left_block<'a>(
        &self,
        a: impl Into<MatrixRef<'a>>,
        c: usize,
    ) -> Result<DenseMatrix> {
        let a = a.into();
        let block = &self.blocks[c];
        if a.rows() != self.ambient_dim() {
            return Err(Error::dims(
                "stacked sketch apply_left",
                format!("A with {} rows", self.ambient_dim()),
                format!("{} rows", a.rows()),
            ));
        }
        if let [spec] = block.as_slice() {
            return apply_left(&generate_segment(spec)?, a);
        }
        let mut out = DenseMatrix::zeros(block[0].sketch_dim, a.cols());
        let mut offset = 0;
        for spec in block {
            let part = a.row_block(offset..offset + spec.ambient_dim);
            out.axpy(1.0, &apply_left(&generate_segment(spec)?, part.view())?)?;
            offset += spec.ambient_dim;
        }
        Ok(out)
    }

    /// `A X` for the whole stacked sketch.
    pub fn apply_right<'a>(&self, a: impl Into<MatrixRef<'a>>) -> Result<DenseMatrix> {
        let a = a.into();
        let mut out: Option<DenseMatrix> = None;
        for c in 0..self.blocks.len() {
            let part = self.apply_right_block(a, c)?;
            out = Some(match out {
                None => part,
                Some(o) => o.hstack(&part)?,
            });
        }
        Ok(out.unwrap_or_else(|| DenseMatrix::zeros(a.rows(), 0)))
    }

    /// `Y^T A` for the whole stacked sketch.
    pub fn apply_left<'a>(&self, a: impl Into<MatrixRef<'a>>) -> Result<DenseMatrix> {
        let a = a.into();
        let mut out: Option<DenseMatrix> = None;
        for c in 0..self.blocks.len() {
            let part = self.apply_left_block(a, c)?;
            out = Some(match out {
                None => part,
                Some(o) => o.vstack(&part)?,
            });
        }
        Ok(out.unwrap_or_else(|| DenseMatrix::zeros(0, a.cols())))
    }
}
