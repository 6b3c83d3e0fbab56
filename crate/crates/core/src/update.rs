//! Single-pass maintenance of a generalized Nystrom approximant as the
//! underlying matrix grows or is perturbed.

use crate::decomp::{assemble_gn, build_core, gn_sketches, Approximant, CoreMode, Method, Options};
use crate::error::{Error, Result};
use crate::kernels::{DenseMatrix, MatrixRef};
use crate::sketch::{
    apply_left, apply_right, generate_segment, SketchKind, SketchSpec, StackedSketch,
    FIRST_FRESH_STREAM,
};
use crate::stability::{CoreFactor, EpsilonPolicy, TruncationPath};

/// Sketches `F = A X`, `G = Y^T A`, the unfactored core `Y^T A X`, and the
/// stream bookkeeping needed to extend `X` and `Y` reproducibly.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdatableState {
    pub(crate) method: Method,
    pub(crate) mode: CoreMode,
    pub(crate) rows: usize,
    pub(crate) cols: usize,
    pub(crate) seed: u64,
    pub(crate) sketch: SketchKind,
    pub(crate) epsilon: EpsilonPolicy,
    pub(crate) threshold: f64,
    pub(crate) f: DenseMatrix,
    pub(crate) g: DenseMatrix,
    pub(crate) raw_core: DenseMatrix,
    pub(crate) core: CoreFactor,
    pub(crate) x: StackedSketch,
    pub(crate) y: StackedSketch,
    pub(crate) next_stream: u64,
    pub(crate) update_count: u64,
}

impl UpdatableState {
    /// Sketches `a` with a generalized Nystrom method (`gn` or `sgn`).
    pub fn new(a: MatrixRef, method: Method, opts: &Options) -> Result<Self> {
        if !method.is_generalized_nystrom() {
            return Err(Error::Unsupported {
                op: "updatable state",
                method: method.name().into(),
            });
        }
        let (x, y) = gn_sketches(&a, opts)?;
        let f = x.apply_right(a)?;
        let g = y.apply_left(a)?;
        let raw_core = x.apply_right(&g)?;
        let mode = opts.core_mode(method);
        let core = build_core(&raw_core, mode, &opts.epsilon, opts.threshold)?;
        Ok(UpdatableState {
            method,
            mode,
            rows: a.rows(),
            cols: a.cols(),
            seed: opts.seed,
            sketch: opts.sketch,
            epsilon: opts.epsilon,
            threshold: opts.threshold,
            f,
            g,
            raw_core,
            core,
            x,
            y,
            next_stream: FIRST_FRESH_STREAM,
            update_count: 0,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rank(&self) -> usize {
        self.x.sketch_dim()
    }

    pub fn oversample(&self) -> usize {
        self.y.sketch_dim() - self.x.sketch_dim()
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn f(&self) -> &DenseMatrix {
        &self.f
    }

    pub fn g(&self) -> &DenseMatrix {
        &self.g
    }

    pub fn raw_core(&self) -> &DenseMatrix {
        &self.raw_core
    }

    pub fn core(&self) -> &CoreFactor {
        &self.core
    }

    pub fn x(&self) -> &StackedSketch {
        &self.x
    }

    pub fn y(&self) -> &StackedSketch {
        &self.y
    }

    pub fn next_stream(&self) -> u64 {
        self.next_stream
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    fn options(&self) -> Options {
        let mut opts = Options::new(self.rank())
            .seed(self.seed)
            .sketch(self.sketch)
            .epsilon(self.epsilon)
            .oversample(self.oversample());
        opts.threshold = self.threshold;
        if let CoreMode::Stabilized(path) = self.mode {
            opts.path = path;
        }
        opts
    }

    /// The current approximant (shares the stored core; no refactorization).
    pub fn approximant(&self) -> Approximant {
        let mut a = assemble_gn(
            self.method,
            (self.rows, self.cols),
            self.f.clone(),
            self.g.clone(),
            &DenseMatrix::zeros(0, 0),
            self.x.clone(),
            self.y.clone(),
            self.mode,
            &self.options(),
            Some(self.core.clone()),
        )
        .expect("stored core is consistent with the sketches");
        a.seed = self.seed;
        a
    }

    /// Switches to a stabilized core along `path`, rebuilt from the stored
    /// unfactored core. Not counted as an update.
    pub fn restabilize(&mut self, path: TruncationPath) -> Result<()> {
        let mode = CoreMode::Stabilized(path);
        self.core = build_core(&self.raw_core, mode, &self.epsilon, self.threshold)?;
        self.mode = mode;
        self.method = Method::GnStabilized;
        Ok(())
    }

    fn fresh_spec(&mut self, ambient: usize, width: usize) -> Result<SketchSpec> {
        let stream = self.next_stream;
        self.next_stream = stream
            .checked_add(1)
            .ok_or_else(|| Error::InvalidArgument("sketch stream counter exhausted".into()))?;
        // the subsampled DCT cannot have more columns than rows
        let kind = if self.sketch == SketchKind::SubsampledDct && width > ambient {
            SketchKind::Gaussian
        } else {
            self.sketch
        };
        Ok(SketchSpec::new(kind, ambient, width, self.seed).with_stream(stream))
    }

    fn refactor(&mut self) -> Result<()> {
        self.core = build_core(&self.raw_core, self.mode, &self.epsilon, self.threshold)?;
        self.update_count += 1;
        Ok(())
    }

    /// `A <- [A; B]` with a fresh `Y~` segment per column block of `Y`.
    pub fn append_rows<'a>(&mut self, b: impl Into<MatrixRef<'a>>) -> Result<()> {
        let b = b.into();
        if b.cols() != self.cols {
            return Err(Error::dims(
                "append_rows",
                format!("B with {} columns", self.cols),
                format!("{} columns", b.cols()),
            ));
        }
        if b.rows() == 0 {
            return Ok(());
        }
        let widths = self.y.block_widths();
        let mut specs = Vec::with_capacity(widths.len());
        let mut ytb: Option<DenseMatrix> = None;
        for w in widths {
            let spec = self.fresh_spec(b.rows(), w)?;
            let part = apply_left(&generate_segment(&spec)?, b)?;
            ytb = Some(match ytb {
                None => part,
                Some(t) => t.vstack(&part)?,
            });
            specs.push(spec);
        }
        let ytb = ytb.expect("at least one block");
        let bx = self.x.apply_right(b)?;
        let next_f = self.f.vstack(&bx)?;
        let core_inc = self.x.apply_right(&ytb)?;
        self.g.axpy(1.0, &ytb)?;
        self.raw_core.axpy(1.0, &core_inc)?;
        self.f = next_f;
        self.y.push_rows(specs);
        self.rows += b.rows();
        self.refactor()
    }

    /// `A <- [A, B]` with a fresh `X~` segment per column block of `X`.
    pub fn append_cols<'a>(&mut self, b: impl Into<MatrixRef<'a>>) -> Result<()> {
        let b = b.into();
        if b.rows() != self.rows {
            return Err(Error::dims(
                "append_cols",
                format!("B with {} rows", self.rows),
                format!("{} rows", b.rows()),
            ));
        }
        if b.cols() == 0 {
            return Ok(());
        }
        let ytb = self.y.apply_left(b)?;
        let widths = self.x.block_widths();
        let mut specs = Vec::with_capacity(widths.len());
        let mut bx: Option<DenseMatrix> = None;
        let mut core_inc: Option<DenseMatrix> = None;
        for w in widths {
            let spec = self.fresh_spec(b.cols(), w)?;
            let op = generate_segment(&spec)?;
            let part = apply_right(b, &op)?;
            let inc = apply_right(&ytb, &op)?;
            bx = Some(match bx {
                None => part,
                Some(t) => t.hstack(&part)?,
            });
            core_inc = Some(match core_inc {
                None => inc,
                Some(t) => t.hstack(&inc)?,
            });
            specs.push(spec);
        }
        let next_g = self.g.hstack(&ytb)?;
        self.f.axpy(1.0, &bx.expect("at least one block"))?;
        self.raw_core
            .axpy(1.0, &core_inc.expect("at least one block"))?;
        self.g = next_g;
        self.x.push_rows(specs);
        self.cols += b.cols();
        self.refactor()
    }

    /// `A <- A + E`, touching only `E`.
    pub fn additive_update<'a>(&mut self, e: impl Into<MatrixRef<'a>>) -> Result<()> {
        let e = e.into();
        if (e.rows(), e.cols()) != (self.rows, self.cols) {
            return Err(Error::dims(
                "additive_update",
                format!("E of shape {}x{}", self.rows, self.cols),
                format!("{}x{}", e.rows(), e.cols()),
            ));
        }
        let ex = self.x.apply_right(e)?;
        let yte = self.y.apply_left(e)?;
        let core_inc = self.x.apply_right(&yte)?;
        self.f.axpy(1.0, &ex)?;
        self.g.axpy(1.0, &yte)?;
        self.raw_core.axpy(1.0, &core_inc)?;
        self.refactor()
    }

    /// Grows the rank by `delta` (and the oversampling proportionally) with
    /// one additional pass over the current matrix `a`.
    pub fn resample_increase_rank<'a>(
        &mut self,
        a: impl Into<MatrixRef<'a>>,
        delta: usize,
    ) -> Result<()> {
        let a = a.into();
        if (a.rows(), a.cols()) != (self.rows, self.cols) {
            return Err(Error::dims(
                "resample_increase_rank",
                format!("A of shape {}x{}", self.rows, self.cols),
                format!("{}x{}", a.rows(), a.cols()),
            ));
        }
        if delta == 0 {
            return Ok(());
        }
        let (r, l) = (self.rank(), self.oversample());
        let delta_l = (delta * l).div_ceil(r);
        let requested = r + delta + l + delta_l;
        let cap = self.rows.min(self.cols);
        if requested > cap {
            return Err(Error::CapExceeded {
                what: "sketch size r + l after rank increase",
                requested,
                cap,
            });
        }
        let x_new = StackedSketch::single(self.fresh_spec(self.cols, delta)?);
        // Y must stay r + l wide: delta columns for the rank plus delta_l
        let y_new = StackedSketch::single(self.fresh_spec(self.rows, delta + delta_l)?);

        let f_new = x_new.apply_right(a)?;
        let g_new = y_new.apply_left(a)?;
        let top_right = x_new.apply_right(&self.g)?;
        let bottom = self
            .x
            .apply_right(&g_new)?
            .hstack(&x_new.apply_right(&g_new)?)?;
        let raw = self.raw_core.hstack(&top_right)?.vstack(&bottom)?;

        self.f = self.f.hstack(&f_new)?;
        self.g = self.g.vstack(&g_new)?;
        self.raw_core = raw;
        self.x.push_block(x_new.blocks()[0].clone());
        self.y.push_block(y_new.blocks()[0].clone());
        self.refactor()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{gemm, Trans};
    use crate::sketch::gaussian_matrix;

    fn matrix(m: usize, n: usize, seed: u64) -> DenseMatrix {
        gaussian_matrix(m, n, seed, 77)
    }

    #[test]
    fn zero_size_updates_are_no_ops() {
        let a = matrix(20, 15, 1);
        let mut s = UpdatableState::new((&a).into(), Method::GnPlain, &Options::new(4)).unwrap();
        let before = s.clone();
        s.append_rows(&DenseMatrix::zeros(0, 15)).unwrap();
        s.append_cols(&DenseMatrix::zeros(20, 0)).unwrap();
        s.resample_increase_rank(&a, 0).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn append_rows_matches_stacked_formula() {
        let a = matrix(30, 20, 2);
        let b = matrix(6, 20, 3);
        let mut s =
            UpdatableState::new((&a).into(), Method::GnPlain, &Options::new(5).seed(9)).unwrap();
        s.append_rows(&b).unwrap();
        let full = a.vstack(&b).unwrap();
        let x = s.x().to_dense().unwrap();
        let y = s.y().to_dense().unwrap();
        assert_eq!(y.shape(), (36, 8));
        let f = gemm(&full, Trans::No, &x, Trans::No).unwrap();
        let g = gemm(&y, Trans::Yes, &full, Trans::No).unwrap();
        assert!(s.f().sub(&f).unwrap().max_abs() < 1e-12 * f.max_abs());
        assert!(s.g().sub(&g).unwrap().max_abs() < 1e-12 * g.max_abs());
        assert_eq!(s.update_count(), 1);
    }

    #[test]
    fn additive_negation_cancels() {
        let a = matrix(25, 18, 4);
        let mut s =
            UpdatableState::new((&a).into(), Method::GnStabilized, &Options::new(4)).unwrap();
        s.additive_update(&a.scaled(-1.0)).unwrap();
        let m = s.approximant().materialize().unwrap();
        assert!(m.max_abs() <= 1e-10);
    }

    #[test]
    fn rank_cap_is_enforced() {
        let a = matrix(12, 10, 5);
        let mut s = UpdatableState::new((&a).into(), Method::GnPlain, &Options::new(4)).unwrap();
        assert!(matches!(
            s.resample_increase_rank(&a, 4),
            Err(Error::CapExceeded { .. })
        ));
        assert!(UpdatableState::new((&a).into(), Method::Hmt, &Options::new(4)).is_err());
    }
}
