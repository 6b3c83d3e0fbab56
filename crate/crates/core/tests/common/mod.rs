//! Invariant checks shared by the property tests and the acceptance run.
//! Each returns `Err` with a short diagnostic instead of panicking so the
//! acceptance binary can tally them.
#![allow(dead_code)]

use randlr::decomp::{approximate, Approximant, Factors, Method, Options};
use randlr::eval::{
    bound_gn, bound_hmt, frobenius_error_dense, frobenius_error_factored, gallery, optimal_error,
    BoundInputs, SpectrumKind,
};
use randlr::io::{load_container, load_state, save_approximant, save_state, Contents};
use randlr::kernels::{
    dct2_reference, dct2_rows, estimate_norms, gemm, singular_values, svd, thin_qr, DenseMatrix,
    MatrixRef, SparseMatrix, Trans, UNIT_ROUNDOFF,
};
use randlr::sketch::{
    apply_left, apply_right, gaussian_matrix, generate, SketchKind, SketchSpec, StackedSketch,
    STREAM_X,
};
use randlr::stability::{
    build_core_plain, build_core_sgn, build_core_truncated, detect, EpsilonPolicy, TruncationPath,
};
use randlr::update::UpdatableState;

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn ok<T>(r: randlr::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

pub fn mul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    gemm(a, Trans::No, b, Trans::No).unwrap()
}

pub fn mul_t(a: &DenseMatrix, ta: Trans, b: &DenseMatrix, tb: Trans) -> DenseMatrix {
    gemm(a, ta, b, tb).unwrap()
}

pub fn norm2(m: &DenseMatrix) -> f64 {
    if m.rows() == 0 || m.cols() == 0 {
        return 0.0;
    }
    singular_values(m).unwrap()[0]
}

pub fn diff_f(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    a.sub(b).unwrap().frobenius_norm()
}

/// Rank-`k` product of two Gaussian factors.
pub fn low_rank(m: usize, n: usize, k: usize, seed: u64) -> DenseMatrix {
    mul(
        &gaussian_matrix(m, k, seed, 900),
        &gaussian_matrix(k, n, seed, 901),
    )
}

/// Pseudoinverse through the SVD, dropping singular values below `tol * s1`.
pub fn dense_pinv(m: &DenseMatrix, tol: f64) -> DenseMatrix {
    let f = svd(m).unwrap();
    let cut = tol * f.sigma.first().copied().unwrap_or(0.0);
    let mut vs = f.v.clone();
    for (j, s) in f.sigma.iter().enumerate() {
        let inv = if *s > cut { 1.0 / s } else { 0.0 };
        vs.col_mut(j).iter_mut().for_each(|v| *v *= inv);
    }
    mul_t(&vs, Trans::No, &f.u, Trans::Yes)
}

/// `(rows, cols)` matrix with singular values `sigma` and random singular vectors.
pub fn with_spectrum(rows: usize, cols: usize, sigma: &[f64], seed: u64) -> DenseMatrix {
    let k = sigma.len();
    let u = thin_qr(&gaussian_matrix(rows, k, seed, 910)).unwrap().q;
    let v = thin_qr(&gaussian_matrix(cols, k, seed, 911)).unwrap().q;
    let mut us = u;
    for (j, s) in sigma.iter().enumerate() {
        us.col_mut(j).iter_mut().for_each(|x| *x *= s);
    }
    mul_t(&us, Trans::No, &v, Trans::Yes)
}

pub fn geometric(k: usize, first: f64, last: f64) -> Vec<f64> {
    if k == 1 {
        return vec![first];
    }
    let ratio = (last / first).powf(1.0 / (k - 1) as f64);
    (0..k).map(|i| first * ratio.powi(i as i32)).collect()
}

// ---- kernels ----

pub fn qr_reconstructs(rows: usize, cols: usize, seed: u64) -> Check {
    let m = gaussian_matrix(rows, cols, seed, 7);
    let f = ok(thin_qr(&m))?;
    let res = diff_f(&mul(&f.q, &f.r), &m);
    ensure!(
        res <= 1e-13 * m.frobenius_norm(),
        "qr residual {res:.3e} for {rows}x{cols}"
    );
    let orth = diff_f(
        &mul_t(&f.q, Trans::Yes, &f.q, Trans::No),
        &DenseMatrix::identity(cols),
    );
    ensure!(orth <= 1e-13 * cols as f64, "Q^T Q - I = {orth:.3e}");
    Ok(())
}

pub fn svd_matches_r(rows: usize, cols: usize, seed: u64) -> Check {
    let m = gaussian_matrix(rows, cols, seed, 8);
    let s = ok(singular_values(&m))?;
    let r = ok(thin_qr(&m))?.r;
    let sr = ok(singular_values(&r))?;
    for (a, b) in s.iter().zip(&sr) {
        ensure!(
            (a - b).abs() <= 1e-12 * s[0],
            "singular values {a} vs {b} for {rows}x{cols}"
        );
    }
    Ok(())
}

pub fn dct_matches_reference(n: usize, seed: u64) -> Check {
    let rows = 3;
    let mut m = gaussian_matrix(rows, n, seed, 9);
    let orig = m.clone();
    dct2_rows(&mut m);
    for i in 0..rows {
        let x: Vec<f64> = (0..n).map(|j| orig[(i, j)]).collect();
        let reference = dct2_reference(&x);
        let scale = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
        for (j, want) in reference.iter().enumerate() {
            let got = m[(i, j)];
            ensure!(
                (got - want).abs() <= 1e-13 * scale,
                "dct n={n} row {i} entry {j}: {got} vs {want}"
            );
        }
    }
    Ok(())
}

pub fn norm_estimates_are_lower_bounds(n: usize, seed: u64) -> Check {
    let g = gaussian_matrix(n, n, seed, 10);
    let mut r = g.upper_triangle();
    // keep the diagonal away from zero so the inverse norm is finite
    for i in 0..n {
        r[(i, i)] += r[(i, i)].signum() * 0.1;
    }
    let est = ok(estimate_norms(&r, 10))?;
    let s = ok(singular_values(&r))?;
    let (smax, smin) = (s[0], s[n - 1]);
    ensure!(
        est.norm_r <= smax * (1.0 + 1e-12),
        "||R|| estimate {} above {smax}",
        est.norm_r
    );
    ensure!(
        // the oracle's smallest singular value is itself only accurate to ~kappa u
        est.norm_r_inv <= (1.0 / smin) * (1.0 + 1e-12 + 1e-13 * n as f64 * smax / smin),
        "||R^-1|| estimate {} above {}",
        est.norm_r_inv,
        1.0 / smin
    );
    ensure!(est.norm_r > 0.0 && est.norm_r_inv > 0.0, "zero estimate");
    Ok(())
}

// ---- sketch ----

pub fn sketch_is_deterministic(kind: SketchKind, n: usize, k: usize, seed: u64) -> Check {
    let spec = SketchSpec::new(kind, n, k, seed).with_stream(STREAM_X);
    let a = ok(generate(&spec))?.to_dense();
    let b = ok(generate(&spec))?.to_dense();
    let bits = |m: &DenseMatrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    ensure!(
        bits(&a) == bits(&b),
        "{kind:?} sketch differs between calls"
    );
    let other = ok(generate(&spec.with_stream(STREAM_X + 1)))?.to_dense();
    ensure!(
        n < 16 || bits(&a) != bits(&other),
        "{kind:?} streams coincide"
    );
    Ok(())
}

pub fn dct_columns_orthogonal(n: usize, k: usize, seed: u64) -> Check {
    let x = ok(generate(&SketchSpec::new(
        SketchKind::SubsampledDct,
        n,
        k,
        seed,
    )))?
    .to_dense();
    let xtx = mul_t(&x, Trans::Yes, &x, Trans::No);
    let scale = n as f64 / k as f64;
    let err = diff_f(&xtx, &DenseMatrix::identity(k).scaled(scale));
    ensure!(
        err <= 1e-12 * scale,
        "X^T X deviates by {err:.3e} (n={n}, k={k})"
    );
    Ok(())
}

pub fn gaussian_singular_values_in_interval(seed: u64) -> Check {
    let g = gaussian_matrix(60, 20, seed, 11);
    let s = ok(singular_values(&g))?;
    let (lo, hi) = (
        60f64.sqrt() - 20f64.sqrt() - 3.0,
        60f64.sqrt() + 20f64.sqrt() + 3.0,
    );
    ensure!(
        s[0] <= hi && s[19] >= lo,
        "60x20 singular values [{}, {}] outside [{lo}, {hi}]",
        s[19],
        s[0]
    );
    Ok(())
}

pub fn sketch_apply_matches_dense(
    kind: SketchKind,
    rows: usize,
    n: usize,
    k: usize,
    seed: u64,
) -> Check {
    let op = ok(generate(&SketchSpec::new(kind, n, k, seed)))?;
    let x = op.to_dense();
    let a = gaussian_matrix(rows, n, seed, 12);
    let b = gaussian_matrix(n, rows, seed, 13);
    let tol = |m: &DenseMatrix| 1e-13 * m.frobenius_norm() * x.frobenius_norm().max(1.0);

    let want = mul(&a, &x);
    let got = ok(apply_right(&a, &op))?;
    ensure!(diff_f(&got, &want) <= tol(&a), "{kind:?} apply_right dense");
    let sparse = SparseMatrix::from_dense(&a);
    let got = ok(apply_right(&sparse, &op))?;
    ensure!(
        diff_f(&got, &want) <= tol(&a),
        "{kind:?} apply_right sparse"
    );

    let want = mul_t(&x, Trans::Yes, &b, Trans::No);
    let got = ok(apply_left(&op, &b))?;
    ensure!(diff_f(&got, &want) <= tol(&b), "{kind:?} apply_left dense");
    let sparse = SparseMatrix::from_dense(&b);
    let got = ok(apply_left(&op, &sparse))?;
    ensure!(diff_f(&got, &want) <= tol(&b), "{kind:?} apply_left sparse");
    Ok(())
}

// ---- decomp ----

pub const ALL_METHODS: [Method; 6] = [
    Method::Hmt,
    Method::Nystrom,
    Method::NystromHmt,
    Method::SubspaceIter,
    Method::GnPlain,
    Method::GnStabilized,
];

/// Relative error of `method` on an exact rank-`k` matrix, `k <= r`.
pub fn exact_rank_error(
    method: Method,
    m: usize,
    n: usize,
    k: usize,
    r: usize,
    seed: u64,
    sketch: SketchKind,
) -> Result<f64, String> {
    let a = if method.requires_symmetric() {
        let b = gaussian_matrix(m, k, seed, 920);
        mul_t(&b, Trans::No, &b, Trans::Yes)
    } else {
        low_rank(m, n, k, seed)
    };
    let opts = Options::new(r).seed(seed).sketch(sketch);
    let approx = ok(approximate(MatrixRef::from(&a), method, &opts))?;
    Ok(ok(frobenius_error_dense(&a, &approx))? / a.frobenius_norm())
}

pub fn exactness(method: Method, m: usize, n: usize, k: usize, r: usize, seed: u64) -> Check {
    let rel = exact_rank_error(method, m, n, k, r, seed, SketchKind::Gaussian)?;
    ensure!(
        rel <= 1e-10,
        "{method} on rank-{k} {m}x{n} (r={r}, seed={seed}): relative error {rel:.3e}"
    );
    Ok(())
}

/// `P = F core^+ Y^T` for an oblique projection with the given sketches.
fn oblique(f: &DenseMatrix, y: &DenseMatrix) -> Result<DenseMatrix, String> {
    let core = mul_t(y, Trans::Yes, f, Trans::No);
    let pinv = ok(ok(build_core_plain(&core))?.to_dense())?;
    Ok(mul(&mul(f, &pinv), &y.transpose()))
}

fn condition(m: &DenseMatrix) -> f64 {
    let s = singular_values(m).unwrap();
    s[0] / s[s.len() - 1]
}

pub fn projector_identities(m: usize, n: usize, r: usize, l: usize, seed: u64) -> Check {
    let a = gaussian_matrix(m, n, seed, 14);
    let x = gaussian_matrix(n, r, seed, 15);
    let y = gaussian_matrix(m, r + l, seed, 16);
    let ax = mul(&a, &x);
    if condition(&mul_t(&y, Trans::Yes, &ax, Trans::No)) >= 1e6 {
        return Ok(());
    }
    let p = oblique(&ax, &y)?;

    let anni = diff_f(&mul(&p, &ax), &ax);
    ensure!(
        anni <= 1e-10 * ax.frobenius_norm(),
        "(I - P) AX = {anni:.3e} vs ||AX|| {:.3e}",
        ax.frobenius_norm()
    );
    let pf = p.frobenius_norm();
    let idem = diff_f(&mul(&p, &p), &p);
    ensure!(idem <= 1e-8 * pf * pf, "||P^2 - P|| = {idem:.3e}");
    Ok(())
}

pub fn projector_norm_identity(dim: usize, k: usize, seed: u64) -> Check {
    let x = gaussian_matrix(dim, k, seed, 17);
    let y = gaussian_matrix(dim, k, seed, 18);
    let p = oblique(&x, &y)?;
    let ip = DenseMatrix::identity(dim).sub(&p).unwrap();
    let (a, b) = (norm2(&p), norm2(&ip));
    ensure!(
        (a - b).abs() <= 1e-8 * a,
        "||P|| = {a} but ||I - P|| = {b} (dim={dim}, k={k})"
    );
    Ok(())
}

/// Stabilized core on a matrix whose singular values fall to 1e-15.
pub fn sgn_near_projection(n: usize, r: usize, l: usize, seed: u64) -> Check {
    let sigma = geometric(n, 1.0, 1e-15);
    let a = with_spectrum(n, n, &sigma, seed);
    let x = gaussian_matrix(n, r, seed, 19);
    let y = gaussian_matrix(n, r + l, seed, 20);
    let f = mul(&a, &x);
    let core = mul_t(&y, Trans::Yes, &f, Trans::No);
    let stab = ok(build_core_sgn(
        &core,
        &EpsilonPolicy::default(),
        TruncationPath::RrqrTruncate,
    ))?;
    // P~ AX = F core_eps^+ (Y^T A X)
    let pax = mul(&f, &ok(stab.apply_to(&core))?);
    let err = diff_f(&pax, &f);
    let tol = 1e3 * UNIT_ROUNDOFF * a.frobenius_norm() * norm2(&x);
    ensure!(err <= tol, "||P~AX - AX|| = {err:.3e} > {tol:.3e}");
    Ok(())
}

/// With `V` the leading `r_hat` right singular vectors and
/// `P = X (V^T X)^+ V^T`, the oblique split
/// `||A(I - VV^T)(I - P)||^2 = ||A(I - VV^T)||^2 + ||A(I - VV^T) P||^2`
/// is exact and bounds the HMT error from above.
pub fn hmt_pythagoras(m: usize, n: usize, r: usize, r_hat: usize, seed: u64) -> Check {
    let spectrum = SpectrumKind::Geometric { ratio: 0.8 };
    let a = ok(gallery(&spectrum, m, n, seed, false))?;
    let x_sketch = StackedSketch::single(
        SketchSpec::new(SketchKind::Gaussian, n, r, seed).with_stream(STREAM_X),
    );
    let x = ok(x_sketch.to_dense())?;

    let f = ok(svd(&a))?;
    let v = f.v.columns(0..r_hat);
    let vvt = mul_t(&v, Trans::No, &v, Trans::Yes);
    let tail = mul(&a, &DenseMatrix::identity(n).sub(&vvt).unwrap());
    let vtx = mul_t(&v, Trans::Yes, &x, Trans::No);
    let p = mul(&mul(&x, &dense_pinv(&vtx, 1e-14)), &v.transpose());
    let tail_p = mul(&tail, &p);
    let two_term = tail.frobenius_norm().powi(2) + tail_p.frobenius_norm().powi(2);
    let lhs = mul(&tail, &DenseMatrix::identity(n).sub(&p).unwrap())
        .frobenius_norm()
        .powi(2);
    ensure!(
        (lhs - two_term).abs() <= 1e-8 * two_term,
        "||tail (I-P)||^2 = {lhs:.6e} vs two-term sum {two_term:.6e}"
    );

    let opts = Options::new(r).seed(seed);
    let approx = ok(approximate(MatrixRef::from(&a), Method::Hmt, &opts))?;
    let e2 = ok(frobenius_error_dense(&a, &approx))?.powi(2);
    // the library run must use the same X that was regenerated here
    let q = thin_qr(&mul(&a, &x)).unwrap().q;
    let direct = a
        .sub(&mul(&q, &mul_t(&q, Trans::Yes, &a, Trans::No)))
        .unwrap()
        .frobenius_norm()
        .powi(2);
    ensure!(
        (e2 - direct).abs() <= 1e-8 * direct.max(1e-300),
        "HMT error {e2:.6e} disagrees with orth(AX) projection {direct:.6e}"
    );
    ensure!(
        e2 <= two_term * (1.0 + 1e-8),
        "||E_HMT||^2 = {e2:.6e} exceeds two-term sum {two_term:.6e}"
    );
    if r_hat == r {
        // P then maps into range(X), so E_HMT = (I - QQ^T) A (I - P)
        let q_perp = DenseMatrix::identity(m)
            .sub(&mul_t(&q, Trans::No, &q, Trans::Yes))
            .unwrap();
        let inner = mul(
            &mul(&q_perp, &a),
            &DenseMatrix::identity(n).sub(&p).unwrap(),
        );
        let e = inner.frobenius_norm().powi(2);
        ensure!(
            (e - e2).abs() <= 1e-8 * e2.max(1e-300),
            "(I-QQ^T)A(I-P) = {e:.6e} vs E_HMT {e2:.6e}"
        );
    }
    Ok(())
}

// ---- stability ----

fn ill_core(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let sigma = geometric(cols, 1.0, 1e-17);
    with_spectrum(rows, cols, &sigma, seed)
}

/// Largest `eps * ||applicator||_2` over a few `eps` on a graded core.
pub fn pinv_growth(
    path: TruncationPath,
    rows: usize,
    cols: usize,
    seed: u64,
) -> Result<f64, String> {
    let m = ill_core(rows, cols, seed);
    let mut worst: f64 = 0.0;
    for eps in [1e-4, 1e-8, 1e-12] {
        let core = ok(build_core_truncated(&m, eps, path))?;
        worst = worst.max(eps * norm2(&ok(core.to_dense())?));
    }
    Ok(worst)
}

/// `||applicator||_2 <= c / eps`.
pub fn epsilon_pinv_contract(
    path: TruncationPath,
    rows: usize,
    cols: usize,
    seed: u64,
    c: f64,
) -> Check {
    let g = pinv_growth(path, rows, cols, seed)?;
    ensure!(
        g <= c * (1.0 + 1e-10),
        "{path}: eps ||pinv|| = {g:.3} > {c} ({rows}x{cols}, seed {seed})"
    );
    Ok(())
}

pub fn benign_paths_match_pinv(path: TruncationPath, rows: usize, cols: usize, seed: u64) -> Check {
    let sigma = geometric(cols, 1.0, 1e-3);
    let m = with_spectrum(rows, cols, &sigma, seed);
    let eps = 1e-6;
    let want = dense_pinv(&m, 0.0);
    let got = ok(ok(build_core_truncated(&m, eps, path))?.to_dense())?;
    let err = diff_f(&got, &want);
    ensure!(
        err <= 1e-10 * want.frobenius_norm(),
        "{path}: differs from pinv by {err:.3e}"
    );
    Ok(())
}

pub fn detect_catches_planted(n: usize, seed: u64) -> Check {
    let mut r = gaussian_matrix(n, n, seed, 21).upper_triangle();
    for i in 0..n {
        r[(i, i)] = r[(i, i)].signum() * (1.0 + r[(i, i)].abs());
    }
    let k = (seed as usize) % n;
    r[(k, k)] = 1e-19;
    let report = ok(detect(&r, 1.0))?;
    ensure!(
        report.flagged,
        "planted kappa > 1e19 missed: estimate {:.3e}",
        report.condition_estimate
    );
    Ok(())
}

pub fn bounded_growth(n: usize, r: usize, l: usize, seed: u64) -> Check {
    let sigma = geometric(n, 1.0, 1e-15);
    let a = with_spectrum(n, n, &sigma, seed);
    let x = gaussian_matrix(n, r, seed, 22);
    let y = gaussian_matrix(n, r + l, seed, 23);
    let f = mul(&a, &x);
    let core = mul_t(&y, Trans::Yes, &f, Trans::No);
    let stab = ok(build_core_sgn(
        &core,
        &EpsilonPolicy::default(),
        TruncationPath::RrqrTruncate,
    ))?;
    let growth = norm2(&mul(&f, &ok(stab.to_dense())?));
    let cap = 20.0 * (r + l) as f64 / l as f64;
    ensure!(growth <= cap, "||F core^+|| = {growth:.3e} > {cap:.3e}");
    Ok(())
}

// ---- update ----

fn gn_options(r: usize, l: usize, seed: u64) -> Options {
    Options::new(r).oversample(l).seed(seed)
}

pub fn additive_linearity(m: usize, n: usize, updates: usize, seed: u64) -> Check {
    let a = gaussian_matrix(m, n, seed, 30);
    let mut state = ok(UpdatableState::new(
        MatrixRef::from(&a),
        Method::GnPlain,
        &gn_options(4, 3, seed),
    ))?;
    let mut total = a.clone();
    for i in 0..updates {
        let e = gaussian_matrix(m, n, seed, 31 + i as u64);
        ok(state.additive_update(&e))?;
        total.axpy(1.0, &e).unwrap();
    }
    let x = ok(state.x().to_dense())?;
    let y = ok(state.y().to_dense())?;
    let f = mul(&total, &x);
    let g = mul_t(&y, Trans::Yes, &total, Trans::No);
    let tol = 1e-12 * (updates.max(1)) as f64;
    let ef = diff_f(state.f(), &f) / f.frobenius_norm();
    let eg = diff_f(state.g(), &g) / g.frobenius_norm();
    ensure!(ef <= tol && eg <= tol, "F off by {ef:.3e}, G by {eg:.3e}");
    Ok(())
}

/// Relative gap between the updated approximant and the stacked formula
/// evaluated from scratch with the same (extended) sketches.
pub fn append_rows_gap(m: usize, n: usize, extra: usize, seed: u64) -> Result<f64, String> {
    let a = gaussian_matrix(m, n, seed, 40);
    let b = gaussian_matrix(extra, n, seed, 41);
    let opts = gn_options(6, 3, seed);
    let mut state = ok(UpdatableState::new(
        MatrixRef::from(&a),
        Method::GnPlain,
        &opts,
    ))?;
    let mut twin = state.clone();
    ok(state.append_rows(&b))?;
    ok(twin.append_rows(&b))?;
    let bits = |m: &DenseMatrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    if bits(state.f()) != bits(twin.f())
        || bits(state.g()) != bits(twin.g())
        || bits(state.raw_core()) != bits(twin.raw_core())
    {
        return Err("append_rows is not reproducible".into());
    }

    let full = a.vstack(&b).unwrap();
    let x = ok(state.x().to_dense())?;
    let y = ok(state.y().to_dense())?;
    let f = mul(&full, &x);
    let g = mul_t(&y, Trans::Yes, &full, Trans::No);
    let core = mul_t(&y, Trans::Yes, &f, Trans::No);
    let direct = mul(&mul(&f, &dense_pinv(&core, 1e-15)), &g);
    let got = ok(state.approximant().materialize())?;
    Ok(diff_f(&got, &direct) / direct.frobenius_norm())
}

pub fn append_cols_gap(m: usize, n: usize, extra: usize, seed: u64) -> Result<f64, String> {
    let a = gaussian_matrix(m, n, seed, 44);
    let b = gaussian_matrix(m, extra, seed, 45);
    let mut state = ok(UpdatableState::new(
        MatrixRef::from(&a),
        Method::GnPlain,
        &gn_options(6, 3, seed),
    ))?;
    ok(state.append_cols(&b))?;
    let full = a.hstack(&b).unwrap();
    let x = ok(state.x().to_dense())?;
    let y = ok(state.y().to_dense())?;
    let f = mul(&full, &x);
    let g = mul_t(&y, Trans::Yes, &full, Trans::No);
    let core = mul_t(&y, Trans::Yes, &f, Trans::No);
    let direct = mul(&mul(&f, &dense_pinv(&core, 1e-15)), &g);
    let got = ok(state.approximant().materialize())?;
    Ok(diff_f(&got, &direct) / direct.frobenius_norm())
}

pub fn append_equivalence(m: usize, n: usize, extra: usize, seed: u64) -> Check {
    let gap = append_rows_gap(m, n, extra, seed)?;
    ensure!(gap <= 1e-12, "append rows: relative gap {gap:.3e}");
    Ok(())
}

/// Relative gap between an additively updated state and a fresh one on `A + E`.
pub fn additive_fresh_gap(m: usize, n: usize, seed: u64) -> Result<f64, String> {
    let a = gaussian_matrix(m, n, seed, 42);
    let e = gaussian_matrix(m, n, seed, 43);
    let opts = gn_options(6, 3, seed);
    let mut state = ok(UpdatableState::new(
        MatrixRef::from(&a),
        Method::GnPlain,
        &opts,
    ))?;
    ok(state.additive_update(&e))?;
    let sum = a.add(&e).unwrap();
    let fresh = ok(UpdatableState::new(
        MatrixRef::from(&sum),
        Method::GnPlain,
        &opts,
    ))?;
    let got = ok(state.approximant().materialize())?;
    let want = ok(fresh.approximant().materialize())?;
    Ok(diff_f(&got, &want) / want.frobenius_norm())
}

// ---- eval ----

pub fn bounds_monotone(tail: f64) -> Check {
    for r in 4..40 {
        let mut prev = f64::INFINITY;
        // growing r - r_hat means shrinking r_hat
        for r_hat in (1..=r - 2).rev() {
            let b = ok(bound_hmt(&BoundInputs::new(r, r_hat, 0, tail)))?;
            ensure!(
                b <= prev,
                "bound_hmt not decreasing at r={r}, r_hat={r_hat}"
            );
            prev = b;
        }
        for r_hat in [1, r / 2, r - 2] {
            let mut prev = f64::INFINITY;
            for l in 2..60 {
                let b = ok(bound_gn(&BoundInputs::new(r, r_hat, l, tail)))?;
                ensure!(b <= prev, "bound_gn not decreasing in l at r={r}, l={l}");
                prev = b;
            }
        }
    }
    Ok(())
}

pub fn factored_above_optimal(method: Method, n: usize, r: usize, seed: u64) -> Check {
    let spectrum = SpectrumKind::AlgebraicPower { s: 1.0 };
    let a = ok(gallery(&spectrum, n, n, seed, method.requires_symmetric()))?;
    let opts = Options::new(r).seed(seed);
    let approx = ok(approximate(MatrixRef::from(&a), method, &opts))?;
    let e = ok(frobenius_error_factored(MatrixRef::from(&a), &approx))?;
    let opt = ok(optimal_error(&a, r))?;
    ensure!(
        e >= opt - 1e-8,
        "{method}: factored error {e:.6e} below optimal {opt:.6e}"
    );
    Ok(())
}

// ---- io ----

fn bits(m: &DenseMatrix) -> Vec<u64> {
    m.as_slice().iter().map(|v| v.to_bits()).collect()
}

fn factor_bits(a: &Approximant) -> Vec<Vec<u64>> {
    match a.factors() {
        Factors::Sketched { f, g, core, .. } => {
            let mut out = vec![bits(f), bits(g), bits(core.q()), bits(core.triangular())];
            if let Some(p) = core.right_factor() {
                out.push(bits(p));
            }
            out
        }
        Factors::Orthogonal { q, u0, sigma, v0 } => vec![
            bits(q),
            bits(u0),
            sigma.iter().map(|v| v.to_bits()).collect(),
            bits(v0),
        ],
    }
}

pub fn container_round_trip(method: Method, n: usize, r: usize, seed: u64) -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("a.rlr");
    let spectrum = SpectrumKind::Geometric { ratio: 0.85 };
    let a = ok(gallery(&spectrum, n + 3, n, seed, false))?;
    let a = if method.requires_symmetric() {
        ok(gallery(&spectrum, n, n, seed, true))?
    } else {
        a
    };
    let opts = Options::new(r).seed(seed);
    let approx = ok(approximate(MatrixRef::from(&a), method, &opts))?;
    ok(save_approximant(&approx, &path))?;
    let back = match ok(load_container(&path))?.1 {
        Contents::Approximant(b) => b,
        Contents::State(_) => return Err("approximant came back as a state".into()),
    };
    ensure!(
        factor_bits(&approx) == factor_bits(&back),
        "{method}: factors changed in the round trip"
    );
    ensure!(
        back == approx,
        "{method}: metadata changed in the round trip"
    );
    Ok(())
}

pub fn state_replay(m: usize, n: usize, seed: u64) -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("s.rlr");
    let a = gaussian_matrix(m, n, seed, 50);
    let mut live = ok(UpdatableState::new(
        MatrixRef::from(&a),
        Method::GnStabilized,
        &gn_options(5, 3, seed),
    ))?;
    ok(live.append_rows(&gaussian_matrix(2, n, seed, 51)))?;
    ok(save_state(&live, &path))?;
    let mut loaded = ok(load_state(&path))?;
    ensure!(loaded == live, "state changed in the round trip");

    let b = gaussian_matrix(3, n, seed, 52);
    ok(live.append_rows(&b))?;
    ok(loaded.append_rows(&b))?;
    ensure!(
        bits(live.f()) == bits(loaded.f())
            && bits(live.g()) == bits(loaded.g())
            && bits(live.raw_core()) == bits(loaded.raw_core())
            && live.next_stream() == loaded.next_stream(),
        "reloaded state diverges on the next update"
    );
    Ok(())
}
