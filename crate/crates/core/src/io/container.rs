//! Single-file persistence for approximants and updatable states.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "RANDLRFC"
//! version  u32
//! manifest u64 length, then UTF-8 JSON
//! blobs    repeated: u16 name length, name, u64 rows, u64 cols,
//!          u64 value count, count * f64 (column-major)
//! ```
//!
//! The manifest lists every blob with its shape; loading rejects files whose
//! blobs disagree with it.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decomp::{Approximant, CoreMode, Factors, Method};
use crate::error::{Error, Result};
use crate::kernels::DenseMatrix;
use crate::sketch::{SketchKind, StackedSketch};
use crate::stability::{CoreFactor, EpsilonPolicy, InstabilityReport, TruncationPath};
use crate::update::UpdatableState;

pub const MAGIC: &[u8; 8] = b"RANDLRFC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContainerKind {
    Approximant,
    State,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoreInfo {
    pub rows: usize,
    pub cols: usize,
    pub tri_transposed: bool,
    pub epsilon: Option<f64>,
    pub path: TruncationPath,
    pub report: Option<InstabilityReport>,
    pub fallback_used: bool,
}

/// The JSON half of a container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub kind: ContainerKind,
    pub method: Method,
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub oversample: usize,
    pub seed: u64,
    pub sketch: SketchKind,
    pub power: usize,
    pub core_mode: Option<CoreMode>,
    pub epsilon: EpsilonPolicy,
    pub threshold: Option<f64>,
    pub warnings: Vec<String>,
    pub x: Option<StackedSketch>,
    pub y: Option<StackedSketch>,
    pub core: Option<CoreInfo>,
    pub next_stream: Option<u64>,
    pub update_count: Option<u64>,
    pub blobs: Vec<BlobInfo>,
}

/// What a container held.
#[derive(Clone, Debug, PartialEq)]
pub enum Contents {
    Approximant(Approximant),
    State(UpdatableState),
}

impl Contents {
    /// The approximant, derived from the state if necessary.
    pub fn into_approximant(self) -> Approximant {
        match self {
            Contents::Approximant(a) => a,
            Contents::State(s) => s.approximant(),
        }
    }
}

struct Blobs(Vec<(String, DenseMatrix)>);

impl Blobs {
    fn push(&mut self, name: &str, m: &DenseMatrix) {
        self.0.push((name.to_string(), m.clone()));
    }

    fn take(&mut self, name: &str, path: &Path) -> Result<DenseMatrix> {
        let i = self
            .0
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| container_err(path, format!("blob '{name}' is missing")))?;
        Ok(self.0.swap_remove(i).1)
    }
}

fn container_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Container {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn core_blobs(core: &CoreFactor, blobs: &mut Blobs) -> CoreInfo {
    blobs.push("core_q", core.q());
    blobs.push("core_tri", core.triangular());
    if let Some(p) = core.right_factor() {
        blobs.push("core_right", p);
    }
    let (rows, cols) = core.shape();
    CoreInfo {
        rows,
        cols,
        tri_transposed: core.tri_transposed(),
        epsilon: core.epsilon(),
        path: core.path(),
        report: core.report().copied(),
        fallback_used: core.fallback_used(),
    }
}

fn core_from_blobs(info: &CoreInfo, blobs: &mut Blobs, path: &Path) -> Result<CoreFactor> {
    let q = blobs.take("core_q", path)?;
    let tri = blobs.take("core_tri", path)?;
    let right = if blobs.0.iter().any(|(n, _)| n == "core_right") {
        Some(blobs.take("core_right", path)?)
    } else {
        None
    };
    CoreFactor::from_parts(
        (info.rows, info.cols),
        q,
        tri,
        info.tri_transposed,
        right,
        info.epsilon,
        info.path,
        info.report,
        info.fallback_used,
    )
    .map_err(|e| container_err(path, e.to_string()))
}

fn approximant_manifest(a: &Approximant, blobs: &mut Blobs) -> Manifest {
    let (mut x, mut y, mut core) = (None, None, None);
    match &a.factors {
        Factors::Sketched {
            f,
            g,
            core: c,
            x: xs,
            y: ys,
        } => {
            blobs.push("f", f);
            // Nystrom's G is F^T and is rebuilt on load
            if !a.method.requires_symmetric() {
                blobs.push("g", g);
            }
            core = Some(core_blobs(c, blobs));
            x = Some(xs.clone());
            y = ys.clone();
        }
        Factors::Orthogonal { q, u0, sigma, v0 } => {
            blobs.push("q", q);
            blobs.push("u0", u0);
            blobs.push(
                "sigma",
                &DenseMatrix::from_col_major(sigma.len(), 1, sigma.clone()).expect("column shape"),
            );
            blobs.push("v0", v0);
        }
    }
    Manifest {
        format_version: FORMAT_VERSION,
        kind: ContainerKind::Approximant,
        method: a.method,
        rows: a.rows,
        cols: a.cols,
        rank: a.rank,
        oversample: a.oversample,
        seed: a.seed,
        sketch: a.sketch,
        power: a.power,
        core_mode: a.core_mode,
        epsilon: a.epsilon,
        threshold: None,
        warnings: a.warnings.clone(),
        x,
        y,
        core,
        next_stream: None,
        update_count: None,
        blobs: Vec::new(),
    }
}

fn state_manifest(s: &UpdatableState, blobs: &mut Blobs) -> Manifest {
    blobs.push("f", &s.f);
    blobs.push("g", &s.g);
    blobs.push("raw_core", &s.raw_core);
    let core = core_blobs(&s.core, blobs);
    Manifest {
        format_version: FORMAT_VERSION,
        kind: ContainerKind::State,
        method: s.method,
        rows: s.rows,
        cols: s.cols,
        rank: s.rank(),
        oversample: s.oversample(),
        seed: s.seed,
        sketch: s.sketch,
        power: 0,
        core_mode: Some(s.mode),
        epsilon: s.epsilon,
        threshold: Some(s.threshold),
        warnings: Vec::new(),
        x: Some(s.x.clone()),
        y: Some(s.y.clone()),
        core: Some(core),
        next_stream: Some(s.next_stream),
        update_count: Some(s.update_count),
        blobs: Vec::new(),
    }
}

fn encode(mut manifest: Manifest, blobs: &Blobs) -> Result<Vec<u8>> {
    manifest.blobs = blobs
        .0
        .iter()
        .map(|(name, m)| BlobInfo {
            name: name.clone(),
            rows: m.rows(),
            cols: m.cols(),
        })
        .collect();
    let json = serde_json::to_vec(&manifest).map_err(|e| Error::Serialization(e.to_string()))?;
    let floats: usize = blobs.0.iter().map(|(_, m)| m.as_slice().len()).sum();
    let mut out = Vec::with_capacity(32 + json.len() + floats * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (name, m) in &blobs.0 {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
        out.extend_from_slice(&(m.as_slice().len() as u64).to_le_bytes());
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn save_approximant(a: &Approximant, path: impl AsRef<Path>) -> Result<()> {
    let mut blobs = Blobs(Vec::new());
    let manifest = approximant_manifest(a, &mut blobs);
    write_atomic(path.as_ref(), &encode(manifest, &blobs)?)
}

pub fn save_state(s: &UpdatableState, path: impl AsRef<Path>) -> Result<()> {
    let mut blobs = Blobs(Vec::new());
    let manifest = state_manifest(s, &mut blobs);
    write_atomic(path.as_ref(), &encode(manifest, &blobs)?)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                container_err(
                    self.path,
                    format!(
                        "truncated while reading {what} at byte {} ({} bytes left)",
                        self.pos,
                        self.buf.len() - self.pos
                    ),
                )
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2, what)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &str) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes"));
        usize::try_from(v)
            .map_err(|_| container_err(self.path, format!("{what} {v} does not fit in memory")))
    }
}

/// Parses container bytes; `path` is only used in error messages.
pub fn decode(bytes: &[u8], path: &Path) -> Result<(Manifest, Contents)> {
    let mut cur = Cursor {
        buf: bytes,
        pos: 0,
        path,
    };
    if cur.take(8, "magic")? != MAGIC {
        return Err(container_err(path, "not a factor container (bad magic)"));
    }
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::ContainerVersion {
            path: path.to_path_buf(),
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let len = cur.u64("manifest length")?;
    let manifest: Manifest = serde_json::from_slice(cur.take(len, "manifest")?)
        .map_err(|e| container_err(path, format!("manifest: {e}")))?;
    if manifest.format_version != version {
        return Err(container_err(
            path,
            "manifest version disagrees with header",
        ));
    }

    let mut blobs = Blobs(Vec::with_capacity(manifest.blobs.len()));
    for info in &manifest.blobs {
        let name_len = cur.u16("blob name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "blob name")?)
            .map_err(|_| container_err(path, "blob name is not UTF-8"))?;
        let rows = cur.u64("blob rows")?;
        let cols = cur.u64("blob cols")?;
        let count = cur.u64("blob length")?;
        if name != info.name || rows != info.rows || cols != info.cols {
            return Err(container_err(
                path,
                format!(
                    "blob '{name}' ({rows}x{cols}) does not match manifest entry '{}' ({}x{})",
                    info.name, info.rows, info.cols
                ),
            ));
        }
        if rows.checked_mul(cols) != Some(count) {
            return Err(container_err(
                path,
                format!("blob '{name}' declares {count} values for shape {rows}x{cols}"),
            ));
        }
        let raw = cur.take(count.saturating_mul(8), &format!("blob '{name}'"))?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        blobs.0.push((
            name.to_string(),
            DenseMatrix::from_col_major(rows, cols, data)?,
        ));
    }
    if cur.pos != bytes.len() {
        return Err(container_err(
            path,
            format!(
                "{} trailing bytes after the last blob",
                bytes.len() - cur.pos
            ),
        ));
    }
    for sk in manifest.x.iter().chain(manifest.y.iter()) {
        sk.validate()
            .map_err(|e| container_err(path, e.to_string()))?;
    }
    let contents = assemble(&manifest, blobs, path)?;
    Ok((manifest, contents))
}

fn check_shape(m: &DenseMatrix, expect: (usize, usize), name: &str, path: &Path) -> Result<()> {
    if m.shape() != expect {
        return Err(container_err(
            path,
            format!(
                "blob '{name}' is {:?}, manifest implies {:?}",
                m.shape(),
                expect
            ),
        ));
    }
    Ok(())
}

fn assemble(man: &Manifest, mut blobs: Blobs, path: &Path) -> Result<Contents> {
    let missing = |what: &str| container_err(path, format!("manifest lacks {what}"));
    let (m, n) = (man.rows, man.cols);
    match man.kind {
        ContainerKind::State => {
            let info = man.core.as_ref().ok_or_else(|| missing("core"))?;
            let f = blobs.take("f", path)?;
            let g = blobs.take("g", path)?;
            let raw_core = blobs.take("raw_core", path)?;
            let core = core_from_blobs(info, &mut blobs, path)?;
            let x = man.x.clone().ok_or_else(|| missing("x"))?;
            let y = man.y.clone().ok_or_else(|| missing("y"))?;
            let (k, kl) = (x.sketch_dim(), y.sketch_dim());
            check_shape(&f, (m, k), "f", path)?;
            check_shape(&g, (kl, n), "g", path)?;
            check_shape(&raw_core, (kl, k), "raw_core", path)?;
            if x.ambient_dim() != n || y.ambient_dim() != m || core.shape() != (kl, k) {
                return Err(container_err(
                    path,
                    "sketch dimensions disagree with the stored factors",
                ));
            }
            Ok(Contents::State(UpdatableState {
                method: man.method,
                mode: man.core_mode.ok_or_else(|| missing("core mode"))?,
                rows: m,
                cols: n,
                seed: man.seed,
                sketch: man.sketch,
                epsilon: man.epsilon,
                threshold: man.threshold.ok_or_else(|| missing("threshold"))?,
                f,
                g,
                raw_core,
                core,
                x,
                y,
                next_stream: man.next_stream.ok_or_else(|| missing("stream counter"))?,
                update_count: man.update_count.ok_or_else(|| missing("update count"))?,
            }))
        }
        ContainerKind::Approximant => {
            let factors = match &man.core {
                Some(info) => {
                    let f = blobs.take("f", path)?;
                    let g = if man.method.requires_symmetric() {
                        f.transpose()
                    } else {
                        blobs.take("g", path)?
                    };
                    let core = core_from_blobs(info, &mut blobs, path)?;
                    let x = man.x.clone().ok_or_else(|| missing("x"))?;
                    check_shape(&f, (m, core.shape().1), "f", path)?;
                    check_shape(&g, (core.shape().0, n), "g", path)?;
                    Factors::Sketched {
                        f,
                        g,
                        core,
                        x,
                        y: man.y.clone(),
                    }
                }
                None => {
                    let q = blobs.take("q", path)?;
                    let u0 = blobs.take("u0", path)?;
                    let sigma = blobs.take("sigma", path)?.into_vec();
                    let v0 = blobs.take("v0", path)?;
                    let k = sigma.len();
                    check_shape(&q, (m, q.cols()), "q", path)?;
                    check_shape(&u0, (q.cols(), k), "u0", path)?;
                    check_shape(&v0, (n, k), "v0", path)?;
                    Factors::Orthogonal { q, u0, sigma, v0 }
                }
            };
            Ok(Contents::Approximant(Approximant {
                method: man.method,
                rows: m,
                cols: n,
                rank: man.rank,
                oversample: man.oversample,
                seed: man.seed,
                sketch: man.sketch,
                power: man.power,
                core_mode: man.core_mode,
                epsilon: man.epsilon,
                warnings: man.warnings.clone(),
                factors,
            }))
        }
    }
}

pub fn load_container(path: impl AsRef<Path>) -> Result<(Manifest, Contents)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Loads either kind, returning the approximant.
pub fn load_approximant(path: impl AsRef<Path>) -> Result<Approximant> {
    Ok(load_container(path)?.1.into_approximant())
}

pub fn load_state(path: impl AsRef<Path>) -> Result<UpdatableState> {
    let path = path.as_ref();
    match load_container(path)?.1 {
        Contents::State(s) => Ok(s),
        Contents::Approximant(_) => Err(container_err(
            path,
            "holds an approximant, not an updatable state",
        )),
    }
}
