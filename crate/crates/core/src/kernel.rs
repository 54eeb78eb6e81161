//! Fidelity-kernel Gram matrices `K[i][j] = |<phi(x_i)|phi(x_j)>|^2` and the
//! classical RBF baseline.
//!
//! The `sv` backend simulates every row once and forms all overlaps as a
//! blocked complex matrix product; the `tn` backend contracts one
//! compute-uncompute network per entry. Both fill the same matrix.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{read_tensor, write_tensor, DatasetError, FeatureMatrix, Tensor, TensorData};
use crate::featuremap::{build_feature_map, Circuit, CircuitConfig, CircuitError};
use crate::linalg::{gemm_abt_strided, sgemm_abt_strided, sq_dists};
use crate::statevector::{
    batch_bytes, batch_states, inner_product, Planes, Precision, SimError, SimOptions, Simulator, StateBatch,
};
use crate::tensornet::{circuit_to_network, contract, find_path, ContractionPath, NetworkOptions, PathStrategy, TnError};

#[derive(Debug, Error)]
pub enum KernelError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Tn(#[from] TnError),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("dimension error: {0}")]
    DimError(String),
    #[error("gamma must be positive, got {0}")]
    InvalidGamma(f64),
    #[error("gram metadata: {0}")]
    Meta(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Result<T, E = KernelError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Sv,
    Tn,
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Backend::Sv => "sv",
            Backend::Tn => "tn",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TnOptions {
    pub strategy: PathStrategy,
    pub fuse_diagonals: bool,
}

impl Default for TnOptions {
    fn default() -> Self {
        Self {
            strategy: PathStrategy::Greedy,
            fuse_diagonals: true,
        }
    }
}

pub const DEFAULT_MEMORY_LIMIT: u64 = 3 << 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelConfig {
    pub circuit: CircuitConfig,
    pub backend: Backend,
    pub sim: SimOptions,
    pub precision: Precision,
    /// Budget for simultaneously held statevectors, in bytes.
    pub memory_limit: u64,
    pub tn: TnOptions,
    /// Run on a single thread.
    pub strict: bool,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            circuit: CircuitConfig::default(),
            backend: Backend::Sv,
            sim: SimOptions::default(),
            precision: Precision::F64,
            memory_limit: DEFAULT_MEMORY_LIMIT,
            tn: TnOptions::default(),
            strict: false,
        }
    }
}

impl KernelConfig {
    pub fn new(n_qubits: usize, backend: Backend) -> Self {
        Self {
            circuit: CircuitConfig::new(n_qubits),
            backend,
            ..Self::default()
        }
    }
}

/// Hex SHA-256 of a value's JSON encoding.
pub fn json_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable");
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GramMeta {
    /// `sv`, `tn` or `rbf`.
    pub backend: String,
    pub circuit_hash: Option<String>,
    pub gamma: Option<f64>,
    pub row_hash: String,
    pub col_hash: String,
    pub wall_time_s: f64,
    /// Entries actually evaluated (mirrored and analytic entries excluded).
    pub entries: u64,
    /// Largest distance an entry was moved by clamping to `[0, 1]`.
    pub max_clamp: f64,
    /// Hash of the pipeline configuration that produced the matrix, when known.
    #[serde(default)]
    pub config_hash: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub data: Vec<f64>,
    pub meta: GramMeta,
}

impl GramMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn transpose(&self) -> GramMatrix {
        let mut data = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                data[j * self.rows + i] = self.get(i, j);
            }
        }
        GramMatrix {
            rows: self.cols,
            cols: self.rows,
            data,
            meta: GramMeta {
                row_hash: self.meta.col_hash.clone(),
                col_hash: self.meta.row_hash.clone(),
                ..self.meta.clone()
            },
        }
    }

    /// Entries at `rows × cols` of this matrix.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> GramMatrix {
        let data = rows
            .iter()
            .flat_map(|&i| cols.iter().map(move |&j| self.get(i, j)))
            .collect();
        GramMatrix {
            rows: rows.len(),
            cols: cols.len(),
            data,
            meta: self.meta.clone(),
        }
    }

    /// Hex SHA-256 of shape and entry bytes.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.rows as u64).to_le_bytes());
        h.update((self.cols as u64).to_le_bytes());
        for v in &self.data {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn max_asymmetry(&self) -> f64 {
        assert!(self.is_square());
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in i + 1..self.cols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn max_diagonal_deviation(&self) -> f64 {
        (0..self.rows.min(self.cols))
            .map(|i| (self.get(i, i) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Smallest eigenvalue of the symmetrized matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        assert!(self.is_square());
        let n = self.rows;
        if n == 0 {
            return 0.0;
        }
        let m = DMatrix::from_fn(n, n, |i, j| 0.5 * (self.get(i, j) + self.get(j, i)));
        SymmetricEigen::new(m).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    /// Writes the entries as a rank-2 `f64` EMB1 file plus a `.json` metadata sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let t = Tensor {
            dims: vec![self.rows as u64, self.cols as u64],
            data: TensorData::F64(self.data.clone()),
            labels: None,
        };
        write_tensor(&t, path)?;
        let meta = serde_json::to_string_pretty(&self.meta).map_err(|e| KernelError::Meta(e.to_string()))?;
        std::fs::write(Self::sidecar_path(path), meta)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let t = read_tensor(path)?;
        if t.dims.len() != 2 {
            return Err(KernelError::DimError(format!("gram file has rank {}", t.dims.len())));
        }
        let data = match t.data {
            TensorData::F64(v) => v,
            TensorData::F32(v) => v.into_iter().map(f64::from).collect(),
        };
        let meta = std::fs::read_to_string(Self::sidecar_path(path))?;
        let meta = serde_json::from_str(&meta).map_err(|e| KernelError::Meta(e.to_string()))?;
        Ok(GramMatrix {
            rows: t.dims[0] as usize,
            cols: t.dims[1] as usize,
            data,
            meta,
        })
    }
}

/// Clamps entries to `[0, 1]` and returns the largest adjustment.
fn clamp_unit(data: &mut [f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for v in data.iter_mut() {
        let c = v.clamp(0.0, 1.0);
        worst = worst.max((c - *v).abs());
        *v = c;
    }
    if worst > 1e-9 {
        log::warn!("kernel entries clamped to [0, 1]; largest pre-clamp deviation {worst:.3e}");
    }
    worst
}

fn run<T: Send>(strict: bool, f: impl FnOnce() -> T + Send) -> T {
    if strict {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .expect("single-thread pool")
            .install(f)
    } else {
        f()
    }
}

/// Train Gram: upper triangle evaluated, mirrored, unit diagonal.
pub fn gram_train(x: &FeatureMatrix, cfg: &KernelConfig) -> Result<GramMatrix> {
    quantum_gram(x, None, cfg)
}

/// Rectangular cross Gram, rows = `test`, cols = `train`.
pub fn gram_cross(test: &FeatureMatrix, train: &FeatureMatrix, cfg: &KernelConfig) -> Result<GramMatrix> {
    if test.cols() != train.cols() {
        return Err(KernelError::DimError(format!(
            "test has {} features, train has {}",
            test.cols(),
            train.cols()
        )));
    }
    quantum_gram(test, Some(train), cfg)
}

fn quantum_gram(a: &FeatureMatrix, b: Option<&FeatureMatrix>, cfg: &KernelConfig) -> Result<GramMatrix> {
    if a.cols() == 0 {
        return Err(KernelError::DimError("feature vectors are empty".into()));
    }
    let start = Instant::now();
    let (rows, cols) = (a.rows(), b.map_or(a.rows(), FeatureMatrix::rows));
    let (mut data, entries) = run(cfg.strict, || match cfg.backend {
        Backend::Sv => sv_fill(a, b, cfg),
        Backend::Tn => tn_fill(a, b, cfg),
    })?;
    if b.is_none() {
        for i in 0..rows {
            data[i * cols + i] = 1.0;
            for j in 0..i {
                data[i * cols + j] = data[j * cols + i];
            }
        }
    }
    let max_clamp = clamp_unit(&mut data);
    Ok(GramMatrix {
        rows,
        cols,
        data,
        meta: GramMeta {
            backend: cfg.backend.to_string(),
            circuit_hash: Some(json_hash(&cfg.circuit)),
            gamma: None,
            row_hash: a.content_hash(),
            col_hash: b.unwrap_or(a).content_hash(),
            wall_time_s: start.elapsed().as_secs_f64(),
            entries,
            max_clamp,
            config_hash: None,
        },
    })
}

const TILE: usize = 128;

/// Fills `|<a_i|b_j>|^2` for all `(i, j)` (upper triangle only when `b` is `None`).
fn sv_fill(a: &FeatureMatrix, b: Option<&FeatureMatrix>, cfg: &KernelConfig) -> Result<(Vec<f64>, u64)> {
    let symmetric = b.is_none();
    let b = b.unwrap_or(a);
    let n = cfg.circuit.n_qubits;
    let (rows, cols) = (a.rows(), b.rows());
    let mut out = vec![0.0; rows * cols];
    if rows == 0 || cols == 0 {
        return Ok((out, 0));
    }
    let row_bytes = batch_bytes(1, n, cfg.precision);
    let total = if symmetric { rows } else { rows + cols };
    let per_chunk = if batch_bytes(total, n, cfg.precision) <= cfg.memory_limit {
        total
    } else {
        ((cfg.memory_limit / (2 * row_bytes)) as usize).max(1)
    };
    let chunks = |len: usize| -> Vec<std::ops::Range<usize>> {
        (0..len).step_by(per_chunk).map(|s| s..(s + per_chunk).min(len)).collect()
    };
    let (a_chunks, b_chunks) = (chunks(rows), chunks(cols));
    if a_chunks.len() > 1 || b_chunks.len() > 1 {
        log::info!(
            "statevectors exceed the memory budget; using {}×{} chunks of {per_chunk} rows",
            a_chunks.len(),
            b_chunks.len()
        );
    }
    let states = |m: &FeatureMatrix, r: &std::ops::Range<usize>| -> Result<StateBatch> {
        let idx: Vec<usize> = r.clone().collect();
        Ok(batch_states(&m.select_rows(&idx), &cfg.circuit, cfg.sim, cfg.precision, cfg.memory_limit)?)
    };
    let mut entries = 0u64;
    for (ia, ra) in a_chunks.iter().enumerate() {
        let sa = states(a, ra)?;
        for (jb, rb) in b_chunks.iter().enumerate() {
            if symmetric && jb < ia {
                continue;
            }
            let owned;
            let sb = if symmetric && jb == ia {
                &sa
            } else {
                owned = states(b, rb)?;
                &owned
            };
            entries += overlap_block(&sa, sb, symmetric && ia == jb, ra.start, rb.start, cols, &mut out);
        }
    }
    Ok((out, entries))
}

/// Writes `|<a_i|b_j>|^2` into `out` at `(row0 + i, col0 + j)`, tile by tile.
fn overlap_block(
    a: &StateBatch,
    b: &StateBatch,
    upper_only: bool,
    row0: usize,
    col0: usize,
    ld: usize,
    out: &mut [f64],
) -> u64 {
    let tiles = |len: usize| (0..len).step_by(TILE).map(move |s| (s, (s + TILE).min(len)));
    let pairs: Vec<((usize, usize), (usize, usize))> = tiles(a.rows)
        .flat_map(|ti| tiles(b.rows).map(move |tj| (ti, tj)))
        .filter(|&(ti, tj)| !upper_only || tj.1 > ti.0 && tj.0 >= ti.0)
        .collect();
    let blocks: Vec<Vec<f64>> = pairs
        .par_iter()
        .map(|&((i0, i1), (j0, j1))| overlap_tile(a, b, i0, i1, j0, j1))
        .collect();
    let mut entries = 0u64;
    for (((i0, i1), (j0, j1)), block) in pairs.into_iter().zip(blocks) {
        let w = j1 - j0;
        for i in i0..i1 {
            for j in j0..j1 {
                if upper_only && j <= i {
                    continue;
                }
                out[(row0 + i) * ld + col0 + j] = block[(i - i0) * w + (j - j0)];
                entries += 1;
            }
        }
    }
    entries
}

fn overlap_tile(a: &StateBatch, b: &StateBatch, i0: usize, i1: usize, j0: usize, j1: usize) -> Vec<f64> {
    let d = a.dim();
    let len = 2 * d;
    let (m, n) = (i1 - i0, j1 - j0);
    match (&a.planes, &b.planes) {
        (Planes::F64(pa), Planes::F64(pb)) => {
            let (ta, tb) = (&pa[i0 * len..i1 * len], &pb[j0 * len..j1 * len]);
            let mut re = vec![0.0; m * n];
            let mut im = vec![0.0; m * n];
            // Re<a|b> = ar·br + ai·bi over the packed rows; Im<a|b> = ar·bi − ai·br.
            gemm_abt_strided(m, n, len, 1.0, ta, len, tb, len, 0.0, &mut re);
            gemm_abt_strided(m, n, d, 1.0, ta, len, &tb[d..], len, 0.0, &mut im);
            gemm_abt_strided(m, n, d, -1.0, &ta[d..], len, tb, len, 1.0, &mut im);
            re.iter().zip(&im).map(|(r, i)| r * r + i * i).collect()
        }
        (Planes::F32(pa), Planes::F32(pb)) => {
            let (ta, tb) = (&pa[i0 * len..i1 * len], &pb[j0 * len..j1 * len]);
            let mut re = vec![0.0f32; m * n];
            let mut im = vec![0.0f32; m * n];
            sgemm_abt_strided(m, n, len, 1.0, ta, len, tb, len, 0.0, &mut re);
            sgemm_abt_strided(m, n, d, 1.0, ta, len, &tb[d..], len, 0.0, &mut im);
            sgemm_abt_strided(m, n, d, -1.0, &ta[d..], len, tb, len, 1.0, &mut im);
            re.iter()
                .zip(&im)
                .map(|(&r, &i)| f64::from(r).powi(2) + f64::from(i).powi(2))
                .collect()
        }
        _ => unreachable!("both batches share one precision"),
    }
}

/// Per-worker cache of the last contraction path, keyed by network structure.
#[derive(Default)]
struct PathCache {
    structure: Vec<Vec<usize>>,
    path: Option<ContractionPath>,
}

fn tn_amplitude(ket: &Circuit, bra: &Circuit, tn: TnOptions, cache: &mut PathCache) -> Result<f64> {
    let net = circuit_to_network(ket, bra, NetworkOptions { fuse_diagonals: tn.fuse_diagonals })?;
    let same = cache.path.is_some()
        && cache.structure.len() == net.tensors.len()
        && cache.structure.iter().zip(&net.tensors).all(|(s, t)| *s == t.indices);
    if !same {
        cache.path = Some(find_path(&net, tn.strategy)?);
        cache.structure = net.tensors.iter().map(|t| t.indices.clone()).collect();
    }
    Ok(contract(&net, cache.path.as_ref().expect("path set"))?.norm_sqr())
}

fn tn_fill(a: &FeatureMatrix, b: Option<&FeatureMatrix>, cfg: &KernelConfig) -> Result<(Vec<f64>, u64)> {
    let symmetric = b.is_none();
    let b = b.unwrap_or(a);
    let circuits = |m: &FeatureMatrix| -> Result<Vec<Circuit>> {
        (0..m.rows())
            .map(|i| Ok(build_feature_map(&m.row_f64(i), &cfg.circuit)?))
            .collect()
    };
    let ca = circuits(a)?;
    let cb = if symmetric { ca.clone() } else { circuits(b)? };
    let cols = cb.len();
    let pairs: Vec<(usize, usize)> = (0..ca.len())
        .flat_map(|i| {
            let from = if symmetric { i + 1 } else { 0 };
            (from..cols).map(move |j| (i, j))
        })
        .collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map_init(PathCache::default, |cache, &(i, j)| tn_amplitude(&cb[j], &ca[i], cfg.tn, cache))
        .collect::<Result<_>>()?;
    let mut out = vec![0.0; ca.len() * cols];
    for (&(i, j), v) in pairs.iter().zip(values) {
        out[i * cols + j] = v;
    }
    Ok((out, pairs.len() as u64))
}

/// Single kernel value computed with the chosen backend, without batching.
pub fn kernel_value(x: &[f64], y: &[f64], cfg: &KernelConfig) -> Result<f64> {
    let cx = build_feature_map(x, &cfg.circuit)?;
    let cy = build_feature_map(y, &cfg.circuit)?;
    match cfg.backend {
        Backend::Sv => {
            let mut sim = Simulator::new(cfg.sim);
            let (sx, sy) = (sim.simulate(&cx)?, sim.simulate(&cy)?);
            Ok(inner_product(&sx, &sy)?.norm_sqr())
        }
        Backend::Tn => tn_amplitude(&cy, &cx, cfg.tn, &mut PathCache::default()),
    }
}

/// `gamma = 1 / (d · Var(X))` over all entries of `x`; 1 when the variance is zero.
pub fn gamma_scale(x: &FeatureMatrix) -> f64 {
    let n = x.data().len();
    if n == 0 {
        return 1.0;
    }
    let mean = x.data().iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64;
    let var = x.data().iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n as f64;
    if var > 0.0 {
        1.0 / (x.cols() as f64 * var)
    } else {
        1.0
    }
}

/// `exp(-gamma ||x - y||^2)` for all row pairs.
pub fn rbf_gram(x: &FeatureMatrix, y: &FeatureMatrix, gamma: f64) -> Result<GramMatrix> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(KernelError::InvalidGamma(gamma));
    }
    if x.cols() != y.cols() {
        return Err(KernelError::DimError(format!(
            "{} features against {}",
            x.cols(),
            y.cols()
        )));
    }
    let start = Instant::now();
    let to64 = |m: &FeatureMatrix| m.data().iter().map(|&v| f64::from(v)).collect::<Vec<f64>>();
    let (xa, ya) = (to64(x), to64(y));
    let mut data = if x.cols() == 0 {
        vec![0.0; x.rows() * y.rows()]
    } else {
        sq_dists(&xa, &ya, x.cols())
    };
    data.par_iter_mut().for_each(|v| *v = (-gamma * *v).exp());
    if x.rows() == y.rows() && xa == ya {
        for i in 0..x.rows() {
            data[i * y.rows() + i] = 1.0;
        }
    }
    Ok(GramMatrix {
        rows: x.rows(),
        cols: y.rows(),
        data,
        meta: GramMeta {
            backend: "rbf".into(),
            circuit_hash: None,
            gamma: Some(gamma),
            row_hash: x.content_hash(),
            col_hash: y.content_hash(),
            wall_time_s: start.elapsed().as_secs_f64(),
            entries: (x.rows() * y.rows()) as u64,
            max_clamp: 0.0,
            config_hash: None,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, d: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * d).map(|_| rng.gen_range(-3.0f32..3.0)).collect();
        FeatureMatrix::new(n, d, data, None).unwrap()
    }

    #[test]
    fn single_row_is_one() {
        let g = gram_train(&random(1, 6, 0), &KernelConfig::new(2, Backend::Sv)).unwrap();
        assert_eq!((g.rows, g.cols, g.data.clone()), (1, 1, vec![1.0]));
        assert_eq!(g.meta.entries, 0);
    }

    #[test]
    fn duplicated_row_gives_one() {
        let x = random(1, 6, 1);
        let x2 = x.vstack(&x).unwrap();
        for backend in [Backend::Sv, Backend::Tn] {
            let g = gram_train(&x2, &KernelConfig::new(2, backend)).unwrap();
            assert!((g.get(0, 1) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn backends_agree_and_are_symmetric() {
        let x = random(7, 9, 2);
        let sv = gram_train(&x, &KernelConfig::new(3, Backend::Sv)).unwrap();
        let tn = gram_train(&x, &KernelConfig::new(3, Backend::Tn)).unwrap();
        assert_eq!(sv.meta.entries, 21);
        assert_eq!(sv, sv.transpose().clone_meta_from(&sv));
        for (a, b) in sv.data.iter().zip(&tn.data) {
            assert!((a - b).abs() < 1e-10);
        }
        let full = gram_cross(&x, &x, &KernelConfig::new(3, Backend::Sv)).unwrap();
        for (a, b) in sv.data.iter().zip(&full.data) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(sv.min_eigenvalue() > -1e-10);
        assert_eq!(sv.max_diagonal_deviation(), 0.0);
    }

    #[test]
    fn chunking_does_not_change_entries() {
        let x = random(9, 6, 3);
        let y = random(5, 6, 4);
        let mut cfg = KernelConfig::new(3, Backend::Sv);
        let whole = gram_train(&x, &cfg).unwrap();
        let cross = gram_cross(&y, &x, &cfg).unwrap();
        cfg.memory_limit = batch_bytes(2, 3, Precision::F64) * 2;
        let chunked = gram_train(&x, &cfg).unwrap();
        let chunked_cross = gram_cross(&y, &x, &cfg).unwrap();
        for (a, b) in whole.data.iter().zip(&chunked.data) {
            assert!((a - b).abs() < 1e-14);
        }
        for (a, b) in cross.data.iter().zip(&chunked_cross.data) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn f32_mode_is_close() {
        let x = random(6, 12, 5);
        let mut cfg = KernelConfig::new(4, Backend::Sv);
        let a = gram_train(&x, &cfg).unwrap();
        cfg.precision = Precision::F32;
        let b = gram_train(&x, &cfg).unwrap();
        for (p, q) in a.data.iter().zip(&b.data) {
            assert!((p - q).abs() < 1e-5);
        }
    }

    #[test]
    fn cross_with_train_row() {
        let x = random(4, 6, 6);
        let t = x.select_rows(&[2]);
        let g = gram_cross(&t, &x, &KernelConfig::new(2, Backend::Sv)).unwrap();
        assert_eq!((g.rows, g.cols), (1, 4));
        assert!((g.get(0, 2) - 1.0).abs() < 1e-12);
        assert!(matches!(
            gram_cross(&random(1, 5, 0), &x, &KernelConfig::new(2, Backend::Sv)),
            Err(KernelError::DimError(_))
        ));
    }

    #[test]
    fn strict_mode_is_bit_identical() {
        let x = random(10, 12, 7);
        let mut cfg = KernelConfig::new(4, Backend::Sv);
        let a = gram_train(&x, &cfg).unwrap();
        cfg.strict = true;
        let b = gram_train(&x, &cfg).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn rbf_examples() {
        let x = FeatureMatrix::new(1, 1, vec![0.0], None).unwrap();
        let y = FeatureMatrix::new(1, 1, vec![1.0], None).unwrap();
        let g = rbf_gram(&x, &y, 1.0).unwrap();
        assert!((g.get(0, 0) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((g.get(0, 0) - 0.367879).abs() < 1e-6);
        assert_eq!(rbf_gram(&y, &y, 3.0).unwrap().get(0, 0), 1.0);
        let s = FeatureMatrix::new(2, 1, vec![0.0, 2.0], None).unwrap();
        assert_eq!(gamma_scale(&s), 1.0);
        assert!(matches!(rbf_gram(&x, &y, 0.0), Err(KernelError::InvalidGamma(_))));
        let z = FeatureMatrix::new(1, 2, vec![0.0, 0.0], None).unwrap();
        assert!(matches!(rbf_gram(&x, &z, 1.0), Err(KernelError::DimError(_))));
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = gram_train(&random(3, 6, 8), &KernelConfig::new(2, Backend::Sv)).unwrap();
        let path = dir.path().join("k.emb1");
        g.save(&path).unwrap();
        assert!(GramMatrix::sidecar_path(&path).exists());
        assert_eq!(GramMatrix::load(&path).unwrap(), g);
    }

    #[test]
    fn permutation_equivariance() {
        let x = random(5, 6, 9);
        let perm = [3, 0, 4, 1, 2];
        let cfg = KernelConfig::new(2, Backend::Sv);
        let g = gram_train(&x, &cfg).unwrap();
        let gp = gram_train(&x.select_rows(&perm), &cfg).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert!((gp.get(i, j) - g.get(perm[i], perm[j])).abs() < 1e-12);
            }
        }
    }

    impl GramMatrix {
        fn clone_meta_from(mut self, other: &GramMatrix) -> GramMatrix {
            self.meta = other.meta.clone();
            self
        }
    }
}
