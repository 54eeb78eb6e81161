//! Standardization, PCA and rotation-angle scaling.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, FeatureMatrix};
use crate::linalg::gemm_abt;

#[derive(Debug, Error)]
pub enum ReduceError {
    #[error("dimension error: {0}")]
    DimError(String),
    #[error("angle scaler used before fit")]
    NotFitted,
    #[error("invalid angle range [{lo}, {hi}]")]
    InvalidRange { lo: f64, hi: f64 },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

type Result<T, E = ReduceError> = std::result::Result<T, E>;

fn rows_f64(x: &FeatureMatrix) -> Vec<f64> {
    x.data().iter().map(|&v| f64::from(v)).collect()
}

fn from_rows(rows: usize, cols: usize, data: Vec<f64>, x: &FeatureMatrix) -> Result<FeatureMatrix> {
    let data = data.into_iter().map(|v| v as f32).collect();
    Ok(FeatureMatrix::new(rows, cols, data, x.labels().map(<[u8]>::to_vec))?)
}

/// Per-feature z-scoring with population standard deviation; constant
/// features are only centered.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &FeatureMatrix) -> Result<Self> {
        let (n, d) = (x.rows(), x.cols());
        if n == 0 {
            return Err(ReduceError::DimError("cannot fit on zero rows".into()));
        }
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, &v) in mean.iter_mut().zip(x.row(i)) {
                *m += f64::from(v);
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for i in 0..n {
            for ((s, &v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (f64::from(v) - m).powi(2);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 0.0 { sd } else { 1.0 }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn transform(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        check_cols(x, self.mean.len())?;
        let d = x.cols();
        let out: Vec<f64> = x
            .data()
            .par_chunks(d.max(1))
            .flat_map_iter(|r| {
                r.iter()
                    .zip(&self.mean)
                    .zip(&self.scale)
                    .map(|((&v, m), s)| (f64::from(v) - m) / s)
            })
            .collect();
        from_rows(x.rows(), d, out, x)
    }
}

fn check_cols(x: &FeatureMatrix, expected: usize) -> Result<()> {
    if x.cols() != expected {
        return Err(ReduceError::DimError(format!(
            "input has {} columns, model expects {expected}",
            x.cols()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Row-major m×d, orthonormal rows in descending explained variance.
    pub components: Vec<f64>,
    pub explained_variance: Vec<f64>,
    /// Set when fewer than m directions carry non-zero variance.
    pub rank_deficient: bool,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.explained_variance.len()
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn component(&self, j: usize) -> &[f64] {
        let d = self.n_features();
        &self.components[j * d..(j + 1) * d]
    }

    pub fn transform_row(&self, x: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        (0..self.n_components())
            .map(|j| self.component(j).iter().zip(&centered).map(|(c, v)| c * v).sum())
            .collect()
    }

    pub fn inverse_row(&self, z: &[f64]) -> Vec<f64> {
        let mut x = self.mean.clone();
        for (j, &zj) in z.iter().enumerate() {
            for (xi, c) in x.iter_mut().zip(self.component(j)) {
                *xi += zj * c;
            }
        }
        x
    }
}

/// Fits the top-`m` principal directions from the eigendecomposition of the
/// sample covariance.
pub fn pca_fit(x: &FeatureMatrix, m: usize) -> Result<PcaModel> {
    let (n, d) = (x.rows(), x.cols());
    if m == 0 || m > n.min(d) {
        return Err(ReduceError::DimError(format!(
            "{m} components requested from a {n}×{d} matrix"
        )));
    }
    let data = rows_f64(x);
    let mut mean = vec![0.0; d];
    for r in data.chunks_exact(d) {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n as f64);
    // Transposed, centered copy so the scatter matrix is a single A·Aᵀ.
    let mut xt = vec![0.0; d * n];
    for (i, r) in data.chunks_exact(d).enumerate() {
        for j in 0..d {
            xt[j * n + i] = r[j] - mean[j];
        }
    }
    let mut scatter = vec![0.0; d * d];
    gemm_abt(d, d, n, 1.0, &xt, &xt, 0.0, &mut scatter);
    let denom = (n.max(2) - 1) as f64;
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, &scatter));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let floor = top * d as f64 * f64::EPSILON * 16.0;

    let mut components = Vec::with_capacity(m * d);
    let mut explained_variance = Vec::with_capacity(m);
    let mut rank_deficient = false;
    for &k in order.iter().take(m) {
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let pivot = (0..d).fold(0, |b, i| if v[i].abs() > v[b].abs() { i } else { b });
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|c| *c = -*c);
        }
        components.extend(v);
        let lambda = eig.eigenvalues[k];
        if lambda <= floor {
            rank_deficient = true;
            explained_variance.push(0.0);
        } else {
            explained_variance.push(lambda / denom);
        }
    }
    if rank_deficient {
        log::warn!("PCA: {m} components exceed the numerical rank; trailing variances are zero");
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
        rank_deficient,
    })
}

pub fn pca_transform(model: &PcaModel, x: &FeatureMatrix) -> Result<FeatureMatrix> {
    check_cols(x, model.n_features())?;
    let d = x.cols();
    let out: Vec<f64> = x
        .data()
        .par_chunks(d.max(1))
        .flat_map_iter(|r| {
            let row: Vec<f64> = r.iter().map(|&v| f64::from(v)).collect();
            model.transform_row(&row)
        })
        .collect();
    from_rows(x.rows(), model.n_components(), out, x)
}

pub fn pca_inverse_transform(model: &PcaModel, z: &FeatureMatrix) -> Result<FeatureMatrix> {
    check_cols(z, model.n_components())?;
    let out: Vec<f64> = (0..z.rows())
        .flat_map(|i| model.inverse_row(&z.row_f64(i)))
        .collect();
    from_rows(z.rows(), model.n_features(), out, z)
}

/// Largest f32 not above `v`.
fn f32_at_most(v: f64) -> f32 {
    let f = v as f32;
    if f64::from(f) <= v {
        f
    } else if f > 0.0 {
        f32::from_bits(f.to_bits() - 1)
    } else if f == 0.0 {
        -f32::from_bits(1)
    } else {
        f32::from_bits(f.to_bits() + 1)
    }
}

/// Smallest f32 not below `v`.
fn f32_at_least(v: f64) -> f32 {
    -f32_at_most(-v)
}

/// Maps each feature's training range affinely onto `[lo, hi]` radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleScaler {
    pub lo: f64,
    pub hi: f64,
    pub min: Option<Vec<f64>>,
    pub max: Option<Vec<f64>>,
}

impl AngleScaler {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(ReduceError::InvalidRange { lo, hi });
        }
        Ok(Self {
            lo,
            hi,
            min: None,
            max: None,
        })
    }

    /// Symmetric range `[-half, half]`.
    pub fn symmetric(half: f64) -> Result<Self> {
        Self::new(-half, half)
    }

    pub fn is_fitted(&self) -> bool {
        self.min.is_some() && self.max.is_some()
    }

    pub fn fit(&mut self, x: &FeatureMatrix) -> Result<()> {
        if x.rows() == 0 {
            return Err(ReduceError::DimError("cannot fit on zero rows".into()));
        }
        let d = x.cols();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for i in 0..x.rows() {
            for (j, &v) in x.row(i).iter().enumerate() {
                min[j] = min[j].min(f64::from(v));
                max[j] = max[j].max(f64::from(v));
            }
        }
        self.min = Some(min);
        self.max = Some(max);
        Ok(())
    }

    pub fn transform(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        let (Some(min), Some(max)) = (&self.min, &self.max) else {
            return Err(ReduceError::NotFitted);
        };
        check_cols(x, min.len())?;
        let (lo32, hi32) = (f32_at_least(self.lo), f32_at_most(self.hi));
        let mid = 0.5 * (self.lo + self.hi);
        let d = x.cols();
        let data: Vec<f32> = x
            .data()
            .par_chunks(d.max(1))
            .flat_map_iter(|r| {
                r.iter().enumerate().map(move |(j, &v)| {
                    let span = max[j] - min[j];
                    let a = if span > 0.0 {
                        let z = ((f64::from(v) - min[j]) / span).clamp(0.0, 1.0);
                        self.lo + (self.hi - self.lo) * z
                    } else {
                        mid
                    };
                    (a as f32).clamp(lo32, hi32)
                })
            })
            .collect();
        Ok(FeatureMatrix::new(x.rows(), d, data, x.labels().map(<[u8]>::to_vec))?)
    }
}

/// Fitted chain: optional standardization, optional PCA, then angle scaling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reducer {
    pub standardizer: Option<Standardizer>,
    pub pca: Option<PcaModel>,
    pub scaler: AngleScaler,
}

impl Reducer {
    pub fn fit(
        train: &FeatureMatrix,
        standardize: bool,
        pca_dim: Option<usize>,
        range: (f64, f64),
    ) -> Result<Self> {
        let standardizer = standardize.then(|| Standardizer::fit(train)).transpose()?;
        let x = match &standardizer {
            Some(s) => s.transform(train)?,
            None => train.clone(),
        };
        let pca = pca_dim.map(|m| pca_fit(&x, m)).transpose()?;
        let x = match &pca {
            Some(p) => pca_transform(p, &x)?,
            None => x,
        };
        let mut scaler = AngleScaler::new(range.0, range.1)?;
        scaler.fit(&x)?;
        Ok(Self {
            standardizer,
            pca,
            scaler,
        })
    }

    pub fn transform(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        let x = match &self.standardizer {
            Some(s) => s.transform(x)?,
            None => x.clone(),
        };
        let x = match &self.pca {
            Some(p) => pca_transform(p, &x)?,
            None => x,
        };
        self.scaler.transform(&x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn matrix(rows: &[Vec<f64>]) -> FeatureMatrix {
        FeatureMatrix::from_rows_f64(rows, None).unwrap()
    }

    fn random(n: usize, d: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        matrix(&rows)
    }

    /// One-sided Jacobi SVD of an n×d row-major matrix: returns singular values
    /// and right singular vectors (as rows), unsorted.
    fn jacobi_svd(a: &[f64], n: usize, d: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut u: Vec<Vec<f64>> = (0..d).map(|j| (0..n).map(|i| a[i * d + j]).collect()).collect();
        let mut v: Vec<Vec<f64>> = (0..d).map(|j| (0..d).map(|i| f64::from(u8::from(i == j))).collect()).collect();
        for _sweep in 0..60 {
            let mut off = 0.0f64;
            for p in 0..d {
                for q in p + 1..d {
                    let alpha: f64 = u[p].iter().map(|x| x * x).sum();
                    let beta: f64 = u[q].iter().map(|x| x * x).sum();
                    let gamma: f64 = u[p].iter().zip(&u[q]).map(|(x, y)| x * y).sum();
                    if gamma.abs() < 1e-300 {
                        continue;
                    }
                    off = off.max(gamma.abs() / (alpha * beta).sqrt());
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let t = if zeta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    for cols in [&mut u, &mut v] {
                        let (lo, hi) = cols.split_at_mut(q);
                        for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                            let (xp, xq) = (*x, *y);
                            *x = c * xp - s * xq;
                            *y = s * xp + c * xq;
                        }
                    }
                }
            }
            if off < 1e-15 {
                break;
            }
        }
        (u.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect(), v)
    }

    #[test]
    fn line_y_equals_x() {
        let x = matrix(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0], vec![-3.0, -3.0]]);
        let p = pca_fit(&x, 2).unwrap();
        let r = 1.0 / 2f64.sqrt();
        assert!((p.component(0)[0] - r).abs() < 1e-12 && (p.component(0)[1] - r).abs() < 1e-12);
        assert_eq!(p.explained_variance[1], 0.0);
        assert!(p.rank_deficient);
    }

    #[test]
    fn full_rank_preserves_distances_and_inverts() {
        let x = random(20, 5, 1);
        let p = pca_fit(&x, 5).unwrap();
        let z = pca_transform(&p, &x).unwrap();
        for (i, j) in [(0, 1), (3, 17), (5, 9)] {
            let dx: f64 = x.row_f64(i).iter().zip(x.row_f64(j)).map(|(a, b)| (a - b).powi(2)).sum();
            let dz: f64 = z.row_f64(i).iter().zip(z.row_f64(j)).map(|(a, b)| (a - b).powi(2)).sum();
            assert!((dx.sqrt() - dz.sqrt()).abs() < 1e-6);
        }
        let back = pca_inverse_transform(&p, &z).unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        let mean = matrix(&[p.mean.clone()]);
        let zm = pca_transform(&p, &mean).unwrap();
        assert!(zm.data().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn three_points_by_hand() {
        // Centered points (-1,-1), (0,2), (1,-1): scatter [[2,0],[0,6]], variance 1 and 3.
        let x = matrix(&[vec![0.0, 0.0], vec![1.0, 3.0], vec![2.0, 0.0]]);
        let p = pca_fit(&x, 2).unwrap();
        assert!((p.explained_variance[0] - 3.0).abs() < 1e-12);
        assert!((p.explained_variance[1] - 1.0).abs() < 1e-12);
        let z = pca_transform(&p, &x).unwrap();
        let expected = [[-1.0, -1.0], [2.0, 0.0], [-1.0, 1.0]];
        for (i, e) in expected.iter().enumerate() {
            assert!((f64::from(z.row(i)[0]) - e[0]).abs() < 1e-6);
            assert!((f64::from(z.row(i)[1]) - e[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn matches_jacobi_svd_oracle() {
        let x = random(50, 8, 2);
        let p = pca_fit(&x, 8).unwrap();
        let mut centered = rows_f64(&x);
        for r in centered.chunks_exact_mut(8) {
            for (v, m) in r.iter_mut().zip(&p.mean) {
                *v -= m;
            }
        }
        let (s, v) = jacobi_svd(&centered, 50, 8);
        let mut order: Vec<usize> = (0..8).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
        for (j, &k) in order.iter().enumerate() {
            assert!((p.explained_variance[j] - s[k] * s[k] / 49.0).abs() < 1e-8);
            let dot: f64 = p.component(j).iter().zip(&v[k]).map(|(a, b)| a * b).sum();
            let sign = dot.signum();
            for (a, b) in p.component(j).iter().zip(&v[k]) {
                assert!((a - sign * b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn dimension_errors() {
        let x = random(4, 3, 0);
        assert!(matches!(pca_fit(&x, 4), Err(ReduceError::DimError(_))));
        assert!(matches!(pca_fit(&x, 0), Err(ReduceError::DimError(_))));
        let p = pca_fit(&x, 2).unwrap();
        assert!(matches!(pca_transform(&p, &random(2, 4, 0)), Err(ReduceError::DimError(_))));
    }

    #[test]
    fn angle_examples() {
        let train = matrix(&[vec![0.0], vec![1.0]]);
        let mut s = AngleScaler::symmetric(PI).unwrap();
        assert!(matches!(s.transform(&train), Err(ReduceError::NotFitted)));
        s.fit(&train).unwrap();
        let out = s.transform(&matrix(&[vec![0.5], vec![1.0], vec![2.0], vec![-7.0]])).unwrap();
        assert_eq!(out.row(0)[0], 0.0);
        assert!((f64::from(out.row(1)[0]) - PI).abs() < 1e-6);
        assert!(f64::from(out.row(1)[0]) <= PI);
        assert_eq!(out.row(2)[0], out.row(1)[0]);
        assert!(f64::from(out.row(3)[0]) >= -PI);
        assert!(AngleScaler::new(1.0, 1.0).is_err());
    }

    #[test]
    fn reducer_chains_stages() {
        let train = random(30, 6, 3);
        let r = Reducer::fit(&train, true, Some(4), (-0.5, 0.5)).unwrap();
        let out = r.transform(&train).unwrap();
        assert_eq!(out.cols(), 4);
        assert!(out.data().iter().all(|v| (-0.5..=0.5).contains(v)));
        let manual = {
            let s = r.standardizer.as_ref().unwrap().transform(&train).unwrap();
            r.scaler.transform(&pca_transform(r.pca.as_ref().unwrap(), &s).unwrap()).unwrap()
        };
        assert_eq!(out, manual);
        let plain = Reducer::fit(&train, false, None, (0.0, 1.0)).unwrap();
        assert_eq!(plain.transform(&train).unwrap().cols(), 6);
    }

    #[test]
    fn constant_feature_maps_to_midpoint() {
        let train = matrix(&[vec![3.0, 0.0], vec![3.0, 1.0]]);
        let mut s = AngleScaler::new(0.0, 2.0).unwrap();
        s.fit(&train).unwrap();
        let out = s.transform(&matrix(&[vec![5.0, 0.0]])).unwrap();
        assert_eq!(out.row(0), &[1.0, 0.0]);
    }

    #[test]
    fn standardizer_zero_mean_unit_variance() {
        let x = matrix(&[vec![1.0, 5.0], vec![3.0, 5.0], vec![5.0, 5.0]]);
        let s = Standardizer::fit(&x).unwrap();
        let z = s.transform(&x).unwrap();
        let col0: Vec<f64> = (0..3).map(|i| f64::from(z.row(i)[0])).collect();
        assert!(col0.iter().sum::<f64>().abs() < 1e-6);
        assert!((col0.iter().map(|v| v * v).sum::<f64>() / 3.0 - 1.0).abs() < 1e-6);
        assert!((0..3).all(|i| z.row(i)[1] == 0.0));
    }

    proptest! {
        #[test]
        fn reconstruction_error_is_discarded_variance(seed in any::<u64>(), n in 6usize..30, d in 2usize..6, m in 1usize..6) {
            let m = m.min(d).min(n);
            let x = random(n, d, seed);
            let full = pca_fit(&x, d.min(n)).unwrap();
            let p = pca_fit(&x, m).unwrap();
            let mut err = 0.0;
            for i in 0..n {
                let row = x.row_f64(i);
                let back = p.inverse_row(&p.transform_row(&row));
                err += row.iter().zip(&back).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            }
            let discarded: f64 = full.explained_variance[m..].iter().sum::<f64>() * (n - 1) as f64;
            prop_assert!((err - discarded).abs() < 1e-6, "{} vs {}", err, discarded);
        }

        #[test]
        fn pca_is_deterministic_and_orthonormal(seed in any::<u64>()) {
            let x = random(12, 4, seed);
            let a = pca_fit(&x, 3).unwrap();
            prop_assert_eq!(&a, &pca_fit(&x, 3).unwrap());
            for i in 0..3 {
                for j in 0..3 {
                    let dot: f64 = a.component(i).iter().zip(a.component(j)).map(|(p, q)| p * q).sum();
                    prop_assert!((dot - f64::from(u8::from(i == j))).abs() < 1e-8);
                }
            }
            prop_assert!(a.explained_variance.windows(2).all(|w| w[0] >= w[1] && w[1] >= 0.0));
        }

        #[test]
        fn angles_stay_in_range(seed in any::<u64>(), lo in -4.0f64..0.0, width in 0.01f64..8.0) {
            let train = random(10, 3, seed);
            let test = random(10, 3, seed.wrapping_add(1));
            let mut s = AngleScaler::new(lo, lo + width).unwrap();
            s.fit(&train).unwrap();
            for v in s.transform(&test).unwrap().data().iter().chain(s.transform(&train).unwrap().data()) {
                prop_assert!(f64::from(*v) >= lo && f64::from(*v) <= lo + width);
            }
        }
    }
}
