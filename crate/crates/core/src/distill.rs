//! Class-balanced k-means distillation.
//!
//! Each class is clustered independently and every centroid is replaced by
//! the nearest real member of its class, so the distilled set only contains
//! original samples.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, FeatureMatrix};
use crate::linalg::{sq_dist, sq_dists};

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("no input points")]
    EmptyInput,
    #[error("k = {k} exceeds the population of {population}{}", class.map(|c| format!(" in class {c}")).unwrap_or_default())]
    KExceedsPopulation {
        k: usize,
        population: usize,
        class: Option<u8>,
    },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("input has no labels")]
    MissingLabels,
    #[error("train fraction {0} is outside (0, 1)")]
    InvalidFraction(f64),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub k_per_class: usize,
    pub max_iters: usize,
    /// Stop once no centroid moves farther than this (Euclidean).
    pub tol: f64,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            k_per_class: 200,
            max_iters: 300,
            tol: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    /// Row-major k×d.
    pub centroids: Vec<f64>,
    pub dim: usize,
    pub assignments: Vec<usize>,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
    pub converged: bool,
}

impl KMeansResult {
    pub fn k(&self) -> usize {
        self.centroids.len() / self.dim.max(1)
    }

    pub fn centroid(&self, j: usize) -> &[f64] {
        &self.centroids[j * self.dim..(j + 1) * self.dim]
    }

    pub fn inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(0.0)
    }
}

fn to_f64(points: &FeatureMatrix) -> Vec<f64> {
    points.data().iter().map(|&v| f64::from(v)).collect()
}

/// k-means++ seeding: the first centre uniformly, the rest with probability ∝ D².
fn seed_centroids(x: &[f64], d: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = x.len() / d;
    let row = |i: usize| &x[i * d..(i + 1) * d];
    let mut centroids = Vec::with_capacity(k * d);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(row(first));
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(first))).collect();
    for _ in 1..k {
        let next = match WeightedIndex::new(&nearest) {
            Ok(w) => w.sample(rng),
            // All remaining mass is zero: duplicates only, any point will do.
            Err(_) => rng.gen_range(0..n),
        };
        centroids.extend_from_slice(row(next));
        let c = row(next);
        for (i, m) in nearest.iter_mut().enumerate() {
            *m = m.min(sq_dist(row(i), c));
        }
    }
    centroids
}

/// Lloyd iterations from k-means++ seeds.
pub fn kmeans(points: &FeatureMatrix, k: usize, cfg: &DistillConfig) -> Result<KMeansResult, DistillError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    kmeans_with_rng(points, k, cfg, &mut rng)
}

fn kmeans_with_rng(
    points: &FeatureMatrix,
    k: usize,
    cfg: &DistillConfig,
    rng: &mut ChaCha8Rng,
) -> Result<KMeansResult, DistillError> {
    let (n, d) = (points.rows(), points.cols());
    if n == 0 || d == 0 {
        return Err(DistillError::EmptyInput);
    }
    if k == 0 {
        return Err(DistillError::ZeroK);
    }
    if k > n {
        return Err(DistillError::KExceedsPopulation {
            k,
            population: n,
            class: None,
        });
    }
    let x = to_f64(points);
    let mut centroids = seed_centroids(&x, d, k, rng);
    let mut assignments = vec![0usize; n];
    let mut history = Vec::new();
    let mut converged = false;

    for _ in 0..cfg.max_iters.max(1) {
        let dist = sq_dists(&x, &centroids, d);
        for (i, a) in assignments.iter_mut().enumerate() {
            let row = &dist[i * k..(i + 1) * k];
            *a = (0..k).fold(0, |best, j| if row[j] < row[best] { j } else { best });
        }
        let point_cost: Vec<f64> = (0..n)
            .map(|i| sq_dist(&x[i * d..(i + 1) * d], &centroids[assignments[i] * d..][..d]))
            .collect();
        history.push(point_cost.iter().sum());

        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            for (s, v) in sums[a * d..(a + 1) * d].iter_mut().zip(&x[i * d..(i + 1) * d]) {
                *s += v;
            }
        }
        // Empty clusters take the points currently farthest from their centroid.
        let mut by_cost: Vec<usize> = (0..n).collect();
        by_cost.sort_by(|&a, &b| point_cost[b].total_cmp(&point_cost[a]).then(a.cmp(&b)));
        let mut donors = by_cost.into_iter();
        let mut shift: f64 = 0.0;
        for j in 0..k {
            let new: Vec<f64> = if counts[j] > 0 {
                sums[j * d..(j + 1) * d].iter().map(|s| s / counts[j] as f64).collect()
            } else {
                let p = donors.next().expect("k <= n");
                x[p * d..(p + 1) * d].to_vec()
            };
            shift = shift.max(sq_dist(&new, &centroids[j * d..(j + 1) * d]).sqrt());
            centroids[j * d..(j + 1) * d].copy_from_slice(&new);
        }
        if shift < cfg.tol {
            converged = true;
            break;
        }
    }
    // Final assignment against the settled centroids.
    let dist = sq_dists(&x, &centroids, d);
    for (i, a) in assignments.iter_mut().enumerate() {
        let row = &dist[i * k..(i + 1) * k];
        *a = (0..k).fold(0, |best, j| if row[j] < row[best] { j } else { best });
    }
    Ok(KMeansResult {
        centroids,
        dim: d,
        assignments,
        inertia_history: history,
        converged,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistilledSet {
    /// Class ids in ascending order, parallel to `indices`.
    pub classes: Vec<u8>,
    /// Selected original row indices per class, in centroid order.
    pub indices: Vec<Vec<usize>>,
    /// Selected rows, class by class, labelled.
    pub features: FeatureMatrix,
}

impl DistilledSet {
    pub fn labels(&self) -> &[u8] {
        self.features.labels().expect("distilled features are labelled")
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Original indices in row order of `features`.
    pub fn flat_indices(&self) -> Vec<usize> {
        self.indices.iter().flatten().copied().collect()
    }
}

/// Chooses, for each centroid in order, the nearest unused member
/// (ties to the lowest original index).
fn nearest_members(x: &FeatureMatrix, members: &[usize], km: &KMeansResult) -> Vec<usize> {
    let mut used = vec![false; members.len()];
    let mut picked = Vec::with_capacity(km.k());
    for j in 0..km.k() {
        let c = km.centroid(j);
        let mut best: Option<(f64, usize)> = None;
        for (pos, &orig) in members.iter().enumerate() {
            if used[pos] {
                continue;
            }
            let dd = sq_dist(&x.row_f64(orig), c);
            if best.map_or(true, |(bd, bp)| dd < bd || (dd == bd && orig < members[bp])) {
                best = Some((dd, pos));
            }
        }
        let (_, pos) = best.expect("k <= class population");
        used[pos] = true;
        picked.push(members[pos]);
    }
    picked
}

pub fn distill(data: &FeatureMatrix, cfg: &DistillConfig) -> Result<DistilledSet, DistillError> {
    let labels = data.labels().ok_or(DistillError::MissingLabels)?;
    if data.rows() == 0 {
        return Err(DistillError::EmptyInput);
    }
    if cfg.k_per_class == 0 {
        return Err(DistillError::ZeroK);
    }
    let mut classes: Vec<u8> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let members: Vec<Vec<usize>> = classes
        .iter()
        .map(|&c| (0..labels.len()).filter(|&i| labels[i] == c).collect())
        .collect();
    for (&c, m) in classes.iter().zip(&members) {
        if m.len() < cfg.k_per_class {
            return Err(DistillError::KExceedsPopulation {
                k: cfg.k_per_class,
                population: m.len(),
                class: Some(c),
            });
        }
    }
    let indices = classes
        .par_iter()
        .zip(&members)
        .map(|(&c, m)| {
            if m.len() == cfg.k_per_class {
                return Ok(m.clone());
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(u64::from(c));
            let sub = data.select_rows(m);
            let km = kmeans_with_rng(&sub, cfg.k_per_class, cfg, &mut rng)?;
            log::debug!(
                "class {c}: {} Lloyd iterations, inertia {:.4e}, converged {}",
                km.inertia_history.len(),
                km.inertia(),
                km.converged
            );
            Ok(nearest_members(data, m, &km))
        })
        .collect::<Result<Vec<_>, DistillError>>()?;
    let flat: Vec<usize> = indices.iter().flatten().copied().collect();
    let features = data.select_rows(&flat);
    Ok(DistilledSet {
        classes,
        indices,
        features,
    })
}

/// Row positions (into a labelled matrix) of a stratified train/test split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per class, `round(count * train_frac)` rows go to train, clamped so a class
/// with at least two members keeps one on each side. Both sides are returned
/// in ascending row order.
pub fn split(labels: &[u8], train_frac: f64, seed: u64) -> Result<Split, DistillError> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(DistillError::InvalidFraction(train_frac));
    }
    let mut classes: Vec<u8> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in classes {
        let mut rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::from(c));
        rows.shuffle(&mut rng);
        let mut n_train = (rows.len() as f64 * train_frac).round() as usize;
        if rows.len() >= 2 {
            n_train = n_train.clamp(1, rows.len() - 1);
        }
        train.extend_from_slice(&rows[..n_train]);
        test.extend_from_slice(&rows[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

/// Training-Gram entries for `n` training samples.
pub fn kernel_evaluations(n: usize) -> u128 {
    (n as u128) * (n as u128)
}
