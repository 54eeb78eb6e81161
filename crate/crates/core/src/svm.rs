//! C-SVC on precomputed kernels.
//!
//! Binary problems are solved with SMO on the dual
//! `min ½ αᵀQα − eᵀα, 0 ≤ α ≤ C, yᵀα = 0` with `Q = yyᵀ ∘ K`, choosing the
//! maximal violating pair each step. Multiclass is one-vs-one.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::GramMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum SvmError {
    #[error("training labels contain a single class")]
    SingleClassInput,
    #[error("kernel entry ({0}, {1}) is not finite")]
    NonFiniteKernel(usize, usize),
    #[error("dimension error: {0}")]
    DimError(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

type Result<T, E = SvmError> = std::result::Result<T, E>;

const TAU: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmParams {
    #[serde(rename = "C")]
    pub c: f64,
    /// Stop when the maximal KKT violation drops below this.
    pub tol_kkt: f64,
    pub max_iter: usize,
    /// Seeds the internal folds of Platt scaling.
    pub seed: u64,
    /// Fit Platt sigmoids and report coupled class probabilities as scores.
    pub probability: bool,
    /// Record the dual objective after every step.
    #[serde(default)]
    pub trace: bool,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            tol_kkt: 1e-3,
            max_iter: 10_000_000,
            seed: 0,
            probability: false,
            trace: false,
        }
    }
}

impl SvmParams {
    fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(SvmError::InvalidParams(format!("C must be positive, got {}", self.c)));
        }
        if !(self.tol_kkt > 0.0) {
            return Err(SvmError::InvalidParams(format!("tol_kkt must be positive, got {}", self.tol_kkt)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryModel {
    /// Positions (into the training rows of this problem) with `α > 0`.
    pub support: Vec<usize>,
    /// `α_i y_i` for each support vector.
    pub coef: Vec<f64>,
    /// Decision value is `Σ coef_k K(x, sv_k) + bias`.
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Maximal KKT violation at exit.
    pub kkt_gap: f64,
    /// Dual objective `eᵀα − ½αᵀQα` at exit.
    pub objective: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objective_trace: Vec<f64>,
}

impl BinaryModel {
    /// Decision value for one kernel row against this problem's training rows.
    pub fn decision(&self, krow: impl Fn(usize) -> f64) -> f64 {
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(&s, &c)| c * krow(s))
            .sum::<f64>()
            + self.bias
    }

    /// Dense `α` over `n` training rows.
    pub fn alpha(&self, y: &[f64]) -> Vec<f64> {
        let mut a = vec![0.0; y.len()];
        for (&s, &c) in self.support.iter().zip(&self.coef) {
            a[s] = c * y[s];
        }
        a
    }
}

fn check_kernel(k: &GramMatrix, n: usize) -> Result<()> {
    if !k.is_square() || k.rows != n {
        return Err(SvmError::DimError(format!(
            "kernel is {}×{} for {n} labels",
            k.rows, k.cols
        )));
    }
    if let Some(p) = k.data.iter().position(|v| !v.is_finite()) {
        return Err(SvmError::NonFiniteKernel(p / n, p % n));
    }
    Ok(())
}

/// Trains a binary C-SVC; `y` holds ±1.
pub fn smo_train_binary(k: &GramMatrix, y: &[f64], p: &SvmParams) -> Result<BinaryModel> {
    p.validate()?;
    check_kernel(k, y.len())?;
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(SvmError::InvalidParams("labels must be ±1".into()));
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(SvmError::SingleClassInput);
    }
    Ok(smo(y.len(), |i, j| k.get(i, j), y, p.c, p))
}

/// Core solver over an index-addressed kernel.
fn smo(n: usize, kern: impl Fn(usize, usize) -> f64, y: &[f64], c: f64, p: &SvmParams) -> BinaryModel {
    let q = |i: usize, j: usize| y[i] * y[j] * kern(i, j);
    let qd: Vec<f64> = (0..n).map(|i| kern(i, i)).collect();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut trace = Vec::new();
    let objective = |alpha: &[f64], grad: &[f64]| -> f64 {
        -0.5 * alpha.iter().zip(grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>()
    };
    let up = |t: usize, a: &[f64]| (y[t] > 0.0 && a[t] < c) || (y[t] < 0.0 && a[t] > 0.0);
    let low = |t: usize, a: &[f64]| (y[t] > 0.0 && a[t] > 0.0) || (y[t] < 0.0 && a[t] < c);

    let mut iterations = 0;
    let mut gap;
    loop {
        // Maximal violating pair.
        let (mut i, mut gmax) = (usize::MAX, f64::NEG_INFINITY);
        let (mut j, mut gmin) = (usize::MAX, f64::INFINITY);
        for t in 0..n {
            let v = -y[t] * grad[t];
            if up(t, &alpha) && v > gmax {
                gmax = v;
                i = t;
            }
            if low(t, &alpha) && v < gmin {
                gmin = v;
                j = t;
            }
        }
        gap = gmax - gmin;
        if i == usize::MAX || j == usize::MAX || gap < p.tol_kkt || iterations >= p.max_iter {
            break;
        }
        iterations += 1;

        let (ai, aj) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (qd[i] + qd[j] + 2.0 * q(i, j)).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (qd[i] + qd[j] - 2.0 * q(i, j)).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - ai, alpha[j] - aj);
        for (t, g) in grad.iter_mut().enumerate() {
            *g += q(t, i) * di + q(t, j) * dj;
        }
        if p.trace {
            trace.push(objective(&alpha, &grad));
        }
    }
    if gap >= p.tol_kkt && iterations >= p.max_iter {
        log::warn!("SMO stopped after {iterations} iterations with KKT gap {gap:.3e}");
    }

    // Offset: mean of y·G over free variables, else the midpoint of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 { sum_free / n_free as f64 } else { 0.5 * (ub + lb) };

    let support: Vec<usize> = (0..n).filter(|&t| alpha[t] > 0.0).collect();
    BinaryModel {
        coef: support.iter().map(|&t| alpha[t] * y[t]).collect(),
        support,
        bias: -rho,
        iterations,
        converged: gap < p.tol_kkt,
        kkt_gap: gap.max(0.0),
        objective: objective(&alpha, &grad),
        objective_trace: trace,
    }
}

/// Platt sigmoid `P(y=1|f) = 1 / (1 + exp(A f + B))`, fitted by Newton's method
/// with backtracking on regularized targets.
pub fn sigmoid_train(dec: &[f64], positive: &[bool]) -> (f64, f64) {
    let prior1 = positive.iter().filter(|&&p| p).count() as f64;
    let prior0 = positive.len() as f64 - prior1;
    let (hi, lo) = ((prior1 + 1.0) / (prior1 + 2.0), 1.0 / (prior0 + 2.0));
    let t: Vec<f64> = positive.iter().map(|&p| if p { hi } else { lo }).collect();
    let (mut a, mut b) = (0.0, ((prior0 + 1.0) / (prior1 + 1.0)).ln());
    let loss = |a: f64, b: f64| -> f64 {
        dec.iter()
            .zip(&t)
            .map(|(&f, &ti)| {
                let z = f * a + b;
                if z >= 0.0 {
                    ti * z + (-z).exp().ln_1p()
                } else {
                    (ti - 1.0) * z + z.exp().ln_1p()
                }
            })
            .sum()
    };
    let mut fval = loss(a, b);
    for _ in 0..100 {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (1e-12, 1e-12, 0.0, 0.0, 0.0);
        for (&f, &ti) in dec.iter().zip(&t) {
            let z = f * a + b;
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = ti - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = loss(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < 1e-10 {
            break;
        }
    }
    (a, b)
}

pub fn sigmoid_predict(dec: f64, a: f64, b: f64) -> f64 {
    let z = dec * a + b;
    if z >= 0.0 {
        (-z).exp() / (1.0 + (-z).exp())
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// Couples pairwise probabilities `r[i][j] ≈ P(i | i or j)` into class
/// probabilities (Wu, Lin & Weng's second method).
pub fn couple_pairwise(r: &[Vec<f64>]) -> Vec<f64> {
    let k = r.len();
    let mut qm = vec![vec![0.0; k]; k];
    for t in 0..k {
        for j in 0..k {
            if j != t {
                qm[t][t] += r[j][t] * r[j][t];
                qm[t][j] = -r[j][t] * r[t][j];
            }
        }
    }
    let mut p = vec![1.0 / k as f64; k];
    let mut qp = vec![0.0; k];
    let eps = 0.005 / k as f64;
    for _ in 0..100.max(k) {
        let mut pqp = 0.0;
        for t in 0..k {
            qp[t] = (0..k).map(|j| qm[t][j] * p[j]).sum();
            pqp += p[t] * qp[t];
        }
        if qp.iter().all(|v| (v - pqp).abs() < eps) {
            break;
        }
        for t in 0..k {
            let diff = (-qp[t] + pqp) / qm[t][t];
            p[t] += diff;
            pqp = (pqp + diff * (diff * qm[t][t] + 2.0 * qp[t])) / (1.0 + diff) / (1.0 + diff);
            for j in 0..k {
                qp[j] = (qp[j] + diff * qm[t][j]) / (1.0 + diff);
                p[j] /= 1.0 + diff;
            }
        }
    }
    p
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairModel {
    /// Class labelled +1 (the lower id).
    pub positive: u8,
    pub negative: u8,
    /// Training rows (of the full set) forming this problem, in order.
    pub rows: Vec<usize>,
    pub model: BinaryModel,
    /// Platt coefficients `(A, B)` when probability estimates are enabled.
    pub platt: Option<(f64, f64)>,
}

impl PairModel {
    pub fn decision(&self, krow: &[f64]) -> f64 {
        self.model.decision(|s| krow[self.rows[s]])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub classes: Vec<u8>,
    pub pairs: Vec<PairModel>,
    pub n_train: usize,
    /// Content hash of the training kernel.
    pub kernel_hash: String,
    pub params: SvmParams,
    /// Always `"ovo"`.
    pub multiclass: String,
}

impl SvmModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}

/// Platt sigmoid for one pair problem from decision values of an internal
/// 5-fold cross-validation.
fn platt_for_pair(k: &GramMatrix, rows: &[usize], y: &[f64], p: &SvmParams, pair_seed: u64) -> (f64, f64) {
    let n = rows.len();
    let folds = 5.min(n);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    rng.set_stream(pair_seed);
    perm.shuffle(&mut rng);
    let mut dec = vec![0.0; n];
    for f in 0..folds {
        let (lo, hi) = (f * n / folds, (f + 1) * n / folds);
        let held: Vec<usize> = perm[lo..hi].to_vec();
        let fit: Vec<usize> = perm[..lo].iter().chain(&perm[hi..]).copied().collect();
        let yf: Vec<f64> = fit.iter().map(|&t| y[t]).collect();
        let (has_pos, has_neg) = (yf.contains(&1.0), yf.contains(&-1.0));
        for &t in &held {
            dec[t] = match (has_pos, has_neg) {
                (true, false) => 1.0,
                (false, true) => -1.0,
                _ => 0.0,
            };
        }
        if !(has_pos && has_neg) {
            continue;
        }
        let inner = SvmParams { probability: false, trace: false, ..p.clone() };
        let m = smo(fit.len(), |a, b| k.get(rows[fit[a]], rows[fit[b]]), &yf, p.c, &inner);
        for &t in &held {
            dec[t] = m.decision(|s| k.get(rows[t], rows[fit[s]]));
        }
    }
    let positive: Vec<bool> = y.iter().map(|&v| v > 0.0).collect();
    sigmoid_train(&dec, &positive)
}

/// One-vs-one training over all class pairs, in ascending pair order.
pub fn train_multiclass(k: &GramMatrix, labels: &[u8], p: &SvmParams) -> Result<SvmModel> {
    p.validate()?;
    check_kernel(k, labels.len())?;
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(SvmError::SingleClassInput);
    }
    let pair_ids: Vec<(u8, u8)> = classes
        .iter()
        .enumerate()
        .flat_map(|(a, &ca)| classes[a + 1..].iter().map(move |&cb| (ca, cb)))
        .collect();
    let pairs = pair_ids
        .par_iter()
        .map(|&(pos, neg)| {
            let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == pos || labels[i] == neg).collect();
            let y: Vec<f64> = rows.iter().map(|&i| if labels[i] == pos { 1.0 } else { -1.0 }).collect();
            let model = smo(rows.len(), |a, b| k.get(rows[a], rows[b]), &y, p.c, p);
            let platt = p
                .probability
                .then(|| platt_for_pair(k, &rows, &y, p, u64::from(pos) << 8 | u64::from(neg)));
            PairModel { positive: pos, negative: neg, rows, model, platt }
        })
        .collect();
    Ok(SvmModel {
        classes,
        pairs,
        n_train: labels.len(),
        kernel_hash: k.content_hash(),
        params: p.clone(),
        multiclass: "ovo".into(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub labels: Vec<u8>,
    /// `scores[i][c]` for class `model.classes[c]`: summed signed decision
    /// values, or coupled probabilities when the model has Platt sigmoids.
    pub scores: Vec<Vec<f64>>,
    pub votes: Vec<Vec<u32>>,
}

pub fn predict(model: &SvmModel, kcross: &GramMatrix) -> Result<Prediction> {
    if kcross.cols != model.n_train {
        return Err(SvmError::DimError(format!(
            "cross kernel has {} columns, model was trained on {} rows",
            kcross.cols, model.n_train
        )));
    }
    let nc = model.classes.len();
    let pos_of = |c: u8| model.classes.iter().position(|&x| x == c).expect("known class");
    let rows: Vec<(u8, Vec<f64>, Vec<u32>)> = (0..kcross.rows)
        .into_par_iter()
        .map(|i| {
            let krow = kcross.row(i);
            let mut votes = vec![0u32; nc];
            let mut score = vec![0.0; nc];
            let mut r = vec![vec![0.0; nc]; nc];
            for pair in &model.pairs {
                let (a, b) = (pos_of(pair.positive), pos_of(pair.negative));
                let d = pair.decision(krow);
                if d > 0.0 {
                    votes[a] += 1;
                } else {
                    votes[b] += 1;
                }
                score[a] += d;
                score[b] -= d;
                if let Some((pa, pb)) = pair.platt {
                    let pr = sigmoid_predict(d, pa, pb).clamp(1e-7, 1.0 - 1e-7);
                    r[a][b] = pr;
                    r[b][a] = 1.0 - pr;
                }
            }
            if model.params.probability && model.pairs.iter().all(|p| p.platt.is_some()) {
                score = couple_pairwise(&r);
            }
            // Most votes; ties go to the lower class id.
            let best = (0..nc).fold(0, |b, c| if votes[c] > votes[b] { c } else { b });
            (model.classes[best], score, votes)
        })
        .collect();
    let mut out = Prediction { labels: Vec::new(), scores: Vec::new(), votes: Vec::new() };
    for (l, s, v) in rows {
        out.labels.push(l);
        out.scores.push(s);
        out.votes.push(v);
    }
    Ok(out)
}
