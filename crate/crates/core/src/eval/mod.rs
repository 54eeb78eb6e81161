//! Cross-validation plans, classification metrics and quantum-vs-classical reports.

mod benchmark;
mod memory;

pub use benchmark::{capped_fold_plan, cross_validate, summary_csv, CvOutcome, run_benchmark, run_benchmark_guided, write_reports, ArmReport, BenchmarkConfig, BenchmarkReport};
pub use memory::PeakMemory;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("class {class} has {count} members, fewer than k = {k}")]
    ClassTooSmall { class: u8, count: usize, k: usize },
    #[error("k must be at least 2, got {0}")]
    InvalidK(usize),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EvalError {
    pub fn stage(stage: &str, err: impl std::fmt::Display) -> Self {
        EvalError::Stage {
            stage: stage.into(),
            message: err.to_string(),
        }
    }
}

type Result<T, E = EvalError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

/// Shuffles each class under `seed` and deals its members round-robin over
/// the folds. The starting fold rotates from class to class so fold sizes
/// stay within one of each other.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(EvalError::InvalidK(k));
    }
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut assignment = vec![0usize; labels.len()];
    let mut offset = 0;
    for c in classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.len() < k {
            return Err(EvalError::ClassTooSmall {
                class: c,
                count: members.len(),
                k,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::from(c));
        members.shuffle(&mut rng);
        for (p, &i) in members.iter().enumerate() {
            assignment[i] = (offset + p) % k;
        }
        offset = (offset + members.len()) % k;
    }
    let folds = (0..k)
        .map(|f| Fold {
            train: (0..labels.len()).filter(|&i| assignment[i] != f).collect(),
            val: (0..labels.len()).filter(|&i| assignment[i] == f).collect(),
        })
        .collect();
    Ok(FoldPlan { k, seed, folds })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub accuracy: f64,
    /// Macro average over classes present in `y_true`.
    pub precision: f64,
    pub f1: f64,
    /// Macro one-vs-rest ROC AUC; `None` when no class has both positives and negatives.
    pub auc: Option<f64>,
    pub classes: Vec<u8>,
    /// `confusion[t][p]`: true class `classes[t]` predicted as `classes[p]`.
    pub confusion: Vec<Vec<u64>>,
}

/// ROC AUC of `scores` for `positive`, via the Mann–Whitney rank statistic
/// with tied scores sharing their average rank.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += (i..=j).filter(|&t| positive[order[t]]).count() as f64 * avg;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// `scores[i][c]` belongs to `score_classes[c]`.
pub fn compute_metrics(
    y_true: &[u8],
    y_pred: &[u8],
    scores: &[Vec<f64>],
    score_classes: &[u8],
) -> Result<Metrics> {
    if y_true.len() != y_pred.len() || y_true.len() != scores.len() {
        return Err(EvalError::LengthMismatch(format!(
            "{} true labels, {} predictions, {} score rows",
            y_true.len(),
            y_pred.len(),
            scores.len()
        )));
    }
    if let Some(r) = scores.iter().find(|r| r.len() != score_classes.len()) {
        return Err(EvalError::LengthMismatch(format!(
            "score row of length {} for {} classes",
            r.len(),
            score_classes.len()
        )));
    }
    let mut classes: Vec<u8> = y_true.iter().chain(y_pred).chain(score_classes).copied().collect();
    classes.sort_unstable();
    classes.dedup();
    let pos = |c: u8| classes.binary_search(&c).expect("collected");
    let nc = classes.len();
    let mut confusion = vec![vec![0u64; nc]; nc];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        confusion[pos(t)][pos(p)] += 1;
    }
    let n = y_true.len();
    let correct = y_true.iter().zip(y_pred).filter(|(t, p)| t == p).count();
    let accuracy = if n == 0 { 0.0 } else { correct as f64 / n as f64 };

    let present: Vec<usize> = (0..nc).filter(|&c| confusion[c].iter().sum::<u64>() > 0).collect();
    let (mut prec_sum, mut f1_sum) = (0.0, 0.0);
    for &c in &present {
        let tp = confusion[c][c] as f64;
        let predicted: u64 = (0..nc).map(|t| confusion[t][c]).sum();
        let actual: u64 = confusion[c].iter().sum();
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let recall = tp / actual as f64;
        prec_sum += precision;
        f1_sum += if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
    }
    let denom = present.len().max(1) as f64;

    let aucs: Vec<f64> = present
        .iter()
        .filter_map(|&c| {
            let col = score_classes.iter().position(|&s| s == classes[c])?;
            let s: Vec<f64> = scores.iter().map(|r| r[col]).collect();
            let positive: Vec<bool> = y_true.iter().map(|&t| t == classes[c]).collect();
            roc_auc(&s, &positive)
        })
        .collect();
    let auc = (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64);
    Ok(Metrics {
        n,
        accuracy,
        precision: prec_sum / denom,
        f1: f1_sum / denom,
        auc,
        classes,
        confusion,
    })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvantageReport {
    pub classical_accuracy: f64,
    pub quantum_accuracy: f64,
    /// `(quantum − classical) / classical · 100`.
    pub advantage_pct: f64,
}

impl AdvantageReport {
    pub fn new(classical_accuracy: f64, quantum_accuracy: f64) -> Self {
        Self {
            classical_accuracy,
            quantum_accuracy,
            advantage_pct: (quantum_accuracy - classical_accuracy) / classical_accuracy * 100.0,
        }
    }
}

/// Writes a confusion matrix as CSV with class ids on both axes.
pub fn confusion_csv(m: &Metrics) -> String {
    let mut s = String::from("true\\pred");
    for c in &m.classes {
        s.push_str(&format!(",{c}"));
    }
    s.push('\n');
    for (c, row) in m.classes.iter().zip(&m.confusion) {
        s.push_str(&c.to_string());
        for v in row {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    s
}
