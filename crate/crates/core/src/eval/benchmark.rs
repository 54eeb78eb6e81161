//! End-to-end quantum-vs-classical run: distill, split, reduce, Gram, CV,
//! best-fold model, held-out test.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{
    compute_metrics, confusion_csv, mean_std, stratified_kfold, AdvantageReport, EvalError, Fold, FoldPlan, Metrics,
    PeakMemory, Result,
};
use crate::dataset::{write_emb1, FeatureMatrix};
use crate::distill::{distill, kernel_evaluations, split, DistillConfig};
use crate::kernel::{gamma_scale, gram_train, json_hash, rbf_gram, GramMatrix, KernelConfig};
use crate::reduce::Reducer;
use crate::svm::{predict, train_multiclass, SvmModel, SvmParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub dataset: String,
    /// Feature representation label, e.g. `raw-pixels`.
    pub features: String,
    pub distill: DistillConfig,
    pub train_frac: f64,
    pub split_seed: u64,
    pub standardize: bool,
    pub pca_dim: Option<usize>,
    /// Target rotation-angle interval `[lo, hi]`.
    pub angle_range: [f64; 2],
    pub kernel: KernelConfig,
    pub svm: SvmParams,
    pub cv_folds: usize,
    pub cv_seed: u64,
    /// Single-threaded, and timing/memory columns left out of `summary.csv`.
    pub strict: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            dataset: "custom".into(),
            features: "raw-pixels".into(),
            distill: DistillConfig::default(),
            train_frac: 0.8,
            split_seed: 0,
            standardize: false,
            pca_dim: None,
            angle_range: [-std::f64::consts::PI, std::f64::consts::PI],
            kernel: KernelConfig::default(),
            svm: SvmParams::default(),
            cv_folds: 5,
            cv_seed: 0,
            strict: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: f64,
    pub precision: f64,
    pub f1: f64,
    pub auc: Option<f64>,
}

fn summarize(folds: &[Metrics]) -> (MetricSummary, MetricSummary) {
    let col = |f: &dyn Fn(&Metrics) -> f64| mean_std(&folds.iter().map(f).collect::<Vec<_>>());
    let (acc, acc_sd) = col(&|m| m.accuracy);
    let (prec, prec_sd) = col(&|m| m.precision);
    let (f1, f1_sd) = col(&|m| m.f1);
    let aucs: Vec<f64> = folds.iter().filter_map(|m| m.auc).collect();
    let (auc, auc_sd) = mean_std(&aucs);
    let has_auc = !aucs.is_empty();
    (
        MetricSummary {
            accuracy: acc,
            precision: prec,
            f1,
            auc: has_auc.then_some(auc),
        },
        MetricSummary {
            accuracy: acc_sd,
            precision: prec_sd,
            f1: f1_sd,
            auc: has_auc.then_some(auc_sd),
        },
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    /// `classical-rbf`, `quantum-sv` or `quantum-tn`.
    pub arm: String,
    pub folds: Vec<Metrics>,
    pub cv_mean: MetricSummary,
    pub cv_std: MetricSummary,
    /// Fold whose model is evaluated on the held-out test set.
    pub best_fold: usize,
    pub test: Metrics,
    /// Hash of the train and test feature matrices this arm consumed.
    pub feature_hash: String,
    /// Kernel provenance: Gram metadata for the quantum arm, per-fold gamma for RBF.
    pub kernel: serde_json::Value,
    pub best_model: SvmModel,
    pub wall_time_s: f64,
    pub peak_memory_mb: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: BenchmarkConfig,
    pub config_hash: String,
    pub pool_hash: String,
    pub pool_rows: usize,
    pub distilled_indices: Vec<Vec<usize>>,
    /// `features` when clustering ran on the pipeline features, `guide` when
    /// it ran on a separate representation of the same rows.
    pub distilled_on: String,
    pub train_rows: usize,
    pub test_rows: usize,
    /// Entries of the training Gram under this configuration.
    pub train_kernel_evaluations: u128,
    /// Entries of a training Gram over the undistilled pool.
    pub pool_kernel_evaluations: u128,
    pub folds: FoldPlan,
    pub classical: ArmReport,
    pub quantum: ArmReport,
    pub advantage: AdvantageReport,
    pub notes: Vec<String>,
}

fn notes(cfg: &BenchmarkConfig) -> Vec<String> {
    vec![
        "precision and F1 are macro averages over classes present in the ground truth".into(),
        "multiclass strategy: one-vs-one with majority vote, ties to the lower class id".into(),
        if cfg.svm.probability {
            "AUC from Platt-scaled, pairwise-coupled probabilities".into()
        } else {
            "AUC from per-class sums of signed one-vs-one decision values".into()
        },
        "reducer (standardize, PCA, angle scaling) is fit once on the full training split".into(),
        "RBF gamma = 1 / (d * Var(X)) over the rows each fold model is trained on".into(),
        "held-out test uses the fold model with the best validation accuracy (ties to the lowest fold)".into(),
        "both arms consume the same reduced feature matrices".into(),
        "CV folds are capped at the smallest training class; with fewer than two no CV metrics are reported".into(),
    ]
}

/// Caps `k` at the smallest class count. Below two folds there is no
/// validation data, so the single "fold" fits on every training row.
pub fn capped_fold_plan(y_train: &[u8], k: usize, seed: u64) -> Result<FoldPlan> {
    let mut counts = [0usize; 256];
    for &y in y_train {
        counts[usize::from(y)] += 1;
    }
    let smallest = counts.iter().copied().filter(|&c| c > 0).min().unwrap_or(0);
    let k_eff = k.min(smallest);
    if k_eff >= 2 {
        return stratified_kfold(y_train, k_eff, seed);
    }
    Ok(FoldPlan {
        k: 1,
        seed,
        folds: vec![Fold {
            train: (0..y_train.len()).collect(),
            val: Vec::new(),
        }],
    })
}

pub struct CvOutcome {
    /// Validation metrics per fold; empty when the plan has no validation rows.
    pub folds: Vec<Metrics>,
    /// Highest validation accuracy, ties to the lowest fold index.
    pub best_fold: usize,
    /// Model of `best_fold`, indexed by that fold's `train` rows.
    pub model: SvmModel,
}

/// Trains one model per fold on kernels from `fold_kernels(fold index, fold)`
/// (fit × fit, val × fit) and keeps the best by validation accuracy.
pub fn cross_validate(
    plan: &FoldPlan,
    y_train: &[u8],
    svm: &SvmParams,
    mut fold_kernels: impl FnMut(usize, &Fold) -> Result<(GramMatrix, GramMatrix)>,
) -> Result<CvOutcome> {
    let mut folds = Vec::with_capacity(plan.k);
    let mut models = Vec::with_capacity(plan.k);
    for (f, fold) in plan.folds.iter().enumerate() {
        let (k_fit, k_val) = fold_kernels(f, fold)?;
        let y_fit: Vec<u8> = fold.train.iter().map(|&i| y_train[i]).collect();
        let y_val: Vec<u8> = fold.val.iter().map(|&i| y_train[i]).collect();
        let model = train_multiclass(&k_fit, &y_fit, svm).map_err(|e| EvalError::stage("cv", e))?;
        if !fold.val.is_empty() {
            let pred = predict(&model, &k_val).map_err(|e| EvalError::stage("cv", e))?;
            folds.push(compute_metrics(&y_val, &pred.labels, &pred.scores, &model.classes)?);
        }
        models.push(model);
    }
    let best_fold = (0..folds.len()).fold(0, |b, f| if folds[f].accuracy > folds[b].accuracy { f } else { b });
    Ok(CvOutcome {
        folds,
        best_fold,
        model: models.swap_remove(best_fold),
    })
}

struct ArmOutcome {
    folds: Vec<Metrics>,
    best_fold: usize,
    test: Metrics,
    model: SvmModel,
}

/// Cross-validates, then evaluates the best fold model on the test kernel.
fn evaluate_arm(
    plan: &FoldPlan,
    y_train: &[u8],
    y_test: &[u8],
    svm: &SvmParams,
    fold_kernels: impl FnMut(usize, &Fold) -> Result<(GramMatrix, GramMatrix)>,
    mut test_kernel: impl FnMut(usize, &Fold) -> Result<GramMatrix>,
) -> Result<ArmOutcome> {
    let cv = cross_validate(plan, y_train, svm, fold_kernels)?;
    let k_test = test_kernel(cv.best_fold, &plan.folds[cv.best_fold])?;
    let pred = predict(&cv.model, &k_test).map_err(|e| EvalError::stage("test", e))?;
    let test = compute_metrics(y_test, &pred.labels, &pred.scores, &cv.model.classes)?;
    Ok(ArmOutcome {
        folds: cv.folds,
        best_fold: cv.best_fold,
        test,
        model: cv.model,
    })
}

fn arm_report(
    arm: &str,
    o: ArmOutcome,
    feature_hash: &str,
    kernel: serde_json::Value,
    start: Instant,
) -> ArmReport {
    let (cv_mean, cv_std) = summarize(&o.folds);
    ArmReport {
        arm: arm.into(),
        folds: o.folds,
        cv_mean,
        cv_std,
        best_fold: o.best_fold,
        test: o.test,
        feature_hash: feature_hash.into(),
        kernel,
        best_model: o.model,
        wall_time_s: start.elapsed().as_secs_f64(),
        peak_memory_mb: PeakMemory::peak_mb(),
    }
}

fn write_json<T: Serialize>(dir: Option<&Path>, name: &str, value: &T) -> Result<()> {
    if let Some(d) = dir {
        let s = serde_json::to_string_pretty(value).map_err(|e| EvalError::stage("report", e))?;
        fs::write(d.join(name), s)?;
    }
    Ok(())
}

/// Runs both arms on `pool` (a labelled feature matrix). When `out_dir` is
/// given, stage artifacts are written as they are produced so a failure
/// leaves the completed stages on disk; the final reports are written too.
pub fn run_benchmark(pool: &FeatureMatrix, cfg: &BenchmarkConfig, out_dir: Option<&Path>) -> Result<BenchmarkReport> {
    run_benchmark_guided(pool, None, cfg, out_dir)
}

/// As [`run_benchmark`], but when `guide` is given the prototypes are chosen
/// by clustering `guide` (e.g. raw pixels) and the matching rows of `pool`
/// (e.g. embeddings of the same images) go on through the pipeline.
pub fn run_benchmark_guided(
    pool: &FeatureMatrix,
    guide: Option<&FeatureMatrix>,
    cfg: &BenchmarkConfig,
    out_dir: Option<&Path>,
) -> Result<BenchmarkReport> {
    if cfg.strict {
        let pool_1 = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| EvalError::stage("setup", e))?;
        return pool_1.install(|| run_inner(pool, guide, cfg, out_dir));
    }
    run_inner(pool, guide, cfg, out_dir)
}

fn run_inner(
    pool: &FeatureMatrix,
    guide: Option<&FeatureMatrix>,
    cfg: &BenchmarkConfig,
    out_dir: Option<&Path>,
) -> Result<BenchmarkReport> {
    if let Some(d) = out_dir {
        fs::create_dir_all(d)?;
    }
    let space = guide.unwrap_or(pool);
    if space.rows() != pool.rows() || space.labels() != pool.labels() {
        return Err(EvalError::stage("distill", "guide and pool rows or labels differ"));
    }
    log::info!("distilling {} rows, k = {} per class", space.rows(), cfg.distill.k_per_class);
    let mut ds = distill(space, &cfg.distill).map_err(|e| EvalError::stage("distill", e))?;
    if guide.is_some() {
        ds.features = pool.select_rows(&ds.flat_indices());
    }
    write_json(out_dir, "distilled.json", &ds.indices)?;

    let labels = ds.labels().to_vec();
    let sp = split(&labels, cfg.train_frac, cfg.split_seed).map_err(|e| EvalError::stage("split", e))?;
    write_json(out_dir, "split.json", &sp)?;
    let raw_train = ds.features.select_rows(&sp.train);
    let raw_test = ds.features.select_rows(&sp.test);
    let y_train: Vec<u8> = sp.train.iter().map(|&i| labels[i]).collect();
    let y_test: Vec<u8> = sp.test.iter().map(|&i| labels[i]).collect();

    let reducer = Reducer::fit(
        &raw_train,
        cfg.standardize,
        cfg.pca_dim,
        (cfg.angle_range[0], cfg.angle_range[1]),
    )
    .map_err(|e| EvalError::stage("reduce", e))?;
    let x_train = reducer.transform(&raw_train).map_err(|e| EvalError::stage("reduce", e))?;
    let x_test = reducer.transform(&raw_test).map_err(|e| EvalError::stage("reduce", e))?;
    let feature_hash = json_hash(&(x_train.content_hash(), x_test.content_hash()));
    if let Some(d) = out_dir {
        write_emb1(&x_train, d.join("features_train.emb1")).map_err(|e| EvalError::stage("reduce", e))?;
        write_emb1(&x_test, d.join("features_test.emb1")).map_err(|e| EvalError::stage("reduce", e))?;
    }

    let plan = capped_fold_plan(&y_train, cfg.cv_folds, cfg.cv_seed)?;
    if plan.k < cfg.cv_folds {
        log::warn!("smallest training class allows only {} fold(s), requested {}", plan.k, cfg.cv_folds);
    }
    let n_train = x_train.rows();

    // Classical arm: RBF kernels per fold, gamma from the fold's fitting rows.
    PeakMemory::reset();
    let start = Instant::now();
    let mut gammas = vec![0.0; plan.k];
    let classical = evaluate_arm(
        &plan,
        &y_train,
        &y_test,
        &cfg.svm,
        |f, fold| {
            let fit = x_train.select_rows(&fold.train);
            let val = x_train.select_rows(&fold.val);
            gammas[f] = gamma_scale(&fit);
            let k_fit = rbf_gram(&fit, &fit, gammas[f]).map_err(|e| EvalError::stage("gram", e))?;
            let k_val = rbf_gram(&val, &fit, gammas[f]).map_err(|e| EvalError::stage("gram", e))?;
            Ok((k_fit, k_val))
        },
        |_, fold| {
            let fit = x_train.select_rows(&fold.train);
            rbf_gram(&x_test, &fit, gamma_scale(&fit)).map_err(|e| EvalError::stage("gram", e))
        },
    )?;
    let classical = arm_report(
        "classical-rbf",
        classical,
        &feature_hash,
        serde_json::json!({ "kernel": "rbf", "gamma": "scale", "fold_gamma": gammas }),
        start,
    );
    write_json(out_dir, "classical.json", &classical)?;

    // Quantum arm: one Gram over train ∪ test, sliced per fold.
    PeakMemory::reset();
    let start = Instant::now();
    let x_all = x_train.vstack(&x_test).map_err(|e| EvalError::stage("gram", e))?;
    let mut kcfg = cfg.kernel.clone();
    kcfg.strict |= cfg.strict;
    log::info!(
        "quantum Gram: {} rows, {} qubits, {} backend",
        x_all.rows(),
        kcfg.circuit.n_qubits,
        kcfg.backend
    );
    let k_all = gram_train(&x_all, &kcfg).map_err(|e| EvalError::stage("gram", e))?;
    if let Some(d) = out_dir {
        k_all.save(d.join("gram_quantum.emb1")).map_err(|e| EvalError::stage("gram", e))?;
    }
    let test_idx: Vec<usize> = (n_train..x_all.rows()).collect();
    let quantum = evaluate_arm(
        &plan,
        &y_train,
        &y_test,
        &cfg.svm,
        |_, fold| Ok((k_all.submatrix(&fold.train, &fold.train), k_all.submatrix(&fold.val, &fold.train))),
        |_, fold| Ok(k_all.submatrix(&test_idx, &fold.train)),
    )?;
    let meta = serde_json::to_value(&k_all.meta).map_err(|e| EvalError::stage("report", e))?;
    let quantum = arm_report(&format!("quantum-{}", kcfg.backend), quantum, &feature_hash, meta, start);

    if classical.feature_hash != quantum.feature_hash {
        return Err(EvalError::stage("report", "arms consumed different features"));
    }
    let advantage = AdvantageReport::new(classical.test.accuracy, quantum.test.accuracy);
    let report = BenchmarkReport {
        config: cfg.clone(),
        config_hash: json_hash(cfg),
        pool_hash: pool.content_hash(),
        pool_rows: pool.rows(),
        distilled_indices: ds.indices.clone(),
        distilled_on: if guide.is_some() { "guide" } else { "features" }.into(),
        train_rows: n_train,
        test_rows: x_test.rows(),
        train_kernel_evaluations: kernel_evaluations(n_train),
        pool_kernel_evaluations: kernel_evaluations(pool.rows()),
        folds: plan,
        classical,
        quantum,
        advantage,
        notes: notes(cfg),
    };
    if let Some(d) = out_dir {
        write_reports(&report, d)?;
    }
    Ok(report)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.4}"))
}

/// One CSV row per arm. Strict mode leaves out timing and memory.
pub fn summary_csv(r: &BenchmarkReport) -> String {
    let strict = r.config.strict;
    let mut s = String::from(
        "dataset,features,arm,cv_accuracy_mean,cv_accuracy_std,cv_precision,cv_f1,cv_auc,\
         test_accuracy,test_precision,test_f1,test_auc,advantage_pct",
    );
    if !strict {
        s.push_str(",time_s,memory_mb");
    }
    s.push('\n');
    for arm in [&r.classical, &r.quantum] {
        let adv = if std::ptr::eq(arm, &r.quantum) {
            format!("{:.2}", r.advantage.advantage_pct)
        } else {
            String::new()
        };
        s.push_str(&format!(
            "{},{},{},{:.4},{:.4},{:.4},{:.4},{},{:.4},{:.4},{:.4},{},{}",
            r.config.dataset,
            r.config.features,
            arm.arm,
            arm.cv_mean.accuracy,
            arm.cv_std.accuracy,
            arm.cv_mean.precision,
            arm.cv_mean.f1,
            fmt_opt(arm.cv_mean.auc),
            arm.test.accuracy,
            arm.test.precision,
            arm.test.f1,
            fmt_opt(arm.test.auc),
            adv
        ));
        if !strict {
            s.push_str(&format!(",{:.1},{}", arm.wall_time_s, arm.peak_memory_mb.map_or_else(String::new, |m| format!("{m:.0}"))));
        }
        s.push('\n');
    }
    s
}

/// Writes `report.json`, `summary.csv` and per-fold / test confusion matrices.
pub fn write_reports(r: &BenchmarkReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(Some(dir), "report.json", r)?;
    fs::write(dir.join("summary.csv"), summary_csv(r))?;
    for arm in [&r.classical, &r.quantum] {
        for (f, m) in arm.folds.iter().enumerate() {
            fs::write(dir.join(format!("confusion_{}_fold{f}.csv", arm.arm)), confusion_csv(m))?;
        }
        fs::write(dir.join(format!("confusion_{}_test.csv", arm.arm)), confusion_csv(&arm.test))?;
    }
    Ok(())
}
