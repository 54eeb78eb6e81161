//! Subcommand bodies. Each stage reads and writes EMB1 + JSON artifacts in
//! the output directory and stamps them with its configuration hash.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use qksvm::dataset::{flatten_pixels, load_idx_pair, read_emb1, write_emb1, FeatureMatrix, ImageSet};
use qksvm::distill::{distill, split};
use qksvm::eval::{
    capped_fold_plan, compute_metrics, confusion_csv, cross_validate, run_benchmark_guided, summary_csv, FoldPlan, Metrics,
};
use qksvm::kernel::{gram_cross, gram_train, json_hash, kernel_value, Backend, GramMatrix, KernelConfig};
use qksvm::reduce::Reducer;
use qksvm::svm::{predict, SvmModel};

use crate::config::{DistillSpace, FeatureSource, PipelineConfig};
use crate::CliError;

pub const DISTILLED: &str = "distilled.emb1";
pub const TRAIN: &str = "train.emb1";
pub const TEST: &str = "test.emb1";
pub const GRAM_TRAIN: &str = "gram_train.emb1";
pub const GRAM_TEST: &str = "gram_test.emb1";
pub const MODEL: &str = "model.json";
pub const METRICS: &str = "metrics.json";

/// Sidecar written next to every EMB1 feature artifact as `<file>.json`.
#[derive(Debug, Serialize, Deserialize)]
struct Provenance<T> {
    stage: String,
    config_hash: String,
    content_hash: String,
    #[serde(flatten)]
    extra: T,
}

fn sidecar(path: &Path) -> PathBuf {
    GramMatrix::sidecar_path(path)
}

fn stage_err(stage: &'static str) -> impl Fn(&dyn std::fmt::Display) -> CliError {
    move |e| CliError::StageFailure {
        stage: stage.into(),
        message: e.to_string(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let s = serde_json::to_string_pretty(value).map_err(|e| stage_err("io")(&e))?;
    fs::write(path, s).map_err(|e| stage_err("io")(&e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let s = fs::read_to_string(path).map_err(|_| CliError::MissingArtifact(path.to_path_buf()))?;
    serde_json::from_str(&s).map_err(|e| CliError::ConfigInvalid(format!("{}: {e}", path.display())))
}

/// Refuses an artifact produced under a different configuration unless forced.
fn check_hash(path: &Path, found: &str, expected: &str, force: bool) -> Result<(), CliError> {
    if found == expected {
        return Ok(());
    }
    if force {
        log::warn!("{}: config hash mismatch ignored (--force)", path.display());
        return Ok(());
    }
    Err(CliError::HashMismatch {
        path: path.to_path_buf(),
        expected: expected.into(),
        found: found.into(),
    })
}

fn save_features<T: Serialize>(
    m: &FeatureMatrix,
    path: &Path,
    stage: &str,
    config_hash: &str,
    extra: T,
) -> Result<(), CliError> {
    write_emb1(m, path).map_err(|e| stage_err("io")(&e))?;
    let p = Provenance {
        stage: stage.into(),
        config_hash: config_hash.into(),
        content_hash: m.content_hash(),
        extra,
    };
    write_json(&sidecar(path), &p)
}

fn load_features<T: DeserializeOwned>(path: &Path, expected: &str, force: bool) -> Result<(FeatureMatrix, T), CliError> {
    if !path.exists() {
        return Err(CliError::MissingArtifact(path.to_path_buf()));
    }
    let p: Provenance<T> = read_json(&sidecar(path))?;
    check_hash(path, &p.config_hash, expected, force)?;
    let m = read_emb1(path).map_err(|e| CliError::ConfigInvalid(format!("{}: {e}", path.display())))?;
    Ok((m, p.extra))
}

fn load_gram(path: &Path, expected: &str, force: bool) -> Result<GramMatrix, CliError> {
    if !path.exists() {
        return Err(CliError::MissingArtifact(path.to_path_buf()));
    }
    let g = GramMatrix::load(path).map_err(|e| CliError::ConfigInvalid(format!("{}: {e}", path.display())))?;
    check_hash(path, g.meta.config_hash.as_deref().unwrap_or(""), expected, force)?;
    Ok(g)
}

fn require_inputs(cfg: &PipelineConfig) -> Result<(), CliError> {
    match cfg.input_files().into_iter().find(|f| !f.exists()) {
        Some(f) => Err(CliError::MissingArtifact(f)),
        None => Ok(()),
    }
}

/// Labelled feature pool the pipeline starts from, plus the pixel matrix
/// when distillation clusters on pixels instead of the pool.
pub fn load_inputs(cfg: &PipelineConfig) -> Result<(FeatureMatrix, Option<FeatureMatrix>), CliError> {
    let pool = load_pool(cfg)?;
    let guide = match (cfg.features.distill_on, cfg.features.source) {
        (DistillSpace::Pixels, FeatureSource::Emb1) => Some(flatten_pixels(&load_images(cfg)?)),
        _ => None,
    };
    Ok((pool, guide))
}

fn load_images(cfg: &PipelineConfig) -> Result<ImageSet, CliError> {
    require_inputs(cfg)?;
    let err = stage_err("load");
    let mut images = None;
    for (img, lbl) in cfg.idx_files() {
        let set = load_idx_pair(&img, &lbl, &img.display().to_string()).map_err(|e| err(&e))?;
        images = Some(match images {
            None => set,
            Some(prev) => ImageSet::concat(prev, set).map_err(|e| err(&e))?,
        });
    }
    images.ok_or_else(|| CliError::ConfigInvalid("no dataset files".into()))
}

fn load_pool(cfg: &PipelineConfig) -> Result<FeatureMatrix, CliError> {
    let err = stage_err("load");
    let images = load_images(cfg)?;
    match cfg.features.source {
        FeatureSource::Pixels => Ok(flatten_pixels(&images)),
        FeatureSource::Emb1 => {
            let path = cfg.features.path.as_ref().expect("validated");
            let m = read_emb1(path).map_err(|e| err(&e))?;
            if m.rows() != images.len() {
                return Err(CliError::ConfigInvalid(format!(
                    "{} has {} rows but the dataset has {} images",
                    path.display(),
                    m.rows(),
                    images.len()
                )));
            }
            if m.labels().is_some() {
                return Ok(m);
            }
            m.with_labels(Some(images.labels.clone())).map_err(|e| err(&e))
        }
    }
}

#[derive(Serialize, Deserialize)]
struct DistillExtra {
    /// Selected pool rows, per class.
    indices: Vec<Vec<usize>>,
    classes: Vec<u8>,
}

pub fn distill_stage(cfg: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    let (pool, guide) = load_inputs(cfg)?;
    let mut ds = distill(guide.as_ref().unwrap_or(&pool), &cfg.distill).map_err(|e| stage_err("distill")(&e))?;
    if guide.is_some() {
        ds.features = pool.select_rows(&ds.flat_indices());
    }
    let h = cfg.stage_hashes();
    let extra = DistillExtra {
        indices: ds.indices.clone(),
        classes: ds.classes.clone(),
    };
    save_features(&ds.features, &out.join(DISTILLED), "distill", &h.distill, extra)?;
    log::info!("distilled {} of {} rows into {}", ds.len(), pool.rows(), out.join(DISTILLED).display());
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct SplitExtra {
    /// Rows of the distilled set on this side of the split.
    rows: Vec<usize>,
}

pub fn reduce_stage(cfg: &PipelineConfig, out: &Path, force: bool) -> Result<(), CliError> {
    let h = cfg.stage_hashes();
    let (ds, _): (FeatureMatrix, serde_json::Value) = load_features(&out.join(DISTILLED), &h.distill, force)?;
    let err = stage_err("reduce");
    let labels = ds.labels().ok_or_else(|| err(&"distilled set has no labels"))?.to_vec();
    let sp = split(&labels, cfg.reduce.train_frac, cfg.reduce.split_seed).map_err(|e| err(&e))?;
    let (raw_train, raw_test) = (ds.select_rows(&sp.train), ds.select_rows(&sp.test));
    let r = &cfg.reduce;
    let reducer = Reducer::fit(&raw_train, r.standardize, r.pca_dim, (r.angle_range[0], r.angle_range[1]))
        .map_err(|e| err(&e))?;
    let train = reducer.transform(&raw_train).map_err(|e| err(&e))?;
    let test = reducer.transform(&raw_test).map_err(|e| err(&e))?;
    save_features(&train, &out.join(TRAIN), "reduce", &h.reduce, SplitExtra { rows: sp.train })?;
    save_features(&test, &out.join(TEST), "reduce", &h.reduce, SplitExtra { rows: sp.test })?;
    write_json(&out.join("reducer.json"), &serde_json::json!({ "config_hash": h.reduce, "reducer": reducer }))?;
    log::info!("reduced to {} features: {} train / {} test rows", train.cols(), train.rows(), test.rows());
    Ok(())
}

pub fn gram_stage(cfg: &PipelineConfig, out: &Path, force: bool, strict: bool) -> Result<(), CliError> {
    let h = cfg.stage_hashes();
    let (train, _): (FeatureMatrix, serde_json::Value) = load_features(&out.join(TRAIN), &h.reduce, force)?;
    let (test, _): (FeatureMatrix, serde_json::Value) = load_features(&out.join(TEST), &h.reduce, force)?;
    let kcfg = cfg.kernel_config(strict);
    let err = stage_err("gram");
    let mut k_train = gram_train(&train, &kcfg).map_err(|e| err(&e))?;
    k_train.meta.config_hash = Some(h.gram.clone());
    k_train.save(out.join(GRAM_TRAIN)).map_err(|e| err(&e))?;
    let mut k_test = gram_cross(&test, &train, &kcfg).map_err(|e| err(&e))?;
    k_test.meta.config_hash = Some(h.gram.clone());
    k_test.save(out.join(GRAM_TEST)).map_err(|e| err(&e))?;
    log::info!(
        "Gram matrices {}x{} and {}x{} in {:.1} s",
        k_train.rows,
        k_train.cols,
        k_test.rows,
        k_test.cols,
        k_train.meta.wall_time_s + k_test.meta.wall_time_s
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ModelArtifact {
    config_hash: String,
    folds: FoldPlan,
    fold_metrics: Vec<Metrics>,
    best_fold: usize,
    /// Training rows the model's kernel columns refer to.
    fit_rows: Vec<usize>,
    model: SvmModel,
}

pub fn train_stage(cfg: &PipelineConfig, out: &Path, force: bool) -> Result<(), CliError> {
    let h = cfg.stage_hashes();
    let (train, _): (FeatureMatrix, serde_json::Value) = load_features(&out.join(TRAIN), &h.reduce, force)?;
    let k = load_gram(&out.join(GRAM_TRAIN), &h.gram, force)?;
    let y = train.labels().ok_or_else(|| stage_err("train")(&"training features have no labels"))?;
    let err = stage_err("train");
    let plan = capped_fold_plan(y, cfg.cv.folds, cfg.cv.seed).map_err(|e| err(&e))?;
    let cv = cross_validate(&plan, y, &cfg.svm, |_, f| {
        Ok((k.submatrix(&f.train, &f.train), k.submatrix(&f.val, &f.train)))
    })
    .map_err(|e| err(&e))?;
    for (i, m) in cv.folds.iter().enumerate() {
        log::info!("fold {i}: accuracy {:.4}", m.accuracy);
    }
    let fit_rows = plan.folds[cv.best_fold].train.clone();
    let artifact = ModelArtifact {
        config_hash: h.train,
        folds: plan,
        fold_metrics: cv.folds,
        best_fold: cv.best_fold,
        fit_rows,
        model: cv.model,
    };
    write_json(&out.join(MODEL), &artifact)
}

pub fn evaluate_stage(cfg: &PipelineConfig, out: &Path, force: bool) -> Result<Metrics, CliError> {
    let h = cfg.stage_hashes();
    let artifact: ModelArtifact = read_json(&out.join(MODEL))?;
    check_hash(&out.join(MODEL), &artifact.config_hash, &h.train, force)?;
    let (test, _): (FeatureMatrix, serde_json::Value) = load_features(&out.join(TEST), &h.reduce, force)?;
    let k = load_gram(&out.join(GRAM_TEST), &h.gram, force)?;
    let err = stage_err("evaluate");
    let y = test.labels().ok_or_else(|| err(&"test features have no labels"))?;
    let all: Vec<usize> = (0..k.rows).collect();
    let kx = k.submatrix(&all, &artifact.fit_rows);
    let pred = predict(&artifact.model, &kx).map_err(|e| err(&e))?;
    let m = compute_metrics(y, &pred.labels, &pred.scores, &artifact.model.classes).map_err(|e| err(&e))?;
    write_json(&out.join(METRICS), &serde_json::json!({ "config_hash": h.train, "test": m }))?;
    fs::write(out.join("confusion_test.csv"), confusion_csv(&m)).map_err(|e| err(&e))?;
    Ok(m)
}

pub fn benchmark_stage(cfg: &PipelineConfig, out: &Path, strict: bool) -> Result<String, CliError> {
    let (pool, guide) = load_inputs(cfg)?;
    let bcfg = cfg.benchmark_config(strict);
    fs::create_dir_all(out).map_err(|e| stage_err("io")(&e))?;
    let resolved = toml::to_string(cfg).map_err(|e| stage_err("io")(&e))?;
    let header = format!("# config hash {}\n", json_hash(cfg));
    fs::write(out.join("pipeline.toml"), header + &resolved).map_err(|e| stage_err("io")(&e))?;
    let report = run_benchmark_guided(&pool, guide.as_ref(), &bcfg, Some(out)).map_err(|e| match e {
        qksvm::eval::EvalError::Stage { stage, message } => CliError::StageFailure {
            stage,
            message,
        },
        other => stage_err("benchmark")(&other),
    })?;
    Ok(summary_csv(&report))
}

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub qubits: usize,
    pub trials: usize,
    pub max_backend_diff: f64,
    pub max_asymmetry: f64,
    pub max_diagonal_deviation: f64,
    pub min_eigenvalue: f64,
    pub passed: bool,
}

/// Backend agreement on random pairs plus symmetry / unit diagonal / PSD of a
/// random Gram. Inputs use two re-uploading blocks.
pub fn verify(qubits: usize, trials: usize, seed: u64, tol: f64) -> Result<VerifyReport, CliError> {
    let err = stage_err("verify");
    let d = 6 * qubits;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> Vec<f64> { (0..d).map(|_| rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI)).collect() };
    let sv = KernelConfig::new(qubits, Backend::Sv);
    let tn = KernelConfig::new(qubits, Backend::Tn);
    let mut max_diff: f64 = 0.0;
    for _ in 0..trials {
        let (x, y) = (draw(), draw());
        let a = kernel_value(&x, &y, &sv).map_err(|e| err(&e))?;
        let b = kernel_value(&x, &y, &tn).map_err(|e| err(&e))?;
        max_diff = max_diff.max((a - b).abs());
    }
    let rows: Vec<Vec<f64>> = (0..trials.clamp(2, 64)).map(|_| draw()).collect();
    let x = FeatureMatrix::from_rows_f64(&rows, None).map_err(|e| err(&e))?;
    let g = gram_train(&x, &sv).map_err(|e| err(&e))?;
    let report = VerifyReport {
        qubits,
        trials,
        max_backend_diff: max_diff,
        max_asymmetry: g.max_asymmetry(),
        max_diagonal_deviation: g.max_diagonal_deviation(),
        min_eigenvalue: g.min_eigenvalue(),
        passed: false,
    };
    let passed = report.max_backend_diff <= tol
        && report.max_asymmetry <= 1e-9
        && report.max_diagonal_deviation <= 1e-9
        && report.min_eigenvalue >= -1e-7;
    Ok(VerifyReport { passed, ..report })
}
