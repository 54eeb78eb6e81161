//! Pipeline configuration: TOML/JSON schema, named presets, `--set` overrides
//! and per-stage hashes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qksvm::distill::DistillConfig;
use qksvm::eval::BenchmarkConfig;
use qksvm::featuremap::CircuitConfig;
use qksvm::kernel::{json_hash, Backend, KernelConfig, TnOptions, DEFAULT_MEMORY_LIMIT};
use qksvm::statevector::{Precision, SimOptions};
use qksvm::svm::SvmParams;
use qksvm::tensornet::PathStrategy;

use crate::CliError;

pub const MAX_QUBITS: usize = 24;

/// Half-width of the rotation-angle interval used by the raw-pixel presets.
pub const PRESET_HALF_RANGE: f64 = 0.075;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Fmnist,
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub kind: DatasetKind,
    /// Directory holding the IDX files; defaults to `$QKSVM_DATA/<kind>` or `data/<kind>`.
    pub dir: Option<PathBuf>,
    /// Custom datasets: IDX image files, concatenated in order.
    pub images: Vec<PathBuf>,
    /// Custom datasets: IDX label files matching `images`.
    pub labels: Vec<PathBuf>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Mnist,
            dir: None,
            images: Vec::new(),
            labels: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSource {
    Pixels,
    Emb1,
}

/// Representation k-means clusters on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistillSpace {
    /// The pipeline features themselves (embeddings when `source = "emb1"`).
    #[default]
    Features,
    /// Raw pixels; the selected rows of the feature source continue.
    Pixels,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    pub source: FeatureSource,
    /// EMB1 file, one row per dataset image, when `source = "emb1"`.
    pub path: Option<PathBuf>,
    /// Label written to reports, e.g. `raw-pixels` or `vit-b32-512`.
    pub label: String,
    pub distill_on: DistillSpace,
}

impl Default for FeatureSection {
    fn default() -> Self {
        Self {
            source: FeatureSource::Pixels,
            path: None,
            label: "raw-pixels".into(),
            distill_on: DistillSpace::Features,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReduceSection {
    pub train_frac: f64,
    pub split_seed: u64,
    pub standardize: bool,
    pub pca_dim: Option<usize>,
    pub angle_range: [f64; 2],
}

impl Default for ReduceSection {
    fn default() -> Self {
        Self {
            train_frac: 0.8,
            split_seed: 0,
            standardize: false,
            pca_dim: None,
            angle_range: [-std::f64::consts::PI, std::f64::consts::PI],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    pub n_qubits: usize,
    pub backend: Backend,
    pub precision: Precision,
    /// Statevector memory budget in MiB.
    pub memory_limit_mb: u64,
    pub tn_strategy: PathStrategy,
    pub fuse_diagonals: bool,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self {
            n_qubits: 16,
            backend: Backend::Sv,
            precision: Precision::F64,
            memory_limit_mb: DEFAULT_MEMORY_LIMIT >> 20,
            tn_strategy: PathStrategy::Greedy,
            fuse_diagonals: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub folds: usize,
    pub seed: u64,
}

impl Default for CvSection {
    fn default() -> Self {
        Self { folds: 5, seed: 0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub name: String,
    pub dataset: DatasetSection,
    pub features: FeatureSection,
    pub distill: DistillConfig,
    pub reduce: ReduceSection,
    pub kernel: KernelSection,
    pub svm: SvmParams,
    pub cv: CvSection,
    /// Artifact directory; falls back to `$QKSVM_OUT_DIR`, then `qksvm-out/<name>`.
    pub output_dir: Option<PathBuf>,
}

/// Hashes that tie each artifact to the configuration prefix it depends on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageHashes {
    pub distill: String,
    pub reduce: String,
    pub gram: String,
    pub train: String,
}

impl PipelineConfig {
    pub fn kernel_config(&self, strict: bool) -> KernelConfig {
        let k = &self.kernel;
        KernelConfig {
            circuit: CircuitConfig::new(k.n_qubits),
            backend: k.backend,
            sim: SimOptions::default(),
            precision: k.precision,
            memory_limit: k.memory_limit_mb << 20,
            tn: TnOptions {
                strategy: k.tn_strategy,
                fuse_diagonals: k.fuse_diagonals,
            },
            strict,
        }
    }

    pub fn benchmark_config(&self, strict: bool) -> BenchmarkConfig {
        BenchmarkConfig {
            dataset: format!("{:?}", self.dataset.kind).to_lowercase(),
            features: self.features.label.clone(),
            distill: self.distill.clone(),
            train_frac: self.reduce.train_frac,
            split_seed: self.reduce.split_seed,
            standardize: self.reduce.standardize,
            pca_dim: self.reduce.pca_dim,
            angle_range: self.reduce.angle_range,
            kernel: self.kernel_config(strict),
            svm: self.svm.clone(),
            cv_folds: self.cv.folds,
            cv_seed: self.cv.seed,
            strict,
        }
    }

    pub fn stage_hashes(&self) -> StageHashes {
        let distill = json_hash(&("distill", &self.dataset, &self.features, &self.distill));
        let reduce = json_hash(&("reduce", &distill, &self.reduce));
        // Execution knobs that cannot change kernel values stay out of the hash.
        let k = &self.kernel;
        let gram = json_hash(&("gram", &reduce, k.n_qubits, k.backend, k.precision));
        let train = json_hash(&("train", &gram, &self.svm, &self.cv));
        StageHashes {
            distill,
            reduce,
            gram,
            train,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::ConfigInvalid(m));
        let n = self.kernel.n_qubits;
        if n == 0 || n > MAX_QUBITS {
            return bad(format!("kernel.n_qubits must be in 1..={MAX_QUBITS}, got {n}"));
        }
        if !(self.reduce.train_frac > 0.0 && self.reduce.train_frac < 1.0) {
            return bad(format!("reduce.train_frac must be in (0, 1), got {}", self.reduce.train_frac));
        }
        let [lo, hi] = self.reduce.angle_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return bad(format!("reduce.angle_range must be an increasing finite pair, got [{lo}, {hi}]"));
        }
        if self.cv.folds < 2 {
            return bad(format!("cv.folds must be at least 2, got {}", self.cv.folds));
        }
        if self.distill.k_per_class == 0 {
            return bad("distill.k_per_class must be positive".into());
        }
        if self.dataset.kind == DatasetKind::Custom {
            if self.dataset.images.is_empty() || self.dataset.images.len() != self.dataset.labels.len() {
                return bad("custom datasets need matching, non-empty `images` and `labels` lists".into());
            }
        }
        if self.features.source == FeatureSource::Emb1 && self.features.path.is_none() {
            return bad("features.path is required when features.source = \"emb1\"".into());
        }
        Ok(())
    }

    /// IDX (images, labels) pairs to load, in order.
    pub fn idx_files(&self) -> Vec<(PathBuf, PathBuf)> {
        let d = &self.dataset;
        if d.kind == DatasetKind::Custom {
            return d.images.iter().cloned().zip(d.labels.iter().cloned()).collect();
        }
        let dir = d.dir.clone().unwrap_or_else(|| data_root().join(if d.kind == DatasetKind::Mnist { "mnist" } else { "fmnist" }));
        let pair = |stem: &str| {
            (
                dir.join(format!("{stem}-images-idx3-ubyte")),
                dir.join(format!("{stem}-labels-idx1-ubyte")),
            )
        };
        if dir.join("all-images-idx3-ubyte").exists() {
            vec![pair("all")]
        } else {
            vec![pair("train"), pair("t10k")]
        }
    }

    /// Every file the run reads before any stage starts.
    pub fn input_files(&self) -> Vec<PathBuf> {
        let mut files: Vec<PathBuf> = self.idx_files().into_iter().flat_map(|(i, l)| [i, l]).collect();
        if self.features.source == FeatureSource::Emb1 {
            files.extend(self.features.path.clone());
        }
        files
    }

    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        if let Some(p) = &self.output_dir {
            return p.clone();
        }
        match std::env::var_os("QKSVM_OUT_DIR") {
            Some(p) => PathBuf::from(p),
            None => Path::new("qksvm-out").join(if self.name.is_empty() { "run" } else { &self.name }),
        }
    }
}

pub fn data_root() -> PathBuf {
    std::env::var_os("QKSVM_DATA").map_or_else(|| PathBuf::from("data"), PathBuf::from)
}

/// Embedding encoders: preset stem, native embedding width, PCA target.
const EMBEDDINGS: &[(&str, usize, Option<usize>)] = &[
    ("effnet-512", 1536, Some(512)),
    ("effnet-1536", 1536, None),
    ("vit-b32-512", 512, None),
    ("vit-b16-512", 512, None),
    ("vit-l14-768", 768, None),
    ("vit-l14-336-768", 768, None),
];

pub fn preset_names() -> Vec<String> {
    let mut names = Vec::new();
    for ds in ["mnist", "fmnist"] {
        names.push(format!("{ds}-baseline-16q"));
        names.push(format!("{ds}-raw-16q"));
        for (stem, _, _) in EMBEDDINGS {
            names.push(format!("{ds}-{stem}-16q"));
        }
    }
    names.push("smoke-2pc".into());
    names
}

/// Named configurations. `*-raw-16q` is the enhanced raw-pixel pipeline,
/// `*-baseline-16q` feeds pixels straight into `[0, π]` rotations, and the
/// embedding presets read `<data>/<dataset>/<stem>.emb1`.
pub fn preset(name: &str) -> Option<PipelineConfig> {
    if name == "smoke-2pc" {
        let mut c = preset("mnist-raw-16q")?;
        c.name = name.into();
        c.distill.k_per_class = 2;
        c.kernel.n_qubits = 4;
        return Some(c);
    }
    let rest = name.strip_suffix("-16q")?;
    let (kind, variant) = if let Some(v) = rest.strip_prefix("mnist-") {
        (DatasetKind::Mnist, v)
    } else if let Some(v) = rest.strip_prefix("fmnist-") {
        (DatasetKind::Fmnist, v)
    } else {
        return None;
    };
    let mut c = PipelineConfig {
        name: name.into(),
        dataset: DatasetSection {
            kind,
            ..Default::default()
        },
        ..Default::default()
    };
    c.reduce.angle_range = [-PRESET_HALF_RANGE, PRESET_HALF_RANGE];
    match variant {
        "raw" => {}
        "baseline" => {
            c.features.label = "baseline".into();
            c.reduce.angle_range = [0.0, std::f64::consts::PI];
        }
        _ => {
            let &(stem, _, pca) = EMBEDDINGS.iter().find(|(s, _, _)| *s == variant)?;
            let ds = if kind == DatasetKind::Mnist { "mnist" } else { "fmnist" };
            c.features = FeatureSection {
                source: FeatureSource::Emb1,
                path: Some(data_root().join(ds).join(format!("{stem}.emb1"))),
                label: stem.into(),
                distill_on: DistillSpace::Features,
            };
            c.reduce.standardize = true;
            c.reduce.pca_dim = pca;
        }
    }
    Some(c)
}

fn parse_file(path: &Path) -> Result<toml::Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|_| CliError::MissingArtifact(path.to_path_buf()))?;
    let invalid = |e: String| CliError::ConfigInvalid(format!("{}: {e}", path.display()));
    if path.extension().is_some_and(|e| e == "json") {
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| invalid(e.to_string()))?;
        toml::Value::try_from(v).map_err(|e| invalid(e.to_string()))
    } else {
        text.parse::<toml::Table>()
            .map(toml::Value::Table)
            .map_err(|e| invalid(e.to_string()))
    }
}

/// Parses the right-hand side of `--set key=value` as a TOML value, falling
/// back to a bare string.
fn parse_scalar(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.into()))
}

fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::ConfigInvalid(format!("override `{assignment}` is not key=value")))?;
    let mut node = root;
    let parts: Vec<&str> = key.trim().split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| CliError::ConfigInvalid(format!("`{key}` does not name a table path")))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| CliError::ConfigInvalid(format!("`{key}` does not name a table path")))?;
    table.insert(parts[parts.len() - 1].to_string(), parse_scalar(raw.trim()));
    Ok(())
}

/// Resolves preset, then config file, then overrides (later wins) and validates.
pub fn load(preset_name: Option<&str>, file: Option<&Path>, overrides: &[String]) -> Result<PipelineConfig, CliError> {
    let base = match preset_name {
        Some(n) => preset(n).ok_or_else(|| {
            CliError::ConfigInvalid(format!("unknown preset `{n}`; known: {}", preset_names().join(", ")))
        })?,
        None => PipelineConfig::default(),
    };
    let mut value = toml::Value::try_from(&base).map_err(|e| CliError::ConfigInvalid(e.to_string()))?;
    if let Some(path) = file {
        merge(&mut value, parse_file(path)?);
    }
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let cfg: PipelineConfig = value
        .try_into()
        .map_err(|e: toml::de::Error| CliError::ConfigInvalid(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
