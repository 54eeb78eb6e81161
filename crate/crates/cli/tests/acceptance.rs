//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Data-dependent criteria read MNIST / Fashion-MNIST IDX
//! files from `$QKSVM_DATA` (default `<workspace>/data`) and report SKIP when
//! they are absent.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use qksvm::dataset::{flatten_pixels, load_idx_pair, FeatureMatrix, ImageSet};
use qksvm::distill::{distill, kernel_evaluations, split, DistillConfig};
use qksvm::kernel::{gram_train, kernel_value, Backend, KernelConfig};
use qksvm::reduce::Reducer;
use qksvm::svm::{smo_train_binary, SvmParams};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn data_root() -> PathBuf {
    std::env::var_os("QKSVM_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn load_images(name: &str) -> Option<ImageSet> {
    let dir = data_root().join(name);
    let pair = |stem: &str| {
        (
            dir.join(format!("{stem}-images-idx3-ubyte")),
            dir.join(format!("{stem}-labels-idx1-ubyte")),
        )
    };
    let stems: &[&str] = if dir.join("all-images-idx3-ubyte").exists() { &["all"] } else { &["train", "t10k"] };
    let mut set: Option<ImageSet> = None;
    for s in stems {
        let (i, l) = pair(s);
        let part = load_idx_pair(&i, &l, s).ok()?;
        set = Some(match set {
            None => part,
            Some(prev) => prev.concat(part).ok()?,
        });
    }
    set
}

fn backend_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    for n in [2, 3, 4, 6, 8] {
        let (sv, tn) = (KernelConfig::new(n, Backend::Sv), KernelConfig::new(n, Backend::Tn));
        for _ in 0..200 {
            let d = rng.gen_range(1..=9 * n);
            let (x, y) = (common::random_features(&mut rng, d), common::random_features(&mut rng, d));
            let a = kernel_value(&x, &y, &sv).expect("sv");
            let b = kernel_value(&x, &y, &tn).expect("tn");
            worst = worst.max((a - b).abs());
            pairs += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-8 && secs < 120.0,
        format!("{pairs} pairs, max |K_sv - K_tn| = {worst:.2e} (tol 1e-8), {secs:.1} s (limit 120 s)"),
    )
}

fn brute_force_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    for n in 1..=3 {
        let rows: Vec<Vec<f64>> = (0..15).map(|_| common::random_features(&mut rng, 6 * n + 1)).collect();
        let x = FeatureMatrix::from_rows_f64(&rows, None).expect("rows");
        for backend in [Backend::Sv, Backend::Tn] {
            let g = gram_train(&x, &KernelConfig::new(n, backend)).expect("gram");
            for i in 0..x.rows() {
                for j in i..x.rows() {
                    let want = common::kernel(&x.row_f64(i), &x.row_f64(j), n);
                    worst = worst.max((g.get(i, j) - want).abs()).max((g.get(j, i) - want).abs());
                    if backend == Backend::Sv && i < j {
                        pairs += 1;
                    }
                }
            }
        }
    }
    check(
        worst <= 1e-10,
        format!("{pairs} pairs per backend over n = 1..3, max deviation from Kronecker oracle {worst:.2e} (tol 1e-10)"),
    )
}

fn gram_validity(pool: &FeatureMatrix) -> Outcome {
    let cfg = DistillConfig {
        k_per_class: 40,
        ..Default::default()
    };
    let ds = distill(pool, &cfg).expect("distill");
    let reducer = Reducer::fit(&ds.features, false, None, (-0.075, 0.075)).expect("reduce");
    let x = reducer.transform(&ds.features).expect("transform");
    let start = Instant::now();
    let g = gram_train(&x, &KernelConfig::new(16, Backend::Sv)).expect("gram");
    let (asym, diag, min_eig) = (g.max_asymmetry(), g.max_diagonal_deviation(), g.min_eigenvalue());
    check(
        g.rows == 400 && asym <= 1e-9 && diag <= 1e-9 && min_eig >= -1e-7,
        format!(
            "{} samples, 16 qubits ({:.1} s): asymmetry {asym:.1e}, diagonal deviation {diag:.1e}, min eigenvalue {min_eig:.3e}",
            g.rows,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn smo_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut worst_obj, mut mismatches, mut evaluated) = (0.0f64, 0usize, 0usize);
    let p = SvmParams::default();
    for _ in 0..50 {
        let n = rng.gen_range(2..=20);
        let m = n + 10;
        let rows: Vec<Vec<f64>> = (0..m).map(|_| common::random_features(&mut rng, 6)).collect();
        let mut y: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
        y[0] = 1.0;
        y[n - 1] = -1.0;
        let x = FeatureMatrix::from_rows_f64(&rows, None).expect("rows");
        let full = gram_train(&x, &KernelConfig::new(2, Backend::Sv)).expect("gram");
        let train: Vec<usize> = (0..n).collect();
        let k = full.submatrix(&train, &train);
        let model = smo_train_binary(&k, &y, &p).expect("smo");
        let (a_ref, b_ref) = common::qp_oracle(&k.data, &y, p.c, 20_000);
        let f_smo = common::dual_objective(&k.data, &y, &model.alpha(&y));
        let f_ref = common::dual_objective(&k.data, &y, &a_ref);
        worst_obj = worst_obj.max((f_smo - f_ref).abs());
        for r in 0..m {
            let ours = model.decision(|s| full.get(r, s));
            let theirs = (0..n).map(|j| a_ref[j] * y[j] * full.get(r, j)).sum::<f64>() + b_ref;
            evaluated += 1;
            if (ours >= 0.0) != (theirs >= 0.0) {
                mismatches += 1;
            }
        }
    }
    check(
        worst_obj <= 1e-5 && mismatches == 0,
        format!("50 problems: max dual objective gap {worst_obj:.2e} (tol 1e-5), {mismatches}/{evaluated} prediction mismatches"),
    )
}

fn distillation_contract(pool: &FeatureMatrix) -> Outcome {
    let ds = distill(pool, &DistillConfig::default()).expect("distill");
    let labels = pool.labels().expect("labels");
    let mut ok = ds.classes.len() == 10;
    for (c, idx) in ds.classes.iter().zip(&ds.indices) {
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        sorted.dedup();
        ok &= idx.len() == 200 && sorted.len() == 200 && idx.iter().all(|&i| labels[i] == *c);
    }
    for (r, &i) in ds.flat_indices().iter().enumerate() {
        ok &= ds.features.row(r) == pool.row(i);
    }
    let train = split(ds.labels(), 0.8, 0).expect("split").train.len();
    let evals = kernel_evaluations(train);
    ok &= ds.len() == 2000 && train == 1600 && evals == 1600u128 * 1600;
    check(
        ok,
        format!(
            "{} classes x 200 prototypes, all real class members; {} train rows, {} training kernel evaluations (1600^2 = 2560000)",
            ds.classes.len(),
            train,
            evals
        ),
    )
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_qksvm"))
        .args(args)
        .env("QKSVM_DATA", data_root())
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).into_owned())
    }
}

fn reproduction(preset: &str, classical_target: f64, quantum_target: f64) -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let start = Instant::now();
    if let Err(e) = run_cli(&["benchmark", "--preset", preset, "-o", dir.path().to_str().unwrap()]) {
        return Outcome::Fail(format!("benchmark failed: {e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let acc = |arm: &str| report[arm]["test"]["accuracy"].as_f64().unwrap();
    let (c, q) = (acc("classical"), acc("quantum"));
    let adv = report["advantage"]["advantage_pct"].as_f64().unwrap();
    let within = |v: f64, t: f64| (v - t).abs() <= 0.03;
    check(
        within(c, classical_target) && within(q, quantum_target) && c > q,
        format!(
            "classical {c:.4} (target {classical_target} ± 0.03), quantum {q:.4} (target {quantum_target} ± 0.03), advantage {adv:+.2}%, {:.0} s",
            secs
        ),
    )
}

fn determinism() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let args = [
            "benchmark",
            "--preset",
            "mnist-raw-16q",
            "--strict",
            "--set",
            "distill.k_per_class=12",
            "--set",
            "kernel.n_qubits=6",
            "-o",
            d.path().to_str().unwrap(),
        ];
        if let Err(e) = run_cli(&args) {
            return Outcome::Fail(format!("benchmark failed: {e}"));
        }
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("summary.csv")).unwrap();
    let (a, b) = (read(&dirs[0]), read(&dirs[1]));
    check(a == b, format!("two strict runs, summary.csv {} bytes each, identical: {}", a.len(), a == b))
}

fn main() {
    // Custom harness: ignore libtest flags such as `--nocapture` or filters.
    let mnist = load_images("mnist").map(|s| flatten_pixels(&s));
    let have_fmnist = load_images("fmnist").is_some();
    let missing = |name: &str| Outcome::Skip(format!("{name} IDX files not found under {}", data_root().display()));

    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("backend equivalence", Box::new(backend_equivalence)),
        ("brute-force oracle", Box::new(brute_force_oracle)),
        ("SMO correctness", Box::new(smo_correctness)),
        (
            "Gram validity",
            Box::new(|| mnist.as_ref().map_or_else(|| missing("MNIST"), gram_validity)),
        ),
        (
            "distillation contract",
            Box::new(|| mnist.as_ref().map_or_else(|| missing("MNIST"), distillation_contract)),
        ),
        (
            "determinism",
            Box::new(|| if mnist.is_some() { determinism() } else { missing("MNIST") }),
        ),
        (
            "raw-pixel MNIST reproduction",
            Box::new(|| if mnist.is_some() { reproduction("mnist-raw-16q", 0.945, 0.887) } else { missing("MNIST") }),
        ),
        (
            "Fashion-MNIST raw-pixel analogue",
            Box::new(|| {
                if have_fmnist {
                    reproduction("fmnist-raw-16q", 0.7825, 0.730)
                } else {
                    missing("Fashion-MNIST")
                }
            }),
        ),
    ];

    let mut failed = 0;
    for (name, run) in &criteria {
        let line = match run() {
            Outcome::Pass(d) => format!("PASS  {name}: {d}"),
            Outcome::Fail(d) => {
                failed += 1;
                format!("FAIL  {name}: {d}")
            }
            Outcome::Skip(d) => format!("SKIP  {name}: {d}"),
        };
        println!("acceptance {line}");
    }
    println!("acceptance: {} criteria, {failed} failed", criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
