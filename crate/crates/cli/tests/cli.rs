use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qksvm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qksvm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("QKSVM_OUT_DIR")
        .output()
        .unwrap()
}

/// 3 classes x 12 images of 4x4 pixels; class `c` brightens row `c`.
fn write_dataset(dir: &Path) {
    let n: u32 = 36;
    let mut img = vec![0, 0, 8, 3];
    for d in [n, 4, 4] {
        img.extend(d.to_be_bytes());
    }
    let mut lbl = vec![0, 0, 8, 1];
    lbl.extend(n.to_be_bytes());
    for i in 0..n {
        let c = (i % 3) as u8;
        for p in 0..16u32 {
            let on = p / 4 == u32::from(c);
            img.push(if on { 180 } else { 30 } + ((i * 7 + p * 13) % 50) as u8);
        }
        lbl.push(c);
    }
    fs::write(dir.join("img.idx"), img).unwrap();
    fs::write(dir.join("lbl.idx"), lbl).unwrap();
    let config = format!(
        r#"name = "tiny"
[dataset]
kind = "custom"
images = ["{d}/img.idx"]
labels = ["{d}/lbl.idx"]
[distill]
k_per_class = 8
[reduce]
angle_range = [-1.0, 1.0]
[kernel]
n_qubits = 3
[cv]
folds = 3
"#,
        d = dir.display()
    );
    fs::write(dir.join("tiny.toml"), config).unwrap();
}

#[test]
fn staged_run_then_hash_guard() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path());
    let cfg = dir.path().join("tiny.toml");
    let out = dir.path().join("out");
    let common = ["--config", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()];
    for stage in ["distill", "reduce", "gram", "train", "evaluate"] {
        let o = qksvm(&[&[stage][..], &common].concat());
        assert!(o.status.success(), "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["distilled.emb1.json", "train.emb1", "test.emb1.json", "gram_train.emb1.json", "model.json", "metrics.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let o = qksvm(&[&["evaluate"][..], &common].concat());
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("accuracy "));

    // A different SVM config invalidates the model but not the Gram.
    let changed = [&["evaluate"][..], &common, &["--set", "svm.C=3.0"]].concat();
    let o = qksvm(&changed);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model.json"));
    let forced = [&changed[..], &["--force"]].concat();
    assert_eq!(qksvm(&forced).status.code(), Some(0));
    let retrain = [&["train"][..], &common, &["--set", "svm.C=3.0"]].concat();
    assert!(qksvm(&retrain).status.success());
}

#[test]
fn gram_without_inputs_is_a_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let o = qksvm(&["gram", "--preset", "smoke-2pc", "-o", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing artifact"));
}

#[test]
fn verify_passes_on_agreeing_backends() {
    let o = qksvm(&["verify", "--qubits", "4", "--trials", "50"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(r["max_backend_diff"].as_f64().unwrap() <= 1e-8);
    // An impossible tolerance turns any rounding difference into a failure.
    let o = qksvm(&["verify", "--qubits", "3", "--trials", "5", "--tol=-1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(qksvm(&["benchmark", "--preset", "no-such-preset"]).status.code(), Some(2));
    assert_eq!(qksvm(&["benchmark", "--bogus"]).status.code(), Some(2));
    assert_eq!(qksvm(&["show-config", "--set", "kernel.n_qubits=30"]).status.code(), Some(2));
    assert_eq!(qksvm(&["verify", "--qubits", "0"]).status.code(), Some(2));
}

#[test]
fn presets_and_resolved_config_are_listed() {
    let o = qksvm(&["presets"]);
    let names = String::from_utf8_lossy(&o.stdout);
    assert!(names.lines().any(|l| l == "mnist-raw-16q"));
    assert!(names.lines().any(|l| l == "fmnist-vit-b32-512-16q"));
    let o = qksvm(&["show-config", "--preset", "fmnist-raw-16q", "--set", "cv.folds=3"]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("kind = \"fmnist\"") && text.contains("folds = 3"), "{text}");
}

#[test]
fn strict_benchmark_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path());
    let cfg = dir.path().join("tiny.toml");
    let run = |sub: &str| {
        let out = dir.path().join(sub);
        let o = qksvm(&["benchmark", "--strict", "--config", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(out.join("summary.csv")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}
