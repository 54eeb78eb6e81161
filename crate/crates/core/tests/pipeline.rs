use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qksvm::dataset::{flatten_pixels, load_idx_pair, read_emb1, write_emb1};
use qksvm::distill::{distill, split, DistillConfig};
use qksvm::eval::{run_benchmark, BenchmarkConfig};
use qksvm::kernel::{gram_cross, gram_train, Backend, GramMatrix, KernelConfig};
use qksvm::reduce::Reducer;
use qksvm::svm::{predict, train_multiclass, SvmParams};

/// Writes an IDX image/label pair of `per_class` noisy 6x6 glyphs per class:
/// class `c` lights up row `c`.
fn write_idx(dir: &Path, classes: u8, per_class: usize, seed: u64) -> (std::path::PathBuf, std::path::PathBuf) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = usize::from(classes) * per_class;
    let mut img = vec![0, 0, 8, 3];
    for d in [n as u32, 6, 6] {
        img.extend(d.to_be_bytes());
    }
    let mut lbl = vec![0, 0, 8, 1];
    lbl.extend((n as u32).to_be_bytes());
    for i in 0..n {
        let c = (i % usize::from(classes)) as u8;
        for r in 0..6 {
            for _ in 0..6 {
                let base: u8 = if r == usize::from(c) { 200 } else { 20 };
                img.push(base.saturating_add(rng.gen_range(0..40)));
            }
        }
        lbl.push(c);
    }
    let (ip, lp) = (dir.join("images-idx3-ubyte"), dir.join("labels-idx1-ubyte"));
    fs::write(&ip, img).unwrap();
    fs::write(&lp, lbl).unwrap();
    (ip, lp)
}

#[test]
fn staged_pipeline_matches_between_backends_and_survives_persistence() {
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = write_idx(dir.path(), 3, 30, 1);
    let pool = flatten_pixels(&load_idx_pair(&ip, &lp, "synthetic").unwrap());
    assert_eq!((pool.rows(), pool.cols()), (90, 36));

    let ds = distill(&pool, &DistillConfig { k_per_class: 10, ..Default::default() }).unwrap();
    assert_eq!(ds.len(), 30);
    let labels = ds.labels().to_vec();
    let sp = split(&labels, 0.8, 0).unwrap();
    assert_eq!((sp.train.len(), sp.test.len()), (24, 6));

    let raw_train = ds.features.select_rows(&sp.train);
    let reducer = Reducer::fit(&raw_train, true, Some(12), (-1.0, 1.0)).unwrap();
    let train = reducer.transform(&raw_train).unwrap();
    let test = reducer.transform(&ds.features.select_rows(&sp.test)).unwrap();
    write_emb1(&train, dir.path().join("train.emb1")).unwrap();
    let train = read_emb1(dir.path().join("train.emb1")).unwrap();
    assert_eq!(train.cols(), 12);

    let sv = KernelConfig::new(3, Backend::Sv);
    let tn = KernelConfig::new(3, Backend::Tn);
    let (k_sv, k_tn) = (gram_train(&train, &sv).unwrap(), gram_train(&train, &tn).unwrap());
    let worst = k_sv.data.iter().zip(&k_tn.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-10, "{worst}");

    k_sv.save(dir.path().join("k.emb1")).unwrap();
    let loaded = GramMatrix::load(dir.path().join("k.emb1")).unwrap();
    assert_eq!(loaded, k_sv);

    let y = train.labels().unwrap();
    let model = train_multiclass(&loaded, y, &SvmParams::default()).unwrap();
    let kx = gram_cross(&test, &train, &sv).unwrap();
    let pred = predict(&model, &kx).unwrap();
    let acc = pred.labels.iter().zip(test.labels().unwrap()).filter(|(a, b)| a == b).count();
    assert!(acc >= 5, "{acc}/6");
}

#[test]
fn benchmark_runs_on_the_tensor_network_backend() {
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = write_idx(dir.path(), 2, 20, 2);
    let pool = flatten_pixels(&load_idx_pair(&ip, &lp, "synthetic").unwrap());
    let base = BenchmarkConfig {
        distill: DistillConfig { k_per_class: 10, ..Default::default() },
        pca_dim: Some(6),
        standardize: true,
        angle_range: [-1.0, 1.0],
        cv_folds: 2,
        ..Default::default()
    };
    let sv = run_benchmark(&pool, &BenchmarkConfig { kernel: KernelConfig::new(2, Backend::Sv), ..base.clone() }, None).unwrap();
    let tn = run_benchmark(&pool, &BenchmarkConfig { kernel: KernelConfig::new(2, Backend::Tn), ..base }, None).unwrap();
    assert_eq!(sv.quantum.test.confusion, tn.quantum.test.confusion);
    assert_eq!(sv.quantum.arm, "quantum-sv");
    assert_eq!(tn.quantum.arm, "quantum-tn");
    assert_eq!(sv.classical.test, tn.classical.test);
}
