mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qksvm::dataset::FeatureMatrix;
use qksvm::kernel::{gram_cross, gram_train, Backend, GramMatrix, KernelConfig};
use qksvm::svm::{predict, smo_train_binary, train_multiclass, SvmParams};

fn problem(seed: u64, n: usize) -> (GramMatrix, Vec<f64>, FeatureMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| common::random_features(&mut rng, 6)).collect();
    let mut y: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
    y[0] = 1.0;
    y[1] = -1.0;
    let x = FeatureMatrix::from_rows_f64(&rows, None).unwrap();
    (gram_train(&x, &KernelConfig::new(2, Backend::Sv)).unwrap(), y, x)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn smo_reaches_the_qp_optimum(seed in any::<u64>(), n in 2usize..=20, c in prop::sample::select(vec![0.1, 1.0, 10.0])) {
        let (k, y, _) = problem(seed, n);
        let p = SvmParams { c, tol_kkt: 1e-6, ..Default::default() };
        let m = smo_train_binary(&k, &y, &p).unwrap();
        let (a_ref, _) = common::qp_oracle(&k.data, &y, c, 20_000);
        let f_smo = common::dual_objective(&k.data, &y, &m.alpha(&y));
        let f_ref = common::dual_objective(&k.data, &y, &a_ref);
        prop_assert!((f_smo - f_ref).abs() < 1e-5, "smo {f_smo} oracle {f_ref}");
        prop_assert!((m.objective + f_smo).abs() < 1e-9);
        let a = m.alpha(&y);
        prop_assert!(a.iter().all(|&v| (0.0..=c + 1e-12).contains(&v)));
        prop_assert!(a.iter().zip(&y).map(|(a, y)| a * y).sum::<f64>().abs() < 1e-10);
    }
}

#[test]
fn multiclass_model_roundtrips_through_json() {
    let (k, y, x) = problem(9, 18);
    let labels: Vec<u8> = y.iter().enumerate().map(|(i, &v)| if v > 0.0 { (i % 2) as u8 } else { 2 }).collect();
    let model = train_multiclass(&k, &labels, &SvmParams::default()).unwrap();
    let again = qksvm::svm::SvmModel::from_json(&model.to_json()).unwrap();
    let kx = gram_cross(&x, &x, &KernelConfig::new(2, Backend::Sv)).unwrap();
    assert_eq!(predict(&model, &kx).unwrap(), predict(&again, &kx).unwrap());
}
