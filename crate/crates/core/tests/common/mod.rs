//! Dense reference model of the re-uploading feature map: every gate is
//! lifted to a full `2^n x 2^n` operator with Kronecker products and the
//! circuit is applied as a chain of matrix products. Qubit 0 is the least
//! significant bit of a basis index.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

type C = Complex64;

fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

fn m2(a: [C; 4]) -> DMatrix<C> {
    DMatrix::from_row_slice(2, 2, &a)
}

fn id(dim: usize) -> DMatrix<C> {
    DMatrix::identity(dim, dim)
}

pub fn h() -> DMatrix<C> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    m2([c(s, 0.0), c(s, 0.0), c(s, 0.0), c(-s, 0.0)])
}

pub fn rz(t: f64) -> DMatrix<C> {
    m2([C::from_polar(1.0, -t / 2.0), c(0.0, 0.0), c(0.0, 0.0), C::from_polar(1.0, t / 2.0)])
}

pub fn ry(t: f64) -> DMatrix<C> {
    let (s, co) = (t / 2.0).sin_cos();
    m2([c(co, 0.0), c(-s, 0.0), c(s, 0.0), c(co, 0.0)])
}

/// `op` on qubit `q` of `n`: `I ⊗ .. ⊗ op ⊗ .. ⊗ I` with qubit `n-1` leftmost.
pub fn lift(op: &DMatrix<C>, q: usize, n: usize) -> DMatrix<C> {
    let mut m = id(1usize << (n - 1 - q));
    m = m.kronecker(op);
    m.kronecker(&id(1usize << q))
}

/// `|0><0|_c ⊗ I + |1><1|_c ⊗ X_t`.
pub fn cnot(ctrl: usize, tgt: usize, n: usize) -> DMatrix<C> {
    let p0 = m2([c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
    let p1 = m2([c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
    let x = m2([c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
    lift(&p0, ctrl, n) + lift(&p1, ctrl, n) * lift(&x, tgt, n)
}

/// `U(x)`: Hadamards, then per block of `3n` features (zero padded) an RZ
/// layer, an RY layer, a nearest-neighbour CNOT ladder and a final RZ layer.
/// Within a block, feature `layer * n + q` drives qubit `q`.
pub fn unitary(x: &[f64], n: usize) -> DMatrix<C> {
    let dim = 1usize << n;
    let mut u = id(dim);
    for q in 0..n {
        u = lift(&h(), q, n) * u;
    }
    let blocks = x.len().div_ceil(3 * n);
    let at = |i: usize| x.get(i).copied().unwrap_or(0.0);
    for b in 0..blocks {
        let base = 3 * n * b;
        for q in 0..n {
            u = lift(&rz(at(base + q)), q, n) * u;
        }
        for q in 0..n {
            u = lift(&ry(at(base + n + q)), q, n) * u;
        }
        for q in 0..n.saturating_sub(1) {
            u = cnot(q, q + 1, n) * u;
        }
        for q in 0..n {
            u = lift(&rz(at(base + 2 * n + q)), q, n) * u;
        }
    }
    u
}

pub fn state(x: &[f64], n: usize) -> DVector<C> {
    unitary(x, n).column(0).into_owned()
}

/// `|<phi(x)|phi(y)>|^2`.
pub fn kernel(x: &[f64], y: &[f64], n: usize) -> f64 {
    state(x, n).dotc(&state(y, n)).norm_sqr()
}

pub fn random_features(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    (0..d)
        .map(|_| rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI))
        .collect()
}

/// Dual objective `½ aᵀQa − Σa` with `Q_ij = y_i y_j K_ij`.
pub fn dual_objective(k: &[f64], y: &[f64], a: &[f64]) -> f64 {
    let n = y.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += a[i] * a[j] * y[i] * y[j] * k[i * n + j];
        }
    }
    0.5 * quad - a.iter().sum::<f64>()
}

/// Euclidean projection onto `{0 ≤ a ≤ C, yᵀa = 0}` by bisection on the
/// multiplier of the equality constraint.
fn project(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let at = |lam: f64| -> Vec<f64> { v.iter().zip(y).map(|(vi, yi)| (vi - lam * yi).clamp(0.0, c)).collect() };
    let g = |lam: f64| at(lam).iter().zip(y).map(|(a, yi)| a * yi).sum::<f64>();
    let bound = v.iter().fold(0.0f64, |m, x| m.max(x.abs())) + c + 1.0;
    let (mut lo, mut hi) = (-bound, bound);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        // g is non-increasing in lambda.
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

/// Projected gradient with Nesterov momentum on the SVM dual. Returns the
/// multipliers and the bias from KKT conditions.
pub fn qp_oracle(k: &[f64], y: &[f64], c: f64, iters: usize) -> (Vec<f64>, f64) {
    let n = y.len();
    let q = DMatrix::from_fn(n, n, |i, j| y[i] * y[j] * k[i * n + j]);
    let lip = q.clone().symmetric_eigen().eigenvalues.max().max(1e-12);
    let step = 1.0 / lip;
    let grad = |a: &[f64]| -> Vec<f64> { (0..n).map(|i| (0..n).map(|j| q[(i, j)] * a[j]).sum::<f64>() - 1.0).collect() };
    let mut a = vec![0.0; n];
    let mut z = a.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let g = grad(&z);
        let v: Vec<f64> = z.iter().zip(&g).map(|(zi, gi)| zi - step * gi).collect();
        let next = project(&v, y, c);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        z = next
            .iter()
            .zip(&a)
            .map(|(nx, ax)| nx + (t - 1.0) / t_next * (nx - ax))
            .collect();
        a = next;
        t = t_next;
    }
    // Bias: average of y_i - sum_j a_j y_j K_ij over free multipliers, or the
    // midpoint of the feasible interval when none are free.
    let f: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a[j] * y[j] * k[i * n + j]).sum()).collect();
    let eps = 1e-6 * c;
    let free: Vec<usize> = (0..n).filter(|&i| a[i] > eps && a[i] < c - eps).collect();
    let b = if free.is_empty() {
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..n {
            let r = y[i] - f[i];
            let at_lower = a[i] <= eps;
            // Lower-bound points need y_i(f_i + b) >= 1, upper-bound ones <= 1.
            if (at_lower && y[i] > 0.0) || (!at_lower && y[i] < 0.0) {
                lo = lo.max(r);
            } else {
                hi = hi.min(r);
            }
        }
        match (lo.is_finite(), hi.is_finite()) {
            (true, true) => 0.5 * (lo + hi),
            (true, false) => lo,
            (false, true) => hi,
            _ => 0.0,
        }
    } else {
        free.iter().map(|&i| y[i] - f[i]).sum::<f64>() / free.len() as f64
    };
    (a, b)
}
