//! Dense row-major helpers over `matrixmultiply`.

/// `c = alpha * a · bᵀ + beta * c` for row-major `a` (m×k), `b` (n×k), `c` (m×n).
pub(crate) fn gemm_abt(
    m: usize,
    n: usize,
    k: usize,
    alpha: f64,
    a: &[f64],
    b: &[f64],
    beta: f64,
    c: &mut [f64],
) {
    gemm_abt_strided(m, n, k, alpha, a, k, b, k, beta, c);
}

/// As [`gemm_abt`] with explicit row strides for `a` and `b`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_abt_strided(
    m: usize,
    n: usize,
    k: usize,
    alpha: f64,
    a: &[f64],
    lda: usize,
    b: &[f64],
    ldb: usize,
    beta: f64,
    c: &mut [f64],
) {
    assert!(m == 0 || a.len() >= (m - 1) * lda + k);
    assert!(n == 0 || b.len() >= (n - 1) * ldb + k);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: bounds checked above; matrixmultiply reads a, b and writes c within them.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            lda as isize,
            1,
            b.as_ptr(),
            1,
            ldb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Single-precision [`gemm_abt_strided`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn sgemm_abt_strided(
    m: usize,
    n: usize,
    k: usize,
    alpha: f32,
    a: &[f32],
    lda: usize,
    b: &[f32],
    ldb: usize,
    beta: f32,
    c: &mut [f32],
) {
    assert!(m == 0 || a.len() >= (m - 1) * lda + k);
    assert!(n == 0 || b.len() >= (n - 1) * ldb + k);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: as in gemm_abt_strided.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            lda as isize,
            1,
            b.as_ptr(),
            1,
            ldb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Squared Euclidean distances between rows of `x` (n×d) and `c` (k×d), as an n×k matrix.
pub(crate) fn sq_dists(x: &[f64], c: &[f64], d: usize) -> Vec<f64> {
    let (n, k) = (x.len() / d.max(1), c.len() / d.max(1));
    let xn: Vec<f64> = x.chunks_exact(d).map(|r| r.iter().map(|v| v * v).sum()).collect();
    let cn: Vec<f64> = c.chunks_exact(d).map(|r| r.iter().map(|v| v * v).sum()).collect();
    let mut out = vec![0.0; n * k];
    gemm_abt(n, k, d, -2.0, x, c, 0.0, &mut out);
    for (i, row) in out.chunks_exact_mut(k.max(1)).enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v + xn[i] + cn[j]).max(0.0);
        }
    }
    out
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
