//! Complex/real realization maps, the inverse DFT matrix and the
//! thresholding operators shared by the solvers and the learned model.
//!
//! A complex vector `x` of length `N` is realized as `[Re(x); Im(x)]`
//! (length `2N`), and a complex matrix `X` as the block matrix
//! `[[Re X, -Im X], [Im X, Re X]]`. With these two conventions the map is a
//! ring homomorphism: `R(X x) = R(X) R(x)` and `R(X Y) = R(X) R(Y)`.

use ndarray::{Array1, Array2, ArrayView1};
use num_complex::Complex64;
use std::f64::consts::PI;

/// Realizes a complex vector as `[Re(x); Im(x)]`.
pub fn realize_vector(x: &[Complex64]) -> Array1<f64> {
    let n = x.len();
    let mut out = Array1::zeros(2 * n);
    for (i, c) in x.iter().enumerate() {
        out[i] = c.re;
        out[i + n] = c.im;
    }
    out
}

/// Inverse of [`realize_vector`]. Panics if the length is odd.
pub fn complexify_vector(z: ArrayView1<'_, f64>) -> Vec<Complex64> {
    assert!(z.len() % 2 == 0, "realized vector must have even length");
    let n = z.len() / 2;
    (0..n).map(|i| Complex64::new(z[i], z[i + n])).collect()
}

/// Realizes an `M x N` complex matrix into the `2M x 2N` block layout.
pub fn realize_matrix(x: &Array2<Complex64>) -> Array2<f64> {
    let (m, n) = x.dim();
    let mut out = Array2::zeros((2 * m, 2 * n));
    for ((i, j), c) in x.indexed_iter() {
        out[[i, j]] = c.re;
        out[[i, j + n]] = -c.im;
        out[[i + m, j]] = c.im;
        out[[i + m, j + n]] = c.re;
    }
    out
}

/// Unitary inverse DFT matrix, `F[n, m] = exp(j 2 pi n m / N) / sqrt(N)`.
pub fn inverse_dft_matrix(n: usize) -> Array2<Complex64> {
    assert!(n >= 1, "DFT size must be positive");
    let scale = 1.0 / (n as f64).sqrt();
    Array2::from_shape_fn((n, n), |(r, c)| {
        // reduce the exponent modulo n to keep the phase argument small
        let k = (r * c) % n;
        Complex64::from_polar(scale, 2.0 * PI * k as f64 / n as f64)
    })
}

/// Indices of the `omega` largest entries of `mag2`, in ascending index
/// order. Ties are resolved in favour of the lower index.
pub fn top_bins(mag2: &[f64], omega: usize) -> Vec<usize> {
    let omega = omega.min(mag2.len());
    let mut order: Vec<usize> = (0..mag2.len()).collect();
    order.sort_by(|&a, &b| mag2[b].total_cmp(&mag2[a]).then(a.cmp(&b)));
    let mut kept = order[..omega].to_vec();
    kept.sort_unstable();
    kept
}

/// Hard thresholding over complex bins of a realized vector.
///
/// Bins `(z[i], z[i+K])` are ranked by squared magnitude and the `omega`
/// largest are kept. Returns the thresholded vector and the retained bins.
pub fn hard_threshold(z: ArrayView1<'_, f64>, omega: usize) -> (Array1<f64>, Vec<usize>) {
    assert!(z.len() % 2 == 0, "realized vector must have even length");
    let k = z.len() / 2;
    let mag2: Vec<f64> = (0..k).map(|i| z[i] * z[i] + z[i + k] * z[i + k]).collect();
    let support = top_bins(&mag2, omega);
    let mut out = Array1::zeros(2 * k);
    for &i in &support {
        out[i] = z[i];
        out[i + k] = z[i + k];
    }
    (out, support)
}

/// Hard thresholding of a complex vector, same ranking rule as
/// [`hard_threshold`]. Operates in place and returns the retained bins.
pub fn hard_threshold_complex(z: &mut [Complex64], omega: usize) -> Vec<usize> {
    let mag2: Vec<f64> = z.iter().map(|c| c.norm_sqr()).collect();
    let support = top_bins(&mag2, omega);
    let mut keep = vec![false; z.len()];
    for &i in &support {
        keep[i] = true;
    }
    for (c, k) in z.iter_mut().zip(keep) {
        if !k {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    support
}

/// Elementwise soft thresholding `sign(x) max(|x| - w, 0)`.
pub fn soft_threshold(x: ArrayView1<'_, f64>, w: f64) -> Array1<f64> {
    assert!(w >= 0.0, "threshold must be non-negative");
    x.mapv(|v| v.signum() * (v.abs() - w).max(0.0))
}

/// Complex soft thresholding: shrinks each magnitude by `w`, keeps the phase.
pub fn soft_threshold_complex(z: &mut [Complex64], w: f64) {
    for c in z.iter_mut() {
        let r = c.norm();
        *c = if r > w { *c * ((r - w) / r) } else { Complex64::new(0.0, 0.0) };
    }
}

/// Complex matrix-vector product.
pub fn cmatvec(a: &Array2<Complex64>, x: &[Complex64]) -> Vec<Complex64> {
    a.rows()
        .into_iter()
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

pub(crate) fn cnorm(x: &[Complex64]) -> f64 {
    x.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cvec(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
        (0..n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn random_cmat(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Array2<Complex64> {
        Array2::from_shape_fn((m, n), |_| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    fn cmatmul(a: &Array2<Complex64>, b: &Array2<Complex64>) -> Array2<Complex64> {
        let (m, k) = a.dim();
        let n = b.ncols();
        Array2::from_shape_fn((m, n), |(i, j)| (0..k).map(|l| a[[i, l]] * b[[l, j]]).sum())
    }

    #[test]
    fn realize_vector_definition() {
        assert_eq!(realize_vector(&[Complex64::new(0.0, 0.0)]), array![0.0, 0.0]);
        assert_eq!(realize_vector(&[Complex64::new(1.0, 2.0)]), array![1.0, 2.0]);
    }

    #[test]
    fn realize_matrix_identity_and_imaginary() {
        let n = 3;
        let eye = Array2::from_shape_fn((n, n), |(i, j)| {
            Complex64::new(if i == j { 1.0 } else { 0.0 }, 0.0)
        });
        let r = realize_matrix(&eye);
        assert_eq!(r, Array2::<f64>::eye(2 * n));

        let ieye = eye.mapv(|c| c * Complex64::i());
        let r = realize_matrix(&ieye);
        for i in 0..n {
            for j in 0..n {
                let d = if i == j { 1.0 } else { 0.0 };
                assert_eq!(r[[i, j]], 0.0);
                assert_eq!(r[[i, j + n]], -d);
                assert_eq!(r[[i + n, j]], d);
                assert_eq!(r[[i + n, j + n]], 0.0);
            }
        }
    }

    #[test]
    fn matrix_product_homomorphism() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x = random_cmat(&mut rng, 4, 5);
            let y = random_cmat(&mut rng, 5, 3);
            let lhs = realize_matrix(&cmatmul(&x, &y));
            let rhs = realize_matrix(&x).dot(&realize_matrix(&y));
            let err = (&lhs - &rhs).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
            assert!(err < 1e-12, "err {err}");
        }
    }

    #[test]
    fn dft_matrix_small_cases() {
        let f1 = inverse_dft_matrix(1);
        assert_eq!(f1[[0, 0]], Complex64::new(1.0, 0.0));

        for n in [1usize, 2, 4, 8, 64] {
            let f = inverse_dft_matrix(n);
            let fh = f.t().mapv(|c| c.conj());
            let g = cmatmul(&fh, &f);
            let mut err = 0.0f64;
            for ((i, j), c) in g.indexed_iter() {
                let want = if i == j { 1.0 } else { 0.0 };
                err = err.max((c - Complex64::new(want, 0.0)).norm());
            }
            assert!(err < 1e-13, "N={n} err {err}");
        }
    }

    #[test]
    fn dft_column_is_a_grid_tone() {
        let n = 16;
        let f = inverse_dft_matrix(n);
        let m = 5;
        let mut e = vec![Complex64::new(0.0, 0.0); n];
        e[m] = Complex64::new(1.0, 0.0);
        let col = cmatvec(&f, &e);
        for (t, c) in col.iter().enumerate() {
            let tone = Complex64::from_polar(1.0 / (n as f64).sqrt(), 2.0 * PI * (m * t) as f64 / n as f64);
            assert!((c - tone).norm() < 1e-14);
        }
    }

    #[test]
    fn hard_threshold_cases() {
        // K = 4, magnitudes (3, 1, 2, 0.5) realized as pure real parts
        let z = array![3.0, 0.0, 0.0, 0.5, 0.0, 1.0, 2.0, 0.0];
        let (out, support) = hard_threshold(z.view(), 2);
        assert_eq!(support, vec![0, 2]);
        assert_eq!(out, array![3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);

        let (all, s) = hard_threshold(z.view(), 4);
        assert_eq!(all, z);
        assert_eq!(s, vec![0, 1, 2, 3]);

        let (none, s) = hard_threshold(z.view(), 0);
        assert!(none.iter().all(|&v| v == 0.0));
        assert!(s.is_empty());
    }

    #[test]
    fn hard_threshold_ties_prefer_lower_index() {
        let z = array![1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
        let (_, support) = hard_threshold(z.view(), 2);
        assert_eq!(support, vec![0, 1]);
    }

    #[test]
    fn soft_threshold_cases() {
        let x = array![2.0, -2.0];
        assert_eq!(soft_threshold(x.view(), 0.0), x);
        assert_eq!(soft_threshold(x.view(), 1.0), array![1.0, -1.0]);
        assert_eq!(soft_threshold(array![0.2, -0.3].view(), 0.5), array![0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn vector_homomorphism(seed in any::<u64>(), m in 1usize..8, n in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let phi = random_cmat(&mut rng, m, n);
            let x = random_cvec(&mut rng, n);
            let lhs = realize_vector(&cmatvec(&phi, &x));
            let rhs = realize_matrix(&phi).dot(&realize_vector(&x));
            let err = (&lhs - &rhs).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
            prop_assert!(err < 1e-12);
        }

        #[test]
        fn hard_threshold_idempotent_and_sparse(
            vals in proptest::collection::vec(-10.0f64..10.0, 2..40),
            omega in 0usize..20,
        ) {
            let mut vals = vals;
            if vals.len() % 2 == 1 { vals.pop(); }
            let k = vals.len() / 2;
            let omega = omega.min(k);
            let z = Array1::from(vals);
            let (once, _) = hard_threshold(z.view(), omega);
            let (twice, _) = hard_threshold(once.view(), omega);
            prop_assert_eq!(&once, &twice);
            let active = (0..k).filter(|&i| once[i] != 0.0 || once[i + k] != 0.0).count();
            prop_assert!(active <= omega);
        }
    }
}
