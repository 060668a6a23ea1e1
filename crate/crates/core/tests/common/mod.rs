//! Reference solutions built without the crate's propagator.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Ring of `n >= 3` sites: `eps` on the diagonal, `-1` between neighbours.
pub fn ring_hamiltonian(eps: &[f64]) -> DMatrix<f64> {
    let n = eps.len();
    assert!(n >= 3);
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        h[(i, i)] = eps[i];
        h[(i, (i + 1) % n)] = -1.0;
        h[((i + 1) % n, i)] = -1.0;
    }
    h
}

/// `exp(-i h tau)` by scaling and squaring with a truncated Taylor series.
pub fn dense_propagator(h: &DMatrix<f64>, tau: f64) -> DMatrix<Complex64> {
    let n = h.nrows();
    let a: DMatrix<Complex64> = h.map(|x| c(0.0, -x * tau));
    let norm = a.iter().map(|z| z.norm()).sum::<f64>();
    let mut squarings = 0;
    while norm / 2f64.powi(squarings) > 0.25 {
        squarings += 1;
    }
    let a = a / c(2f64.powi(squarings), 0.0);
    let mut sum = DMatrix::<Complex64>::identity(n, n);
    let mut term = DMatrix::<Complex64>::identity(n, n);
    for k in 1..=30 {
        term = &term * &a / c(k as f64, 0.0);
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// `exp(-i h t) psi` through the eigendecomposition of the symmetric `h`.
pub fn eigen_evolve(h: &DMatrix<f64>, psi: &[Complex64], t: f64) -> Vec<Complex64> {
    let eig = SymmetricEigen::new(h.clone());
    let v = eig.eigenvectors.map(|x| c(x, 0.0));
    let coeffs = v.adjoint() * DVector::from_column_slice(psi);
    let phased = DVector::from_iterator(
        coeffs.len(),
        coeffs.iter().zip(eig.eigenvalues.iter()).map(|(a, &e)| a * Complex64::from_polar(1.0, -e * t)),
    );
    (v * phased).iter().copied().collect()
}

pub fn apply(m: &DMatrix<Complex64>, psi: &[Complex64]) -> Vec<Complex64> {
    (m * DVector::from_column_slice(psi)).iter().copied().collect()
}

pub fn max_deviation(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Normalized random state.
pub fn random_state(n: usize, seed: u64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<Complex64> = (0..n).map(|_| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
    let s = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|z| z / s).collect()
}

/// `J_n(x) = (1/pi) int_0^pi cos(n theta - x sin theta) d theta`, by the
/// trapezoid rule, which converges geometrically for this periodic integrand.
pub fn bessel_j(n: i64, x: f64) -> f64 {
    let m = 4000;
    let h = std::f64::consts::PI / m as f64;
    let f = |th: f64| (n as f64 * th - x * th.sin()).cos();
    let inner: f64 = (1..m).map(|k| f(k as f64 * h)).sum();
    (inner + 0.5 * (f(0.0) + f(std::f64::consts::PI))) * h / std::f64::consts::PI
}

/// Second moment of the free-lattice solution `psi_n(t) = i^n J_n(2t)`.
pub fn free_lattice_m2(t: f64, half_width: i64) -> f64 {
    (-half_width..=half_width)
        .map(|n| (n * n) as f64 * bessel_j(n, 2.0 * t).powi(2))
        .sum()
}
