//! Seeded random instances for simulations and equivalence suites.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::gaussian::GaussianDensity;
use crate::linalg::cov_sqrt;

pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

pub fn normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Well-conditioned random SPD matrix: `B Bᵀ/n + 0.5 I` with Gaussian `B`.
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let b = normal_matrix(rng, n, n);
    let mut p = &b * b.transpose() / n.max(1) as f64;
    for i in 0..n {
        p[(i, i)] += 0.5;
    }
    (&p + p.transpose()) * 0.5
}

pub fn random_gaussian<R: Rng + ?Sized>(rng: &mut R, n: usize) -> GaussianDensity {
    let cov = random_spd(rng, n);
    GaussianDensity::new(normal_vector(rng, n), cov).expect("random SPD density is valid")
}

/// Lower-triangular matrix with diagonal entries in `[0.5, 1.5)`.
pub fn random_lower_triangular<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        if i > j {
            rng.sample::<f64, _>(StandardNormal) * 0.5
        } else if i == j {
            0.5 + rng.random::<f64>()
        } else {
            0.0
        }
    })
}

/// Haar-distributed orthogonal matrix from the QR factors of a Gaussian matrix.
pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let qr = normal_matrix(rng, n, n).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Draw from `density`.
pub fn sample<R: Rng + ?Sized>(rng: &mut R, density: &GaussianDensity) -> DVector<f64> {
    let l = cov_sqrt(density.cov(), "sample").expect("sampling requires a factorable covariance");
    density.mean() + l * normal_vector(rng, density.dim())
}

/// Shuffle `0..n` deterministically.
pub fn permutation<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
