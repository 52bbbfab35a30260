//! Seeded sampling helpers. All randomness in the crate flows through
//! [`seeded`] so a single `u64` reproduces every draw.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{Matrix, Vector};

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vector {
    Vector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Uniform point on the sphere of radius `radius` in `dim` dimensions.
pub fn sphere_point<R: Rng + ?Sized>(rng: &mut R, dim: usize, radius: f64) -> Vector {
    loop {
        let g = gaussian_vector(rng, dim);
        let norm = g.norm();
        if norm > 1e-300 {
            return g * (radius / norm);
        }
    }
}

/// Haar-distributed orthogonal matrix via QR of a Gaussian matrix with the
/// sign of `diag(R)` folded into `Q`.
pub fn haar_orthogonal<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Matrix {
    let qr = gaussian_matrix(rng, dim, dim).qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Skew-symmetric matrix with upper-triangular entries uniform in `[-scale, scale]`.
pub fn skew_matrix<R: Rng + ?Sized>(rng: &mut R, dim: usize, scale: f64) -> Matrix {
    let mut m = Matrix::zeros(dim, dim);
    for i in 0..dim {
        for j in (i + 1)..dim {
            let a = rng.random_range(-scale..=scale);
            m[(i, j)] = a;
            m[(j, i)] = -a;
        }
    }
    m
}
