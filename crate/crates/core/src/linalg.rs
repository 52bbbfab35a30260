//! Small dense helpers shared by the modules.

use crate::{Matrix, Vector};

/// `||A - c I||_F` for a square matrix.
pub fn frobenius_from_scaled_identity(a: &Matrix, c: f64) -> f64 {
    let mut acc = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            let t = if i == j { a[(i, j)] - c } else { a[(i, j)] };
            acc += t * t;
        }
    }
    libm::sqrt(acc)
}

/// `max(||R^T R - I||_F, ||R R^T - I||_F)`.
pub fn orthogonality_error(r: &Matrix) -> f64 {
    let rtr = r.transpose() * r;
    let rrt = r * r.transpose();
    let a = frobenius_from_scaled_identity(&rtr, 1.0);
    let b = frobenius_from_scaled_identity(&rrt, 1.0);
    if a > b {
        a
    } else {
        b
    }
}

pub fn all_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Maximum absolute cosine between distinct columns.
///
/// Returns `None` when some column has zero norm.
pub(crate) fn max_abs_cosine(m: &Matrix) -> Option<f64> {
    let norms: alloc::vec::Vec<f64> = (0..m.ncols()).map(|j| m.column(j).norm()).collect();
    if norms.iter().any(|&n| n == 0.0 || !n.is_finite()) {
        return None;
    }
    let gram = m.transpose() * m;
    let mut best = 0.0f64;
    for i in 0..m.ncols() {
        for j in (i + 1)..m.ncols() {
            let c = libm::fabs(gram[(i, j)]) / (norms[i] * norms[j]);
            if c > best {
                best = c;
            }
        }
    }
    // rounding can push an exactly parallel pair a hair over 1
    Some(if best > 1.0 { 1.0 } else { best })
}
