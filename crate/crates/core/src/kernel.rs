//! The finite kernel `k_{T,N}(x, x') = <y_T(x), y_T(x')> / N`, its Gram
//! matrices, Monte-Carlo oracles for the first layer and kernel ridge
//! regression on top of it.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::engine::NokConfig;
use crate::error::invalid;
use crate::prox::{Family, Penalty};
use crate::random;
use crate::sampler::{RotationState, StructuredDesign};
use crate::{maybe_par_map, Error, Matrix, Result, Vector};

/// Relative PSD tolerance: `min eig >= -PSD_TOL * max(1, max diag)`.
pub const PSD_TOL: f64 = 1e-8;
/// Default feature cache budget, in stored reals.
pub const DEFAULT_CACHE_BUDGET: usize = 1 << 24;
/// Smallest Monte-Carlo sample count accepted by the oracle.
pub const MC_MIN_SAMPLES: usize = 1000;

/// `y_T(x)` from `y_0 = 0`.
pub fn feature_map(config: &NokConfig, x: &Vector) -> Result<Vector> {
    Ok(config.forward(x)?.last().clone())
}

/// `k_{T,N}(x, x')`.
pub fn kernel_value(config: &NokConfig, x: &Vector, x2: &Vector) -> Result<f64> {
    let n = config.design().samples() as f64;
    Ok(feature_map(config, x)?.dot(&feature_map(config, x2)?) / n)
}

/// Symmetric kernel matrix together with its PSD check.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub k: Matrix,
    pub min_eigenvalue: f64,
    /// `PSD_TOL * max(1, max diag)`.
    pub psd_tolerance: f64,
    /// Training inputs, `d x S`.
    pub inputs: Matrix,
    /// Cached `N x S` features when they fit the budget.
    pub features: Option<Matrix>,
}

impl GramMatrix {
    pub fn len(&self) -> usize {
        self.k.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.k.nrows() == 0
    }

    pub fn is_psd(&self) -> bool {
        self.min_eigenvalue >= -self.psd_tolerance
    }
}

pub fn gram(config: &NokConfig, xs: &Matrix) -> Result<GramMatrix> {
    gram_with_budget(config, xs, DEFAULT_CACHE_BUDGET)
}

/// Gram matrix of `xs` (`d x S`). Features are cached when `S * N <= budget`,
/// otherwise recomputed for every pair.
pub fn gram_with_budget(config: &NokConfig, xs: &Matrix, budget: usize) -> Result<GramMatrix> {
    let s = xs.ncols();
    if s == 0 {
        return Err(invalid!("Gram matrix needs at least one sample"));
    }
    let n = config.design().samples();
    let nf = n as f64;
    let (k, features) = if s.saturating_mul(n) <= budget {
        let f = config.features(xs)?;
        let mut k = f.tr_mul(&f) / nf;
        symmetrize_upper(&mut k);
        (k, Some(f))
    } else {
        let rows: Vec<Result<Vec<f64>>> = maybe_par_map(s, |i| {
            let fi = feature_map(config, &xs.column(i).into_owned())?;
            (i..s)
                .map(|j| Ok(fi.dot(&feature_map(config, &xs.column(j).into_owned())?) / nf))
                .collect()
        });
        let mut k = Matrix::zeros(s, s);
        for (i, row) in rows.into_iter().enumerate() {
            for (off, v) in row?.into_iter().enumerate() {
                k[(i, i + off)] = v;
            }
        }
        symmetrize_upper(&mut k);
        (k, None)
    };
    let min_eigenvalue = k.symmetric_eigenvalues().min();
    let max_diag = k.diagonal().max();
    let psd_tolerance = PSD_TOL * if max_diag > 1.0 { max_diag } else { 1.0 };
    if !(min_eigenvalue >= -psd_tolerance) {
        return Err(Error::Integrity(format!(
            "Gram matrix is not PSD: min eigenvalue {min_eigenvalue:e} below -{psd_tolerance:e}"
        )));
    }
    Ok(GramMatrix {
        k,
        min_eigenvalue,
        psd_tolerance,
        inputs: xs.clone(),
        features,
    })
}

fn symmetrize_upper(k: &mut Matrix) {
    for i in 0..k.nrows() {
        for j in 0..i {
            k[(i, j)] = k[(j, i)];
        }
    }
}

/// A Monte-Carlo estimate and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl McEstimate {
    fn from_values(values: &[f64]) -> Self {
        let len = values.len() as f64;
        let mean = values.iter().sum::<f64>() / len;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (len - 1.0)
        } else {
            0.0
        };
        Self {
            estimate: mean,
            stderr: libm::sqrt(var / len),
            samples: values.len(),
        }
    }
}

fn scalar_prox(penalty: &Penalty) -> Result<()> {
    if penalty.family() == Family::TopK {
        return Err(Error::Unsupported("first-layer kernels need a scalar proximal map".into()));
    }
    Ok(())
}

fn check_pair(x: &Vector, x2: &Vector) -> Result<()> {
    if x.len() != x2.len() || x.is_empty() {
        return Err(invalid!("inputs must share a nonzero dimension, got {} and {}", x.len(), x2.len()));
    }
    Ok(())
}

/// `E_w[h(w^T x) h(w^T x')]` for `w` uniform on the sphere of radius `sqrt(d)`.
pub fn mc_first_layer_kernel(x: &Vector, x2: &Vector, penalty: &Penalty, samples: usize, seed: u64) -> Result<McEstimate> {
    scalar_prox(penalty)?;
    check_pair(x, x2)?;
    if samples < MC_MIN_SAMPLES {
        return Err(invalid!("Monte-Carlo oracle needs at least {MC_MIN_SAMPLES} samples"));
    }
    let d = x.len();
    let radius = libm::sqrt(d as f64);
    let mut rng = random::seeded(seed);
    let mut values = Vec::with_capacity(samples);
    for _ in 0..samples {
        let w = random::sphere_point(&mut rng, d, radius);
        values.push(penalty.prox(w.dot(x))? * penalty.prox(w.dot(x2))?);
    }
    Ok(McEstimate::from_values(&values))
}

/// The structured first layer stacked over independent Haar rotations:
/// `W = [W_1, ..., W_K]` with `W_b = sqrt(d) R_b^T B`. The stacked matrix still
/// satisfies `W W^T / (K N) = I`.
#[derive(Debug, Clone)]
pub struct BlockDesign {
    design: Arc<StructuredDesign>,
    rotations: Vec<RotationState>,
}

impl BlockDesign {
    pub fn new(design: Arc<StructuredDesign>, blocks: usize, seed: u64) -> Result<Self> {
        if blocks == 0 {
            return Err(invalid!("block design needs at least one block"));
        }
        let mut rng = random::seeded(seed);
        let rotations = (0..blocks).map(|_| RotationState::random(&mut rng, design.dim())).collect();
        Ok(Self { design, rotations })
    }

    pub fn blocks(&self) -> usize {
        self.rotations.len()
    }

    pub fn samples(&self) -> usize {
        self.blocks() * self.design.samples()
    }

    pub fn rotations(&self) -> &[RotationState] {
        &self.rotations
    }

    pub fn design(&self) -> &StructuredDesign {
        &self.design
    }

    /// The full `d x (K N)` matrix.
    pub fn sampling_matrix(&self) -> Result<Matrix> {
        let parts = self
            .rotations
            .iter()
            .map(|r| self.design.sampling_matrix(r))
            .collect::<Result<Vec<_>>>()?;
        let n = self.design.samples();
        let mut w = Matrix::zeros(self.design.dim(), self.samples());
        for (b, part) in parts.iter().enumerate() {
            w.columns_mut(b * n, n).copy_from(part);
        }
        Ok(w)
    }

    /// `k_{1,KN}(x, x') = (1/KN) sum_i h(w_i^T x) h(w_i^T x')`, with the spread
    /// of the per-block averages as the standard error.
    pub fn first_layer_kernel(&self, x: &Vector, x2: &Vector, penalty: &Penalty) -> Result<McEstimate> {
        scalar_prox(penalty)?;
        check_pair(x, x2)?;
        if x.len() != self.design.dim() {
            return Err(invalid!("inputs have dimension {}, design has d={}", x.len(), self.design.dim()));
        }
        let n = self.design.samples() as f64;
        let per_block = maybe_par_map(self.blocks(), |b| {
            let r = &self.rotations[b];
            let a = penalty.prox_vector(&self.design.apply(r, 1.0, x)?)?;
            let a2 = penalty.prox_vector(&self.design.apply(r, 1.0, x2)?)?;
            Ok(a.dot(&a2) / n)
        })
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
        Ok(McEstimate::from_values(&per_block))
    }
}

/// Kernel ridge regression on a Gram matrix.
#[derive(Debug, Clone)]
pub struct RidgeModel {
    pub alpha: Vector,
    pub lambda_r: f64,
    /// `||(K + lambda_r S I) alpha - labels|| / ||labels||`.
    pub residual: f64,
    inputs: Matrix,
    features: Option<Matrix>,
}

/// Smallest `lambda_min / lambda_max` accepted for an unregularized solve.
pub const RIDGE_MIN_RCOND: f64 = 1e-10;
/// Largest accepted relative residual of the normal equations.
pub const RIDGE_RESIDUAL_TOL: f64 = 1e-8;

/// Solves `(K + lambda_r S I) alpha = labels` by Cholesky.
pub fn ridge_fit(gram: &GramMatrix, labels: &Vector, lambda_r: f64) -> Result<RidgeModel> {
    let s = gram.len();
    if labels.len() != s {
        return Err(invalid!("{} labels for a {s}x{s} Gram matrix", labels.len()));
    }
    if !(lambda_r >= 0.0 && lambda_r.is_finite()) {
        return Err(invalid!("ridge strength must be a nonnegative finite number"));
    }
    let mut system = gram.k.clone();
    for i in 0..s {
        system[(i, i)] += lambda_r * s as f64;
    }
    if lambda_r == 0.0 {
        let eig = system.symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        if !(hi > 0.0 && lo / hi >= RIDGE_MIN_RCOND) {
            return Err(Error::Singular(format!(
                "Gram matrix is singular or ill-conditioned (eigenvalues in [{lo:e}, {hi:e}]); use lambda_r > 0"
            )));
        }
    }
    let chol = system
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("ridge system is not positive definite".into()))?;
    let mut alpha = chol.solve(labels);
    // one step of iterative refinement
    let correction = chol.solve(&(labels - &system * &alpha));
    alpha += correction;
    let scale = labels.norm();
    let residual = (&system * &alpha - labels).norm() / if scale > 0.0 { scale } else { 1.0 };
    if !(residual <= RIDGE_RESIDUAL_TOL) {
        return Err(Error::Integrity(format!("ridge residual {residual:e} exceeds {RIDGE_RESIDUAL_TOL:e}")));
    }
    Ok(RidgeModel {
        alpha,
        lambda_r,
        residual,
        inputs: gram.inputs.clone(),
        features: gram.features.clone(),
    })
}

impl RidgeModel {
    /// `sum_i alpha_i k_{T,N}(x_i, x_new)`; `config` must be the one the Gram
    /// matrix was built with.
    pub fn predict(&self, config: &NokConfig, x_new: &Vector) -> Result<f64> {
        let f = feature_map(config, x_new)?;
        let n = config.design().samples() as f64;
        let k = match &self.features {
            Some(train) => {
                if train.nrows() != f.len() {
                    return Err(invalid!("model features have length {}, config gives {}", train.nrows(), f.len()));
                }
                train.tr_mul(&f) / n
            }
            None => {
                let vals = (0..self.inputs.ncols())
                    .map(|i| Ok(feature_map(config, &self.inputs.column(i).into_owned())?.dot(&f) / n))
                    .collect::<Result<Vec<f64>>>()?;
                Vector::from_vec(vals)
            }
        };
        Ok(self.alpha.dot(&k))
    }

    pub fn predict_many(&self, config: &NokConfig, xs: &Matrix) -> Result<Vector> {
        let vals = (0..xs.ncols())
            .map(|j| self.predict(config, &xs.column(j).into_owned()))
            .collect::<Result<Vec<f64>>>()?;
        Ok(Vector::from_vec(vals))
    }
}
