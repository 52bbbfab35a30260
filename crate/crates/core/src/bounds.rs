//! Rademacher complexity and generalization bound calculators for the
//! structured model class, plus the embedding coherence they depend on.

use crate::error::invalid;
use crate::linalg::max_abs_cosine;
use crate::{Matrix, Result};

/// Constants entering the bounds. Nothing here is estimated from data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    /// Lipschitz constant of the loss.
    pub lipschitz: f64,
    /// Norm bound on the last-layer weights.
    pub weight_norm: f64,
    pub samples: usize,
    pub depth: usize,
    /// Embedding coherence `mu*` in `[0, 1]`.
    pub mu_star: f64,
    /// `||X||_F`.
    pub x_frobenius: f64,
    /// Confidence parameter in `(0, 1)`.
    pub delta: f64,
    /// Empirical risk in `[0, 1]`.
    pub emp_risk: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64, name: &str| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid!("{name} must be a nonnegative finite number, got {v}"))
            }
        };
        nonneg(self.lipschitz, "L")?;
        nonneg(self.weight_norm, "B_w")?;
        nonneg(self.x_frobenius, "||X||_F")?;
        if self.samples == 0 {
            return Err(invalid!("N must be positive"));
        }
        if !(0.0..=1.0).contains(&self.mu_star) {
            return Err(invalid!("mu* must lie in [0, 1], got {}", self.mu_star));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(0.0..=1.0).contains(&self.emp_risk) {
            return Err(invalid!("empirical risk must lie in [0, 1], got {}", self.emp_risk));
        }
        Ok(())
    }
}

/// Largest absolute cosine between distinct columns of `Y`; 0 for one column.
pub fn embedding_coherence(y: &Matrix) -> Result<f64> {
    if y.ncols() == 0 {
        return Err(invalid!("embedding matrix has no columns"));
    }
    max_abs_cosine(y).ok_or_else(|| invalid!("embedding matrix has a zero or non-finite column"))
}

/// `L B_w sqrt(((N - 1) mu* + 1) T) / N * ||X||_F`.
pub fn rademacher_bound(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    let n = inputs.samples as f64;
    let spread = ((n - 1.0) * inputs.mu_star + 1.0) * inputs.depth as f64;
    Ok(inputs.lipschitz * inputs.weight_norm * libm::sqrt(spread) / n * inputs.x_frobenius)
}

/// `sqrt(8 ln(2/delta) / N)`.
pub fn confidence_term(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    Ok(libm::sqrt(8.0 * libm::log(2.0 / inputs.delta) / inputs.samples as f64))
}

/// Empirical risk plus the Rademacher and confidence terms, not capped at 1.
pub fn generalization_bound(inputs: &BoundInputs) -> Result<f64> {
    Ok(inputs.emp_risk + rademacher_bound(inputs)? + confidence_term(inputs)?)
}
