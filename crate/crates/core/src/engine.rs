//! The finite proximal fixed-point iteration
//!
//! ```text
//! y_{t+1} = h( g W^T x + (I - W^T W / N) y_t ),   W = sqrt(d) R^T B
//! ```
//!
//! and certificate checkers for its descent guarantees. The objective is
//! `Q(y) = 0.5 ||g x - W y / N||^2 + phi(y) / N`, where `g` is the input gain.
//! With `g = 1` this is the plain reconstruction objective; with
//! `g = 1/sqrt(N)` it equals `(0.5 ||x - D y||^2 + phi(y)) / N` for
//! `D = W / sqrt(N)`, the column-normalized dictionary.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::error::invalid;
use crate::prox::{Family, Penalty};
use crate::sampler::{RotationState, StructuredDesign};
use crate::{Error, Matrix, Result, Vector};

/// Default violation tolerance, scaled by `1 + |Q(y_0)|`.
pub const DESCENT_TOL: f64 = 1e-10;
/// Tolerance for the agreement of the two descent-bound expressions.
pub const IDENTITY_TOL: f64 = 1e-12;
/// Slack for the convex-rate inequality, scaled by `1 + |Q(y_0)|`.
pub const RATE_TOL: f64 = 1e-8;

/// Relative tolerances used by the verifiers; each is scaled by `1 + |Q(y_0)|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub descent: f64,
    pub identity: f64,
    pub rate: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            descent: DESCENT_TOL,
            identity: IDENTITY_TOL,
            rate: RATE_TOL,
        }
    }
}

/// One rotation shared by every step, or one per layer.
#[derive(Debug, Clone)]
pub enum Rotations {
    Shared(RotationState),
    PerLayer(Vec<RotationState>),
}

impl Rotations {
    fn at(&self, layer: usize) -> &RotationState {
        match self {
            Rotations::Shared(r) => r,
            Rotations::PerLayer(rs) => &rs[layer],
        }
    }

    fn shared(&self) -> Result<&RotationState> {
        match self {
            Rotations::Shared(r) => Ok(r),
            Rotations::PerLayer(_) => Err(Error::Unsupported(
                "descent certificates need a rotation shared by all layers".into(),
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NokConfig {
    design: Arc<StructuredDesign>,
    rotations: Rotations,
    penalty: Penalty,
    steps: usize,
    input_gain: f64,
}

impl NokConfig {
    pub fn new(
        design: Arc<StructuredDesign>,
        rotations: Rotations,
        penalty: Penalty,
        steps: usize,
        input_gain: f64,
    ) -> Result<Self> {
        if steps == 0 {
            return Err(invalid!("T must be at least 1"));
        }
        if !(input_gain > 0.0 && input_gain.is_finite()) {
            return Err(invalid!("input gain must be positive and finite (got {input_gain})"));
        }
        match &rotations {
            Rotations::Shared(r) if r.dim() != design.dim() => {
                return Err(invalid!("rotation dimension {} != d = {}", r.dim(), design.dim()))
            }
            Rotations::PerLayer(rs) => {
                if rs.len() != steps {
                    return Err(invalid!("{} per-layer rotations for T = {steps}", rs.len()));
                }
                if rs.iter().any(|r| r.dim() != design.dim()) {
                    return Err(invalid!("per-layer rotation dimension mismatch"));
                }
            }
            _ => {}
        }
        if let Some(k) = penalty.k() {
            if k > design.samples() {
                return Err(invalid!("k = {k} exceeds N = {}", design.samples()));
            }
        }
        Ok(Self {
            design,
            rotations,
            penalty,
            steps,
            input_gain,
        })
    }

    /// Shared rotation, unit gain.
    pub fn shared(design: Arc<StructuredDesign>, r: RotationState, penalty: Penalty, steps: usize) -> Result<Self> {
        Self::new(design, Rotations::Shared(r), penalty, steps, 1.0)
    }

    pub fn design(&self) -> &StructuredDesign {
        &self.design
    }

    pub fn design_arc(&self) -> &Arc<StructuredDesign> {
        &self.design
    }

    pub fn rotations(&self) -> &Rotations {
        &self.rotations
    }

    pub fn penalty(&self) -> &Penalty {
        &self.penalty
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn input_gain(&self) -> f64 {
        self.input_gain
    }

    pub fn with_steps(&self, steps: usize) -> Result<Self> {
        Self::new(self.design.clone(), self.rotations.clone(), self.penalty, steps, self.input_gain)
    }

    pub fn with_penalty(&self, penalty: Penalty) -> Result<Self> {
        Self::new(self.design.clone(), self.rotations.clone(), penalty, self.steps, self.input_gain)
    }

    fn n_samples(&self) -> f64 {
        self.design.samples() as f64
    }

    fn check_input(&self, x: &Vector) -> Result<()> {
        if x.len() != self.design.dim() {
            return Err(invalid!("input has length {}, expected d = {}", x.len(), self.design.dim()));
        }
        Ok(())
    }

    fn check_code(&self, y: &Vector) -> Result<()> {
        if y.len() != self.design.samples() {
            return Err(invalid!("code has length {}, expected N = {}", y.len(), self.design.samples()));
        }
        Ok(())
    }

    /// `(I - W^T W / N) v` without forming the `N x N` matrix.
    pub fn residual_operator(&self, layer: usize, v: &Vector) -> Result<Vector> {
        self.check_code(v)?;
        let r = self.rotations.at(layer);
        let wv = self.design.synthesize(r, v)?;
        let back = self.design.apply(r, 1.0 / self.n_samples(), &wv)?;
        Ok(v - back)
    }

    /// `Q(y)` evaluated with the layer-0 rotation. For top-k this is
    /// `0.5 ||x - D y||^2` with `D = W / sqrt(N)`.
    pub fn objective(&self, x: &Vector, y: &Vector) -> Result<f64> {
        self.objective_at(0, x, y)
    }

    pub fn objective_at(&self, layer: usize, x: &Vector, y: &Vector) -> Result<f64> {
        self.check_input(x)?;
        self.check_code(y)?;
        let n = self.n_samples();
        let wy = self.design.synthesize(self.rotations.at(layer), y)?;
        if self.penalty.family() == Family::TopK {
            let resid = x - wy / libm::sqrt(n);
            return Ok(0.5 * resid.norm_squared());
        }
        let resid = x * self.input_gain - wy / n;
        let phi = self.penalty.value_sum(y)?;
        Ok(0.5 * resid.norm_squared() + phi / n)
    }

    /// `g W^T x` for the given layer.
    pub fn drive(&self, layer: usize, x: &Vector) -> Result<Vector> {
        self.check_input(x)?;
        self.design.apply(self.rotations.at(layer), self.input_gain, x)
    }

    /// Prox argument `a_{t+1} = g W^T x + (I - W^T W / N) y_t`.
    pub fn prox_argument(&self, layer: usize, x: &Vector, y: &Vector) -> Result<Vector> {
        Ok(self.drive(layer, x)? + self.residual_operator(layer, y)?)
    }

    /// One proximal update from `y_t` through layer 0.
    pub fn step(&self, x: &Vector, y: &Vector) -> Result<Vector> {
        self.step_at(0, x, y)
    }

    pub fn step_at(&self, layer: usize, x: &Vector, y: &Vector) -> Result<Vector> {
        let mut a = self.prox_argument(layer, x, y)?;
        self.penalty.prox_vector_in_place(&mut a)?;
        Ok(a)
    }

    /// Runs `T` steps from `y_0 = 0`.
    pub fn forward(&self, x: &Vector) -> Result<Trajectory> {
        self.forward_from(x, Vector::zeros(self.design.samples()))
    }

    pub fn forward_from(&self, x: &Vector, y0: Vector) -> Result<Trajectory> {
        self.check_input(x)?;
        self.check_code(&y0)?;
        let shared_drive = match &self.rotations {
            Rotations::Shared(r) => Some(self.design.apply(r, self.input_gain, x)?),
            Rotations::PerLayer(_) => None,
        };
        let mut iterates = Vec::with_capacity(self.steps + 1);
        let mut objectives = Vec::with_capacity(self.steps + 1);
        let mut gaps = Vec::with_capacity(self.steps);
        objectives.push(finite(self.objective(x, &y0)?, 0, "objective")?);
        iterates.push(y0);
        for t in 0..self.steps {
            let y = &iterates[t];
            let drive = match &shared_drive {
                Some(v) => v.clone(),
                None => self.drive(t, x)?,
            };
            let mut next = drive + self.residual_operator(t, y)?;
            self.penalty.prox_vector_in_place(&mut next)?;
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericOverflow {
                    step: t + 1,
                    what: "non-finite iterate".into(),
                });
            }
            let delta = &next - y;
            let gap = self.residual_operator(t, &delta)?.norm_squared() / (2.0 * self.n_samples());
            gaps.push(gap);
            objectives.push(finite(self.objective(x, &next)?, t + 1, "objective")?);
            iterates.push(next);
        }
        Ok(Trajectory {
            input: x.clone(),
            iterates,
            objectives,
            step_gaps: gaps,
        })
    }

    /// Final iterates `y_T(x_s)` for every column of `xs`, as an `N x S` matrix.
    pub fn features(&self, xs: &Matrix) -> Result<Matrix> {
        if xs.nrows() != self.design.dim() {
            return Err(invalid!("data has {} rows, expected d = {}", xs.nrows(), self.design.dim()));
        }
        let cols: Vec<Vector> = crate::maybe_par_map(xs.ncols(), |s| {
            let x = xs.column(s).clone_owned();
            self.forward(&x).map(|t| t.last().clone())
        })
        .into_iter()
        .collect::<Result<_>>()?;
        Ok(Matrix::from_columns(&cols))
    }
}

fn finite(v: f64, step: usize, what: &str) -> Result<f64> {
    // +inf is the barrier value of the indicator penalty, not an overflow
    if v.is_nan() || v == f64::NEG_INFINITY {
        return Err(Error::NumericOverflow {
            step,
            what: format!("{what} is {v}"),
        });
    }
    Ok(v)
}

/// Iterates `y_0..y_T` with the objective after each step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub input: Vector,
    pub iterates: Vec<Vector>,
    pub objectives: Vec<f64>,
    /// `(1/2N) ||(I - W^T W/N)(y_{t+1} - y_t)||^2`, the guaranteed decrease per step.
    pub step_gaps: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.iterates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterates.is_empty()
    }

    pub fn last(&self) -> &Vector {
        self.iterates.last().expect("trajectory holds y_0")
    }
}

/// Outcome of a certificate check.
#[derive(Debug, Clone, PartialEq)]
pub struct DescentReport {
    pub check: &'static str,
    /// Largest signed violation per step (or per horizon `T` for the rate check).
    pub violations: Vec<f64>,
    pub max_violation: f64,
    pub tolerance: f64,
    /// Largest disagreement between the two bound expressions, when applicable.
    pub max_identity_gap: f64,
    pub identity_tolerance: f64,
    /// Steps where a strict decrease was required but not observed.
    pub strict_failures: usize,
    pub passed: bool,
}

impl DescentReport {
    fn finish(
        check: &'static str,
        violations: Vec<f64>,
        tolerance: f64,
        max_identity_gap: f64,
        identity_tolerance: f64,
        strict_failures: usize,
    ) -> Self {
        let max_violation = violations.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let max_violation = if violations.is_empty() { 0.0 } else { max_violation };
        let passed = max_violation <= tolerance
            && max_identity_gap <= identity_tolerance
            && strict_failures == 0
            && max_violation.is_finite();
        Self {
            check,
            violations,
            max_violation,
            tolerance,
            max_identity_gap,
            identity_tolerance,
            strict_failures,
            passed,
        }
    }
}

fn consistent(config: &NokConfig, traj: &Trajectory) -> Result<()> {
    let x = &traj.input;
    config.check_input(x)?;
    if traj.iterates.is_empty() || traj.objectives.len() != traj.iterates.len() {
        return Err(invalid!("trajectory is empty or malformed"));
    }
    for y in &traj.iterates {
        config.check_code(y)?;
    }
    let scale = 1.0 + libm::fabs(traj.objectives[0]);
    for (t, pair) in traj.iterates.windows(2).enumerate() {
        let a = config.prox_argument(t, x, &pair[0])?;
        let next = config.penalty.prox_vector(&a)?;
        if (&next - &pair[1]).norm() > 1e-9 * (1.0 + next.norm()) {
            return Err(invalid!("trajectory step {} was not produced by this configuration", t + 1));
        }
        // |h(a)| <= |a| elementwise
        if pair[1].iter().zip(a.iter()).any(|(y, a)| libm::fabs(*y) > libm::fabs(*a) * (1.0 + 1e-12)) {
            return Err(invalid!("prox output at step {} is not a shrinkage of its argument", t + 1));
        }
    }
    for (y, &q) in traj.iterates.iter().zip(traj.objectives.iter()) {
        let fresh = config.objective(x, y)?;
        if !(libm::fabs(fresh - q) <= 1e-9 * scale || fresh == q) {
            return Err(invalid!("recorded objective does not match this configuration"));
        }
    }
    Ok(())
}

/// Checks `Q(y_{t+1}) <= Q(y_t) - (1/2N)||D||^2 + 0.5 ||W D / N||^2 <= Q(y_t)`
/// for `D = y_{t+1} - y_t`, and that the middle bound equals
/// `Q(y_t) - (1/2N) ||(I - W^T W/N) D||^2`.
pub fn verify_monotonic(config: &NokConfig, traj: &Trajectory) -> Result<DescentReport> {
    verify_monotonic_with(config, traj, &Tolerances::default())
}

pub fn verify_monotonic_with(config: &NokConfig, traj: &Trajectory, tols: &Tolerances) -> Result<DescentReport> {
    config.rotations.shared()?;
    if config.penalty.family() == Family::TopK {
        return Err(Error::Unsupported("use ksparse_run_and_verify for top-k".into()));
    }
    consistent(config, traj)?;
    let n = config.n_samples();
    let q0 = traj.objectives[0];
    let tol = tols.descent * (1.0 + libm::fabs(q0));
    let mut violations = Vec::with_capacity(traj.step_gaps.len());
    let mut identity_gap = 0.0f64;
    for t in 0..traj.len() - 1 {
        let delta = &traj.iterates[t + 1] - &traj.iterates[t];
        let w_delta = config.design.synthesize(config.rotations.at(t), &delta)? / n;
        let descent_a = delta.norm_squared() / (2.0 * n) - 0.5 * w_delta.norm_squared();
        let descent_b = config.residual_operator(t, &delta)?.norm_squared() / (2.0 * n);
        identity_gap = identity_gap.max(libm::fabs(descent_a - descent_b));
        let (q_now, q_next) = (traj.objectives[t], traj.objectives[t + 1]);
        let bound_violation = q_next - (q_now - descent_a);
        let plain = q_next - q_now;
        let v = if q_next.is_infinite() || q_now.is_infinite() {
            f64::INFINITY
        } else {
            bound_violation.max(plain)
        };
        violations.push(v);
    }
    Ok(DescentReport::finish(
        "monotonic",
        violations,
        tol,
        identity_gap,
        tols.identity * (1.0 + libm::fabs(q0)),
        0,
    ))
}

/// Which summed step term the full rate inequality subtracts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateForm {
    /// `sum_t (t/2N) |D_t|^2 + (1/2N) |(I - W^T W/N) D_t|^2`, which follows from
    /// summing the exact one-step prox-gradient inequality.
    Exact,
    /// `1/2 sum_t (t+1)/N |D_t|^2`. This drops the `1/2 |W D_t / N|^2` term of
    /// the one-step expansion and is violated by ordinary trajectories.
    Published,
}

/// Checks, for every horizon `T` in the trajectory,
///
/// ```text
/// T (Q(y_T) - Q(y*)) <= |y_0 - y*|^2/2N - |y_T - y*|^2/2N
///                       - 1/2 sum_t |W (y_t - y*)/N|^2 - S_T
/// ```
///
/// with `S_T` from [`RateForm::Exact`], and the coarser
/// `Q(y_T) - Q(y*) <= |y_0 - y*|^2 / (2 N T)`.
pub fn verify_convex_rate(config: &NokConfig, traj: &Trajectory, y_star: &Vector) -> Result<DescentReport> {
    verify_convex_rate_with(config, traj, y_star, RateForm::Exact, &Tolerances::default())
}

pub fn verify_convex_rate_with(
    config: &NokConfig,
    traj: &Trajectory,
    y_star: &Vector,
    form: RateForm,
    tols: &Tolerances,
) -> Result<DescentReport> {
    config.rotations.shared()?;
    if !config.penalty.is_convex() {
        return Err(Error::Unsupported(format!(
            "rate check requires convex penalty (got {})",
            config.penalty.family()
        )));
    }
    consistent(config, traj)?;
    config.check_code(y_star)?;
    let x = &traj.input;
    let n = config.n_samples();
    let q_star = config.objective(x, y_star)?;
    let start = (&traj.iterates[0] - y_star).norm_squared() / (2.0 * n);
    let tol = tols.rate * (1.0 + libm::fabs(traj.objectives[0]));
    let mut violations = Vec::with_capacity(traj.len() - 1);
    let (mut sum_w, mut sum_steps) = (0.0, 0.0);
    for t in 0..traj.len() - 1 {
        let dev = &traj.iterates[t] - y_star;
        sum_w += 0.5 * (config.design.synthesize(config.rotations.at(t), &dev)? / n).norm_squared();
        let delta = &traj.iterates[t + 1] - &traj.iterates[t];
        sum_steps += match form {
            RateForm::Exact => {
                let slack = config.residual_operator(t, &delta)?.norm_squared();
                (t as f64 * delta.norm_squared() + slack) / (2.0 * n)
            }
            RateForm::Published => 0.5 * (t as f64 + 1.0) / n * delta.norm_squared(),
        };
        let horizon = (t + 1) as f64;
        let lhs = horizon * (traj.objectives[t + 1] - q_star);
        let end = (&traj.iterates[t + 1] - y_star).norm_squared() / (2.0 * n);
        let full = lhs - (start - end - sum_w - sum_steps);
        let coarse = lhs - start;
        violations.push(full.max(coarse));
    }
    let check = match form {
        RateForm::Exact => "convex_rate",
        RateForm::Published => "convex_rate_published",
    };
    Ok(DescentReport::finish(check, violations, tol, 0.0, 0.0, 0))
}

/// Approximate minimizer of `Q` by iterating the same map from `y_0 = 0`
/// until `||y_{t+1} - y_t|| < stop` or `max_iters` is reached.
pub fn fixed_point_oracle(config: &NokConfig, x: &Vector, max_iters: usize, stop: f64) -> Result<Vector> {
    let r = config.rotations.shared()?;
    let drive = config.design.apply(r, config.input_gain, x)?;
    let mut y = Vector::zeros(config.design.samples());
    for _ in 0..max_iters {
        let mut next = &drive + config.residual_operator(0, &y)?;
        config.penalty.prox_vector_in_place(&mut next)?;
        let moved = (&next - &y).norm();
        y = next;
        if moved < stop {
            break;
        }
    }
    Ok(y)
}

/// `(n - (2k - 1) sqrt(n) - m) / (2n)`.
pub fn ksparse_constant(n: usize, m: usize, k: usize) -> f64 {
    let nf = n as f64;
    (nf - (2.0 * k as f64 - 1.0) * libm::sqrt(nf) - m as f64) / (2.0 * nf)
}

/// Largest sparsity level is strictly below `(n - m + sqrt(n)) / (2 sqrt(n))`.
pub fn ksparse_strict_threshold(n: usize, m: usize) -> f64 {
    let nf = n as f64;
    (nf - m as f64 + libm::sqrt(nf)) / (2.0 * libm::sqrt(nf))
}

/// Runs `y_{t+1} = topk(D^T x + (I - D^T D) y_t)` with `D = W / sqrt(N)` and checks
///
/// ```text
/// L(y_{t+1}) <= L(y_t) + |y_{t+1} - a|^2/2 - |y_t - a|^2/2 - c_k |y_{t+1} - y_t|^2 <= L(y_t)
/// ```
///
/// for `L(y) = 0.5 ||x - D y||^2`. Below the strictness threshold every step
/// that moves must also strictly decrease `L`.
pub fn ksparse_run_and_verify(
    design: Arc<StructuredDesign>,
    r: RotationState,
    x: &Vector,
    k: usize,
    steps: usize,
) -> Result<(Trajectory, DescentReport)> {
    ksparse_run_and_verify_with(design, r, x, k, steps, &Tolerances::default())
}

pub fn ksparse_run_and_verify_with(
    design: Arc<StructuredDesign>,
    r: RotationState,
    x: &Vector,
    k: usize,
    steps: usize,
    tols: &Tolerances,
) -> Result<(Trajectory, DescentReport)> {
    let n = design.samples();
    if k == 0 || k > n {
        return Err(invalid!("k must lie in 1..={n}"));
    }
    let (half_n, m) = (design.n(), design.m());
    let gain = 1.0 / libm::sqrt(n as f64);
    let config = NokConfig::new(design, Rotations::Shared(r), Penalty::top_k(k)?, steps, gain)?;
    let traj = config.forward(x)?;
    let c_k = ksparse_constant(half_n, m, k);
    let strict = (k as f64) < ksparse_strict_threshold(half_n, m);
    let l0 = traj.objectives[0];
    let tol = tols.descent * (1.0 + libm::fabs(l0));
    let mut violations = Vec::with_capacity(steps);
    let mut strict_failures = 0;
    for t in 0..steps {
        let (y, next) = (&traj.iterates[t], &traj.iterates[t + 1]);
        let a = config.prox_argument(0, x, y)?;
        let (l_now, l_next) = (traj.objectives[t], traj.objectives[t + 1]);
        let moved = (next - y).norm_squared();
        let bound = l_now + 0.5 * (next - &a).norm_squared() - 0.5 * (y - &a).norm_squared() - c_k * moved;
        violations.push((l_next - bound).max(l_next - l_now));
        // below tolerance the step is a numerical fixed point
        if strict && c_k * moved > tol && l_next >= l_now {
            strict_failures += 1;
        }
    }
    let report = DescentReport::finish("ksparse", violations, tol, 0.0, 0.0, strict_failures);
    Ok((traj, report))
}

#[cfg(test)]
mod tests;
