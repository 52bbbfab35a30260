//! Learning the orthogonal parameter `R`.
//!
//! Two routes: a Cayley parameterization `R = (I + M)(I - M)^{-1}` over
//! skew-symmetric `M`, trained here by finite differences on a small readout
//! loss, and an unsupervised alternating scheme whose `R` update is the
//! orthogonal Procrustes solution.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::engine::{NokConfig, Rotations};
use crate::error::invalid;
use crate::prox::{Family, Penalty};
use crate::sampler::{RotationState, StructuredDesign};
use crate::{maybe_par_map, Error, Matrix, Result, Vector};

/// Largest `d` accepted by the finite-difference trainer.
pub const FD_MAX_DIM: usize = 8;

/// Below this smallest singular value a Procrustes input is flagged degenerate.
pub const PROCRUSTES_DEGENERATE: f64 = 1e-12;

/// Strictly upper-triangular coefficients of a skew-symmetric `d x d` matrix,
/// stored row by row: `(0,1), (0,2), ..., (0,d-1), (1,2), ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewParams {
    dim: usize,
    coeffs: Vec<f64>,
}

impl SkewParams {
    pub fn new(dim: usize, coeffs: Vec<f64>) -> Result<Self> {
        let want = dim * dim.saturating_sub(1) / 2;
        if coeffs.len() != want {
            return Err(invalid!("d={dim} needs {want} skew coefficients, got {}", coeffs.len()));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(invalid!("skew coefficients must be finite"));
        }
        Ok(Self { dim, coeffs })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            coeffs: alloc::vec![0.0; dim * dim.saturating_sub(1) / 2],
        }
    }

    /// Reads the upper triangle; the matrix must be skew to `1e-10`.
    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(invalid!("skew matrix must be square"));
        }
        let asym = (m + m.transpose()).norm();
        if !(asym <= 1e-10 * (1.0 + m.norm())) {
            return Err(invalid!("matrix is not skew-symmetric (||M + M^T||_F = {asym:e})"));
        }
        let d = m.nrows();
        let mut coeffs = Vec::with_capacity(d * d.saturating_sub(1) / 2);
        for i in 0..d {
            for j in (i + 1)..d {
                coeffs.push(0.5 * (m[(i, j)] - m[(j, i)]));
            }
        }
        Self::new(d, coeffs)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn matrix(&self) -> Matrix {
        let mut m = Matrix::zeros(self.dim, self.dim);
        let mut it = self.coeffs.iter();
        for i in 0..self.dim {
            for j in (i + 1)..self.dim {
                let a = *it.next().expect("length checked at construction");
                m[(i, j)] = a;
                m[(j, i)] = -a;
            }
        }
        m
    }
}

/// `R = (I + M)(I - M)^{-1}`. Always special orthogonal.
pub fn cayley(params: &SkewParams) -> Result<RotationState> {
    let d = params.dim();
    let m = params.matrix();
    let eye = Matrix::identity(d, d);
    // the two factors commute, so solve (I - M) R = (I + M)
    let r = (&eye - &m)
        .lu()
        .solve(&(&eye + &m))
        .ok_or_else(|| Error::Singular("I - M is not invertible".into()))?;
    RotationState::new(r)
}

/// `M = (R - I)(R + I)^{-1}`; fails when `R` has an eigenvalue at `-1`.
pub fn inverse_cayley(r: &RotationState) -> Result<SkewParams> {
    let d = r.dim();
    let eye = Matrix::identity(d, d);
    let plus = r.matrix() + &eye;
    if d > 0 {
        let smallest = plus.singular_values().min();
        if smallest < 1e-10 {
            return Err(Error::Singular(format!(
                "R has an eigenvalue at -1 (smallest singular value of I + R is {smallest:e})"
            )));
        }
    }
    // (R + I)^{-1} commutes with R - I, so solve (R + I) M = R - I
    let m = plus
        .lu()
        .solve(&(r.matrix() - &eye))
        .ok_or_else(|| Error::Singular("I + R is not invertible".into()))?;
    let skew = (&m - m.transpose()) * 0.5;
    SkewParams::from_matrix(&skew)
}

/// Nearest orthogonal matrix to `M` in the trace sense.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcrustesSolution {
    pub rotation: RotationState,
    pub min_singular_value: f64,
    /// `M` is numerically rank deficient, so `R` is one of several maximizers.
    pub degenerate: bool,
}

/// `R = U V^T` from `M = U S V^T`, maximizing `trace(R^T M)` over orthogonal `R`.
/// No determinant correction is applied.
pub fn procrustes(m: &Matrix) -> Result<ProcrustesSolution> {
    if !m.is_square() {
        return Err(invalid!("Procrustes input must be square, got {}x{}", m.nrows(), m.ncols()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(invalid!("Procrustes input has non-finite entries"));
    }
    let d = m.nrows();
    if d == 0 {
        return Ok(ProcrustesSolution {
            rotation: RotationState::identity(0),
            min_singular_value: 0.0,
            degenerate: false,
        });
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let min_singular_value = svd.singular_values.min();
    let rotation = RotationState::new(u * v_t)?;
    Ok(ProcrustesSolution {
        rotation,
        min_singular_value,
        degenerate: min_singular_value < PROCRUSTES_DEGENERATE,
    })
}

/// Settings for [`alternating_fit`].
#[derive(Debug, Clone)]
pub struct AlternatingConfig {
    /// Iteration steps per `Y` phase (`T1 >= 1`).
    pub inner_steps: usize,
    /// Number of `Y`/`R` phase pairs (`T2`).
    pub phases: usize,
    pub penalty: Penalty,
    /// Defaults to the identity.
    pub r0: Option<RotationState>,
    /// Defaults to zero codes.
    pub y0: Option<Matrix>,
}

impl AlternatingConfig {
    pub fn new(inner_steps: usize, phases: usize, penalty: Penalty) -> Self {
        Self {
            inner_steps,
            phases,
            penalty,
            r0: None,
            y0: None,
        }
    }
}

/// Result of [`alternating_fit`].
#[derive(Debug, Clone)]
pub struct AlternatingFit {
    pub rotation: RotationState,
    /// `N x S` codes.
    pub codes: Matrix,
    /// Objective at the start and after every half phase (`1 + 2 T2` values).
    pub trace: Vec<f64>,
    /// Number of `R` updates whose Procrustes input was rank deficient.
    pub degenerate_updates: usize,
}

/// `1/2 ||X - W Y / N||_F^2 + phi(Y) / N` with `W = sqrt(d) R^T B`.
pub fn regularized_objective(
    design: &StructuredDesign,
    r: &RotationState,
    penalty: &Penalty,
    x: &Matrix,
    y: &Matrix,
) -> Result<f64> {
    check_shapes(design, x, y)?;
    let n = design.samples() as f64;
    let mut total = 0.0;
    for j in 0..x.ncols() {
        let code = y.column(j).into_owned();
        let fit = design.synthesize(r, &code)? / n;
        total += 0.5 * (x.column(j) - fit).norm_squared() + penalty.value_sum(&code)? / n;
    }
    Ok(total)
}

fn check_shapes(design: &StructuredDesign, x: &Matrix, y: &Matrix) -> Result<()> {
    if x.nrows() != design.dim() {
        return Err(invalid!("data has {} rows, design needs d={}", x.nrows(), design.dim()));
    }
    if y.nrows() != design.samples() || y.ncols() != x.ncols() {
        return Err(invalid!(
            "codes are {}x{}, expected {}x{}",
            y.nrows(),
            y.ncols(),
            design.samples(),
            x.ncols()
        ));
    }
    Ok(())
}

/// Alternates `T1` iteration steps on every column of `Y` (warm started) with
/// the Procrustes update of `R` from the SVD of `(sqrt(d)/N) B Y X^T`.
pub fn alternating_fit(x: &Matrix, design: Arc<StructuredDesign>, config: &AlternatingConfig) -> Result<AlternatingFit> {
    if config.inner_steps == 0 {
        return Err(invalid!("T1 must be at least 1"));
    }
    if config.penalty.family() == Family::TopK {
        return Err(Error::Unsupported("alternating fit needs a separable scalar penalty".into()));
    }
    if x.ncols() == 0 {
        return Err(invalid!("data must hold at least one sample"));
    }
    let (d, n) = (design.dim(), design.samples());
    let mut r = match &config.r0 {
        Some(r) if r.dim() != d => return Err(invalid!("R_0 is {0}x{0}, design needs d={d}", r.dim())),
        Some(r) => r.clone(),
        None => RotationState::identity(d),
    };
    let mut y = config.y0.clone().unwrap_or_else(|| Matrix::zeros(n, x.ncols()));
    check_shapes(&design, x, &y)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(invalid!("data has non-finite entries"));
    }

    let objective = |r: &RotationState, y: &Matrix, half: usize| -> Result<f64> {
        let q = regularized_objective(&design, r, &config.penalty, x, y)?;
        if q.is_finite() {
            Ok(q)
        } else {
            Err(Error::NumericOverflow {
                step: half,
                what: "alternating objective is not finite".into(),
            })
        }
    };

    let mut trace = Vec::with_capacity(1 + 2 * config.phases);
    trace.push(objective(&r, &y, 0)?);
    let mut degenerate_updates = 0;
    let scale = libm::sqrt(d as f64) / n as f64;
    for phase in 0..config.phases {
        let cfg = NokConfig::new(
            design.clone(),
            Rotations::Shared(r.clone()),
            config.penalty,
            config.inner_steps,
            1.0,
        )?;
        let columns = maybe_par_map(x.ncols(), |j| {
            let traj = cfg.forward_from(&x.column(j).into_owned(), y.column(j).into_owned())?;
            Ok(traj.last().clone())
        });
        for (j, col) in columns.into_iter().enumerate() {
            let col: Vector = col?;
            y.set_column(j, &col);
        }
        trace.push(objective(&r, &y, 2 * phase + 1)?);

        let target = (design.matrix() * &y) * x.transpose() * scale;
        let solution = procrustes(&target)?;
        degenerate_updates += usize::from(solution.degenerate);
        r = solution.rotation;
        trace.push(objective(&r, &y, 2 * phase + 2)?);
    }
    Ok(AlternatingFit {
        rotation: r,
        codes: y,
        trace,
        degenerate_updates,
    })
}

/// Squared-error loss of a fixed linear readout of `y_T` as a function of the
/// skew parameters of a shared `R = cayley(M)`.
#[derive(Debug, Clone)]
pub struct FdProblem {
    design: Arc<StructuredDesign>,
    x: Matrix,
    labels: Vector,
    penalty: Penalty,
    steps: usize,
    readout: Vector,
}

impl FdProblem {
    /// `x` is `d x S`, `labels` has length `S` and `readout` length `N`.
    pub fn new(
        design: Arc<StructuredDesign>,
        x: Matrix,
        labels: Vector,
        penalty: Penalty,
        steps: usize,
        readout: Vector,
    ) -> Result<Self> {
        let d = design.dim();
        if d > FD_MAX_DIM {
            return Err(Error::ScaleLimit(format!(
                "finite-difference training is limited to d <= {FD_MAX_DIM}, got d={d}"
            )));
        }
        if x.nrows() != d || x.ncols() == 0 {
            return Err(invalid!("data must be {d}xS with S >= 1, got {}x{}", x.nrows(), x.ncols()));
        }
        if labels.len() != x.ncols() {
            return Err(invalid!("{} labels for {} samples", labels.len(), x.ncols()));
        }
        if readout.len() != design.samples() {
            return Err(invalid!("readout has length {}, expected N={}", readout.len(), design.samples()));
        }
        if penalty.family() == Family::TopK {
            return Err(Error::Unsupported("finite-difference training needs a scalar penalty".into()));
        }
        Ok(Self {
            design,
            x,
            labels,
            penalty,
            steps,
            readout,
        })
    }

    pub fn dim(&self) -> usize {
        self.design.dim()
    }

    /// `(1/2S) sum_s (<v, y_T(x_s)> - label_s)^2`.
    pub fn loss(&self, params: &SkewParams) -> Result<f64> {
        if params.dim() != self.dim() {
            return Err(invalid!("skew parameters are for d={}, design has d={}", params.dim(), self.dim()));
        }
        let r = cayley(params)?;
        let cfg = NokConfig::new(self.design.clone(), Rotations::Shared(r), self.penalty, self.steps, 1.0)?;
        let feats = cfg.features(&self.x)?;
        let preds = feats.tr_mul(&self.readout);
        let s = self.x.ncols() as f64;
        Ok((preds - &self.labels).norm_squared() / (2.0 * s))
    }

    /// Central differences with step `h` over every skew coefficient.
    pub fn gradient(&self, params: &SkewParams, h: f64) -> Result<Vec<f64>> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(invalid!("finite-difference step must be positive"));
        }
        let probe = |i: usize, delta: f64| {
            let mut c = params.coeffs().to_vec();
            c[i] += delta;
            self.loss(&SkewParams::new(params.dim(), c)?)
        };
        maybe_par_map(params.len(), |i| Ok((probe(i, h)? - probe(i, -h)?) / (2.0 * h)))
            .into_iter()
            .collect()
    }

    /// Relative gap between the step-`h` gradient and its Richardson refinement
    /// `(4 g(h/2) - g(h)) / 3`.
    pub fn richardson_error(&self, params: &SkewParams, h: f64) -> Result<f64> {
        let coarse = Vector::from_vec(self.gradient(params, h)?);
        let fine = Vector::from_vec(self.gradient(params, h / 2.0)?);
        let refined = (fine * 4.0 - &coarse) / 3.0;
        let denom = refined.norm();
        if denom == 0.0 {
            return Ok(coarse.norm());
        }
        Ok((coarse - &refined).norm() / denom)
    }
}

/// Gradient descent on the skew parameters of a shared `R`, using central
/// differences with step `h`. Returns the final parameters and the loss before
/// every iteration plus the final loss.
pub fn fd_train_shared_r(
    problem: &FdProblem,
    init: SkewParams,
    step_size: f64,
    iters: usize,
    h: f64,
) -> Result<(SkewParams, Vec<f64>)> {
    if !(step_size >= 0.0 && step_size.is_finite()) {
        return Err(invalid!("step size must be a nonnegative finite number"));
    }
    let mut params = init;
    let mut losses = Vec::with_capacity(iters + 1);
    losses.push(problem.loss(&params)?);
    for _ in 0..iters {
        if step_size > 0.0 {
            let grad = problem.gradient(&params, h)?;
            let next = params.coeffs().iter().zip(&grad).map(|(c, g)| c - step_size * g).collect();
            params = SkewParams::new(params.dim(), next)?;
        }
        losses.push(problem.loss(&params)?);
    }
    Ok((params, losses))
}
