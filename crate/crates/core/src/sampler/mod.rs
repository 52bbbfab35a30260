//! Structured spherical sampling matrices.
//!
//! A design picks `m` rows `Λ` of the `n`-point DFT (`n` prime, `m | n - 1`),
//! with `Λ` the subgroup of order `m` generated by a primitive root. The real
//! embedding `B` is `d x N` with `d = 2m`, `N = 2n`, unit-norm columns and
//! `B B^T = (n/m) I`. The sampling matrix is `W = sqrt(d) R^T B` for an
//! orthogonal `R`, so `W W^T / N = I`.

mod fft;

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::invalid;
use crate::linalg::{max_abs_cosine, orthogonality_error};
use crate::{random, Error, Matrix, Result, Vector};

use fft::Bluestein;

/// Designs with `n` below this go through the dense product by default.
pub const FAST_PATH_MIN_N: usize = 64;

const ORTHOGONALITY_TOL: f64 = 1e-10;

pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    if n % 2 == 0 {
        return n == 2;
    }
    let mut p = 3u64;
    while p * p <= n {
        if n % p == 0 {
            return false;
        }
        p += 2;
    }
    true
}

pub(crate) fn mod_pow(base: u64, mut exp: u64, modulus: u64) -> u64 {
    let m = modulus as u128;
    let mut b = base as u128 % m;
    let mut acc = 1u128 % m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = acc * b % m;
        }
        b = b * b % m;
        exp >>= 1;
    }
    acc as u64
}

fn distinct_prime_factors(mut v: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut p = 2u64;
    while p * p <= v {
        if v % p == 0 {
            out.push(p);
            while v % p == 0 {
                v /= p;
            }
        }
        p += 1;
    }
    if v > 1 {
        out.push(v);
    }
    out
}

/// Smallest `g >= 2` with multiplicative order `n - 1` modulo the prime `n`.
pub fn find_primitive_root(n: u64) -> Result<u64> {
    if n < 3 || !is_prime(n) {
        return Err(invalid!("n must be prime and at least 3 (got {n})"));
    }
    let factors = distinct_prime_factors(n - 1);
    (2..n)
        .find(|&g| factors.iter().all(|&p| mod_pow(g, (n - 1) / p, n) != 1))
        .ok_or_else(|| Error::Integrity(format!("no primitive root found modulo {n}")))
}

/// `Λ = { g^(i (n-1)/m) mod n : i = 0..m }`, sorted ascending.
pub fn build_index_set(n: u64, m: u64) -> Result<Vec<u64>> {
    if m == 0 {
        return Err(invalid!("m must be positive"));
    }
    if n < 3 || !is_prime(n) {
        return Err(invalid!("n must be prime (got {n})"));
    }
    if (n - 1) % m != 0 {
        return Err(invalid!("m must divide n−1 (n={n}, m={m})"));
    }
    let g = find_primitive_root(n)?;
    let stride = (n - 1) / m;
    let mut set: Vec<u64> = (0..m).map(|i| mod_pow(g, i * stride, n)).collect();
    set.sort_unstable();
    if set.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Integrity(format!("index set has repeated entries for n={n}, m={m}")));
    }
    Ok(set)
}

/// Phase rotation of the DFT rows followed by a permutation of the `d` real rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalRotation {
    phases: Vec<f64>,
    /// Row `i` of the output is row `permutation[i]` of the phase-rotated matrix.
    permutation: Vec<usize>,
}

impl DiagonalRotation {
    pub fn new(phases: Vec<f64>, permutation: Vec<usize>) -> Result<Self> {
        if permutation.len() != 2 * phases.len() {
            return Err(invalid!(
                "permutation length {} does not match 2 x {} phases",
                permutation.len(),
                phases.len()
            ));
        }
        if phases.iter().any(|p| !p.is_finite()) {
            return Err(invalid!("phases must be finite"));
        }
        let mut seen = alloc::vec![false; permutation.len()];
        for &p in &permutation {
            if p >= seen.len() || seen[p] {
                return Err(invalid!("permutation is not a bijection"));
            }
            seen[p] = true;
        }
        Ok(Self { phases, permutation })
    }

    pub fn identity(m: usize) -> Self {
        Self {
            phases: alloc::vec![0.0; m],
            permutation: (0..2 * m).collect(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R, m: usize) -> Self {
        let phases = (0..m).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        let mut permutation: Vec<usize> = (0..2 * m).collect();
        permutation.shuffle(rng);
        Self { phases, permutation }
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }
}

/// Orthogonal `d x d` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationState {
    r: Matrix,
}

impl RotationState {
    /// Validates `R^T R = R R^T = I` to `1e-10` in Frobenius norm.
    pub fn new(r: Matrix) -> Result<Self> {
        if !r.is_square() {
            return Err(invalid!("rotation must be square, got {}x{}", r.nrows(), r.ncols()));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("rotation has non-finite entries"));
        }
        let err = orthogonality_error(&r);
        if err >= ORTHOGONALITY_TOL {
            return Err(invalid!("matrix is not orthogonal (||R^T R - I||_F = {err:e})"));
        }
        Ok(Self { r })
    }

    pub fn identity(d: usize) -> Self {
        Self { r: Matrix::identity(d, d) }
    }

    /// Haar-random orthogonal matrix.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Self {
        Self {
            r: random::haar_orthogonal(rng, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.r.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.r
    }

    pub fn into_matrix(self) -> Matrix {
        self.r
    }

    pub fn is_identity(&self) -> bool {
        self.r == Matrix::identity(self.dim(), self.dim())
    }
}

/// Which matvec implementation to use in [`StructuredDesign::apply`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatvecPath {
    /// Dense for `n < FAST_PATH_MIN_N`, FFT otherwise.
    #[default]
    Auto,
    Dense,
    Fft,
}

/// The partial-DFT design `B` together with its index set.
#[derive(Debug, Clone)]
pub struct StructuredDesign {
    n: usize,
    m: usize,
    lambda_set: Vec<u64>,
    rotation: Option<DiagonalRotation>,
    seed: Option<u64>,
    b: Matrix,
    plan: Bluestein,
}

impl StructuredDesign {
    /// Closed-form design for prime `n` with `m | n - 1`.
    pub fn new(n: usize, m: usize) -> Result<Self> {
        let lambda_set = build_index_set(n as u64, m as u64)?;
        Ok(Self::assemble(n, m, lambda_set, None, None))
    }

    fn assemble(
        n: usize,
        m: usize,
        lambda_set: Vec<u64>,
        rotation: Option<DiagonalRotation>,
        seed: Option<u64>,
    ) -> Self {
        let d = 2 * m;
        // sqrt(n/m) * (1/sqrt(n)) from the normalized DFT rows
        let scale = 1.0 / libm::sqrt(m as f64);
        let mut tilde = Matrix::zeros(d, 2 * n);
        for (i, &k) in lambda_set.iter().enumerate() {
            let phase = rotation.as_ref().map_or(0.0, |r| r.phases[i]);
            for j in 1..=n {
                // column index runs 1..=n; reduce k j mod n before scaling the angle
                let r = (k as u128 * j as u128 % n as u128) as f64;
                let angle = 2.0 * PI * r / n as f64 + phase;
                let (s, c) = (libm::sin(angle), libm::cos(angle));
                let col = j - 1;
                tilde[(i, col)] = scale * c;
                tilde[(i, n + col)] = -scale * s;
                tilde[(m + i, col)] = scale * s;
                tilde[(m + i, n + col)] = scale * c;
            }
        }
        let b = match &rotation {
            Some(rot) => Matrix::from_fn(d, 2 * n, |i, j| tilde[(rot.permutation[i], j)]),
            None => tilde,
        };
        Self {
            n,
            m,
            lambda_set,
            rotation,
            seed,
            b,
            plan: Bluestein::new(n),
        }
    }

    /// Rebuilds a design from its serialized description.
    pub fn from_parts(n: usize, m: usize, lambda_set: &[u64], seed: Option<u64>) -> Result<Self> {
        let expected = build_index_set(n as u64, m as u64)?;
        if expected.as_slice() != lambda_set {
            return Err(invalid!(
                "lambda_set {:?} does not match the closed-form index set {:?} for n={n}, m={m}",
                lambda_set,
                expected
            ));
        }
        let base = Self::assemble(n, m, expected, None, None);
        Ok(match seed {
            Some(s) => randomize_design(&base, s),
            None => base,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Input dimension `d = 2m`.
    pub fn dim(&self) -> usize {
        2 * self.m
    }

    /// Sample count `N = 2n`.
    pub fn samples(&self) -> usize {
        2 * self.n
    }

    pub fn lambda_set(&self) -> &[u64] {
        &self.lambda_set
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn rotation(&self) -> Option<&DiagonalRotation> {
        self.rotation.as_ref()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.b
    }

    /// `W = sqrt(d) R^T B`.
    pub fn sampling_matrix(&self, r: &RotationState) -> Result<Matrix> {
        self.check_rotation(r)?;
        Ok(r.matrix().transpose() * &self.b * libm::sqrt(self.dim() as f64))
    }

    fn check_rotation(&self, r: &RotationState) -> Result<()> {
        if r.dim() != self.dim() {
            return Err(invalid!("rotation is {}x{}, design needs d={}", r.dim(), r.dim(), self.dim()));
        }
        Ok(())
    }

    /// `gain * W^T x`.
    pub fn apply(&self, r: &RotationState, gain: f64, x: &Vector) -> Result<Vector> {
        self.apply_with(r, gain, x, MatvecPath::Auto)
    }

    pub fn apply_with(&self, r: &RotationState, gain: f64, x: &Vector, path: MatvecPath) -> Result<Vector> {
        self.check_rotation(r)?;
        if x.len() != self.dim() {
            return Err(invalid!("input has length {}, expected d={}", x.len(), self.dim()));
        }
        let u = r.matrix() * x;
        let mut out = match self.resolve(path) {
            MatvecPath::Fft => self.bt_mul_fft(&u),
            _ => self.b.tr_mul(&u),
        };
        out *= gain * libm::sqrt(self.dim() as f64);
        Ok(out)
    }

    /// `W y = sqrt(d) R^T B y`.
    pub fn synthesize(&self, r: &RotationState, y: &Vector) -> Result<Vector> {
        self.synthesize_with(r, y, MatvecPath::Auto)
    }

    pub fn synthesize_with(&self, r: &RotationState, y: &Vector, path: MatvecPath) -> Result<Vector> {
        self.check_rotation(r)?;
        if y.len() != self.samples() {
            return Err(invalid!("code has length {}, expected N={}", y.len(), self.samples()));
        }
        let by = match self.resolve(path) {
            MatvecPath::Fft => self.b_mul_fft(y),
            _ => &self.b * y,
        };
        Ok(r.matrix().tr_mul(&by) * libm::sqrt(self.dim() as f64))
    }

    fn resolve(&self, path: MatvecPath) -> MatvecPath {
        match path {
            MatvecPath::Auto if self.n < FAST_PATH_MIN_N => MatvecPath::Dense,
            MatvecPath::Auto => MatvecPath::Fft,
            p => p,
        }
    }

    fn phase(&self, i: usize) -> Complex64 {
        let theta = self.rotation.as_ref().map_or(0.0, |r| r.phases[i]);
        Complex64::from_polar(1.0, theta)
    }

    fn unpermute(&self, u: &Vector) -> Vector {
        match &self.rotation {
            Some(rot) => {
                let mut out = Vector::zeros(u.len());
                for (i, &p) in rot.permutation.iter().enumerate() {
                    out[p] = u[i];
                }
                out
            }
            None => u.clone(),
        }
    }

    /// `B^T u` through one length-`n` forward DFT of the sparse spectrum at `Λ`.
    fn bt_mul_fft(&self, u: &Vector) -> Vector {
        let (n, m) = (self.n, self.m);
        let u = self.unpermute(u);
        let mut spectrum = alloc::vec![Complex64::new(0.0, 0.0); n];
        for (i, &k) in self.lambda_set.iter().enumerate() {
            let c = Complex64::new(u[i], u[m + i]) * self.phase(i).conj();
            spectrum[k as usize] += c;
        }
        let z = self.plan.transform(&spectrum, true);
        let scale = 1.0 / libm::sqrt(m as f64);
        let mut out = Vector::zeros(2 * n);
        for j in 1..=n {
            let v = z[j % n] * scale;
            out[j - 1] = v.re;
            out[n + j - 1] = v.im;
        }
        out
    }

    /// `B y` through one length-`n` inverse DFT sampled at `Λ`.
    fn b_mul_fft(&self, y: &Vector) -> Vector {
        let (n, m) = (self.n, self.m);
        let mut signal = alloc::vec![Complex64::new(0.0, 0.0); n];
        for j in 1..=n {
            signal[j % n] = Complex64::new(y[j - 1], y[n + j - 1]);
        }
        let spectrum = self.plan.transform(&signal, false);
        let scale = 1.0 / libm::sqrt(m as f64);
        let mut tilde = Vector::zeros(2 * m);
        for (i, &k) in self.lambda_set.iter().enumerate() {
            let v = spectrum[k as usize] * self.phase(i) * scale;
            tilde[i] = v.re;
            tilde[m + i] = v.im;
        }
        match &self.rotation {
            Some(rot) => Vector::from_fn(2 * m, |i, _| tilde[rot.permutation[i]]),
            None => tilde,
        }
    }
}

/// Applies a random phase rotation and row permutation drawn from `seed`.
pub fn randomize_design(design: &StructuredDesign, seed: u64) -> StructuredDesign {
    let mut rng = random::seeded(seed);
    let rotation = DiagonalRotation::sample(&mut rng, design.m);
    let mut out = rotate_design(design, rotation);
    out.seed = Some(seed);
    out
}

/// Applies an explicit diagonal rotation to the closed-form design.
pub fn rotate_design(design: &StructuredDesign, rotation: DiagonalRotation) -> StructuredDesign {
    StructuredDesign::assemble(design.n, design.m, design.lambda_set.clone(), Some(rotation), None)
}

/// Maximum absolute cosine between distinct columns of `m`.
pub fn mutual_coherence(m: &Matrix) -> Result<f64> {
    max_abs_cosine(m).ok_or_else(|| invalid!("matrix has a zero or non-finite column"))
}

/// `sqrt(n) / m`, the closed-form upper bound on the design coherence.
pub fn coherence_bound(n: usize, m: usize) -> f64 {
    libm::sqrt(n as f64) / m as f64
}
