//! Separable penalties `phi_lambda` and their proximal operators
//! `h(z) = argmin_x 0.5 (x - z)^2 + phi_lambda(x)`.

use alloc::vec::Vec;

use crate::error::invalid;
use crate::{Error, Result, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    L0,
    L1,
    Mcp,
    CappedL1,
    Scad,
    Mcp0,
    /// Indicator of the nonnegative half-line; its prox is ReLU.
    IndicatorNonneg,
    /// Vector constraint `||y||_0 <= k`; prox keeps the `k` largest magnitudes.
    TopK,
}

impl Family {
    /// The seven scalar families.
    pub const SCALAR: [Family; 7] = [
        Family::L0,
        Family::L1,
        Family::Mcp,
        Family::CappedL1,
        Family::Scad,
        Family::Mcp0,
        Family::IndicatorNonneg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::L0 => "L0",
            Family::L1 => "L1",
            Family::Mcp => "MCP",
            Family::CappedL1 => "CappedL1",
            Family::Scad => "SCAD",
            Family::Mcp0 => "MCP0",
            Family::IndicatorNonneg => "IndicatorNonneg",
            Family::TopK => "TopK",
        }
    }

    pub fn from_name(name: &str) -> Option<Family> {
        Family::SCALAR
            .iter()
            .chain(core::iter::once(&Family::TopK))
            .copied()
            .find(|f| f.name().eq_ignore_ascii_case(name))
    }

    pub fn is_convex(self) -> bool {
        matches!(self, Family::L1 | Family::IndicatorNonneg)
    }

    pub fn needs_gamma(self) -> bool {
        matches!(self, Family::Mcp | Family::CappedL1 | Family::Scad)
    }
}

impl core::fmt::Display for Family {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// A validated penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penalty {
    family: Family,
    lambda: f64,
    gamma: f64,
    k: usize,
}

impl Penalty {
    /// `gamma` is required for MCP (`> 1`), capped L1 (`> 0`) and SCAD (`> 2`);
    /// `k >= 1` is required for top-k.
    pub fn new(family: Family, lambda: f64, gamma: Option<f64>, k: Option<usize>) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(invalid!("lambda must be finite and nonnegative (got {lambda})"));
        }
        let gamma = match (family, gamma) {
            (Family::Mcp, Some(g)) if g > 1.0 && g.is_finite() => g,
            (Family::CappedL1, Some(g)) if g > 0.0 && g.is_finite() => g,
            (Family::Scad, Some(g)) if g > 2.0 && g.is_finite() => g,
            (Family::Mcp, _) => return Err(invalid!("MCP requires gamma > 1")),
            (Family::CappedL1, _) => return Err(invalid!("CappedL1 requires gamma > 0")),
            (Family::Scad, _) => return Err(invalid!("SCAD requires gamma > 2")),
            _ => 0.0,
        };
        let k = match (family, k) {
            (Family::TopK, Some(k)) if k >= 1 => k,
            (Family::TopK, _) => return Err(invalid!("TopK requires k >= 1")),
            _ => 0,
        };
        Ok(Self { family, lambda, gamma, k })
    }

    pub fn l0(lambda: f64) -> Result<Self> {
        Self::new(Family::L0, lambda, None, None)
    }

    pub fn l1(lambda: f64) -> Result<Self> {
        Self::new(Family::L1, lambda, None, None)
    }

    pub fn mcp(lambda: f64, gamma: f64) -> Result<Self> {
        Self::new(Family::Mcp, lambda, Some(gamma), None)
    }

    pub fn capped_l1(lambda: f64, gamma: f64) -> Result<Self> {
        Self::new(Family::CappedL1, lambda, Some(gamma), None)
    }

    pub fn scad(lambda: f64, gamma: f64) -> Result<Self> {
        Self::new(Family::Scad, lambda, Some(gamma), None)
    }

    pub fn mcp0(lambda: f64) -> Result<Self> {
        Self::new(Family::Mcp0, lambda, None, None)
    }

    pub fn relu() -> Self {
        Self {
            family: Family::IndicatorNonneg,
            lambda: 0.0,
            gamma: 0.0,
            k: 0,
        }
    }

    pub fn top_k(k: usize) -> Result<Self> {
        Self::new(Family::TopK, 0.0, None, Some(k))
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn gamma(&self) -> Option<f64> {
        self.family.needs_gamma().then_some(self.gamma)
    }

    pub fn k(&self) -> Option<usize> {
        (self.family == Family::TopK).then_some(self.k)
    }

    pub fn is_convex(&self) -> bool {
        self.family.is_convex()
    }

    fn scalar_only(&self) -> Result<()> {
        if self.family == Family::TopK {
            Err(Error::Unsupported("TopK is a vector constraint; use prox_topk".into()))
        } else {
            Ok(())
        }
    }

    /// `phi_lambda(z)`. Negative inputs to the nonnegativity indicator give `+inf`.
    pub fn value(&self, z: f64) -> Result<f64> {
        self.scalar_only()?;
        let a = libm::fabs(z);
        let (lam, g) = (self.lambda, self.gamma);
        Ok(match self.family {
            Family::L0 => {
                if z == 0.0 {
                    0.0
                } else {
                    lam
                }
            }
            Family::L1 => lam * a,
            Family::Mcp => {
                if a <= g * lam {
                    lam * a - a * a / (2.0 * g)
                } else {
                    0.5 * g * lam * lam
                }
            }
            Family::CappedL1 => lam * a.min(g),
            Family::Scad => {
                if a <= lam {
                    lam * a
                } else if a <= g * lam {
                    (2.0 * g * lam * a - a * a - lam * lam) / (2.0 * (g - 1.0))
                } else {
                    0.5 * (g + 1.0) * lam * lam
                }
            }
            Family::Mcp0 => {
                let root = libm::sqrt(lam);
                if a >= root {
                    0.5 * lam
                } else {
                    // 0.5 (lam - (sqrt(lam) - a)^2), expanded so phi(0) is exactly 0
                    0.5 * a * (2.0 * root - a)
                }
            }
            Family::IndicatorNonneg => {
                if z >= 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Family::TopK => unreachable!(),
        })
    }

    /// Scalar proximal operator `h(z)`.
    pub fn prox(&self, z: f64) -> Result<f64> {
        self.scalar_only()?;
        Ok(self.prox_unchecked(z))
    }

    fn prox_unchecked(&self, z: f64) -> f64 {
        let a = libm::fabs(z);
        let s = sign(z);
        let (lam, g) = (self.lambda, self.gamma);
        match self.family {
            Family::L0 => {
                if a >= libm::sqrt(2.0 * lam) {
                    z
                } else {
                    0.0
                }
            }
            Family::L1 => soft_threshold(z, lam),
            Family::Mcp => {
                if a > g * lam {
                    z
                } else if a > lam {
                    s * (a - lam) / (1.0 - 1.0 / g)
                } else {
                    0.0
                }
            }
            Family::CappedL1 => {
                let x1 = s * a.max(g);
                let x2 = s * g.min((a - lam).max(0.0));
                let q = |x: f64| 0.5 * (x - z) * (x - z) + lam * libm::fabs(x).min(g);
                if q(x1) <= q(x2) {
                    x1
                } else {
                    x2
                }
            }
            Family::Scad => {
                if a > g * lam {
                    z
                } else if a > 2.0 * lam {
                    ((g - 1.0) * z - s * g * lam) / (g - 2.0)
                } else {
                    soft_threshold(z, lam)
                }
            }
            Family::Mcp0 => {
                if a >= libm::sqrt(lam) {
                    z
                } else {
                    0.0
                }
            }
            Family::IndicatorNonneg => z.max(0.0),
            Family::TopK => unreachable!(),
        }
    }

    /// Separable sum `sum_i phi(y_i)`; `+inf` for top-k vectors with more than `k` nonzeros.
    pub fn value_sum(&self, y: &Vector) -> Result<f64> {
        if self.family == Family::TopK {
            let nnz = y.iter().filter(|v| **v != 0.0).count();
            return Ok(if nnz <= self.k { 0.0 } else { f64::INFINITY });
        }
        let mut acc = 0.0;
        for &v in y.iter() {
            acc += self.value(v)?;
        }
        Ok(acc)
    }

    /// Elementwise prox, or the top-k projection for [`Family::TopK`].
    pub fn prox_vector(&self, z: &Vector) -> Result<Vector> {
        if self.family == Family::TopK {
            return prox_topk(z, self.k);
        }
        Ok(z.map(|v| self.prox_unchecked(v)))
    }

    pub fn prox_vector_in_place(&self, z: &mut Vector) -> Result<()> {
        if self.family == Family::TopK {
            *z = prox_topk(z, self.k)?;
            return Ok(());
        }
        z.apply(|v| *v = self.prox_unchecked(*v));
        Ok(())
    }
}

fn sign(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else if z < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn soft_threshold(z: f64, lam: f64) -> f64 {
    sign(z) * (libm::fabs(z) - lam).max(0.0)
}

/// Keeps the `k` entries of largest magnitude; ties go to the lower index.
pub fn prox_topk(z: &Vector, k: usize) -> Result<Vector> {
    if k == 0 || k > z.len() {
        return Err(invalid!("k must lie in 1..={} (got {k})", z.len()));
    }
    let mut order: Vec<usize> = (0..z.len()).collect();
    order.sort_by(|&a, &b| {
        libm::fabs(z[b])
            .partial_cmp(&libm::fabs(z[a]))
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut out = Vector::zeros(z.len());
    for &i in order.iter().take(k) {
        out[i] = z[i];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Composite-Simpson integral of `f` over `[0, b]`.
    fn simpson(f: impl Fn(f64) -> f64, b: f64, intervals: usize) -> f64 {
        let h = b / intervals as f64;
        let mut acc = f(0.0) + f(b);
        for i in 1..intervals {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(i as f64 * h);
        }
        acc * h / 3.0
    }

    fn mcp_integrand(lam: f64, g: f64) -> impl Fn(f64) -> f64 {
        move |x| lam * (1.0 - x / (g * lam)).max(0.0)
    }

    fn scad_integrand(lam: f64, g: f64) -> impl Fn(f64) -> f64 {
        move |x| lam * (((g * lam - x).max(0.0)) / ((g - 1.0) * lam)).min(1.0)
    }

    fn grid_min(p: &Penalty, z: f64, lo: f64, hi: f64, step: f64) -> f64 {
        let count = ((hi - lo) / step).round() as usize;
        (0..=count)
            .map(|i| lo + i as f64 * step)
            .map(|x| 0.5 * (x - z) * (x - z) + p.value(x).unwrap())
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn worked_values() {
        assert_eq!(Penalty::l1(0.5).unwrap().value(2.0).unwrap(), 1.0);
        assert_eq!(Penalty::l0(1.0).unwrap().value(0.0).unwrap(), 0.0);
        assert!((Penalty::mcp(1.0, 2.0).unwrap().value(5.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(Penalty::l1(0.5).unwrap().prox(2.0).unwrap(), 1.5);
        let l0 = Penalty::l0(2.0).unwrap();
        assert_eq!(l0.prox(1.9).unwrap(), 0.0);
        assert_eq!(l0.prox(2.1).unwrap(), 2.1);
        assert_eq!(l0.prox(2.0).unwrap(), 2.0);
        assert!((Penalty::scad(1.0, 3.0).unwrap().prox(2.5).unwrap() - 2.0).abs() < 1e-15);
        assert!((Penalty::mcp(1.0, 2.0).unwrap().prox(1.5).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(Penalty::relu().prox(-1.0).unwrap(), 0.0);
        assert_eq!(Penalty::mcp0(4.0).unwrap().prox(2.0).unwrap(), 2.0);
        assert_eq!(Penalty::mcp0(4.0).unwrap().prox(1.999).unwrap(), 0.0);
    }

    #[test]
    fn grid_oracle_agrees_on_worked_proxes() {
        // the oracle's argmin lands within a grid step of the closed form
        let cases = [
            (Penalty::scad(1.0, 3.0).unwrap(), 2.5, 2.0),
            (Penalty::mcp(1.0, 2.0).unwrap(), 1.5, 1.0),
        ];
        for (p, z, expect) in cases {
            let step = 1e-4;
            let (mut best, mut arg) = (f64::INFINITY, 0.0);
            for i in 0..=200_000 {
                let x = -10.0 + i as f64 * step;
                let q = 0.5 * (x - z) * (x - z) + p.value(x).unwrap();
                if q < best {
                    best = q;
                    arg = x;
                }
            }
            assert!((arg - expect).abs() <= step, "{:?}: grid argmin {arg}", p.family());
        }
    }

    #[test]
    fn topk_rejected_as_scalar() {
        let p = Penalty::top_k(2).unwrap();
        assert!(matches!(p.value(1.0), Err(Error::Unsupported(_))));
        assert!(matches!(p.prox(1.0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn indicator_outside_domain_is_infinite() {
        assert_eq!(Penalty::relu().value(-0.5).unwrap(), f64::INFINITY);
        assert_eq!(Penalty::relu().value(0.0).unwrap(), 0.0);
    }

    #[test]
    fn constructor_validation() {
        assert!(Penalty::scad(1.0, 2.0).is_err());
        assert!(Penalty::mcp(1.0, 1.0).is_err());
        assert!(Penalty::capped_l1(1.0, 0.0).is_err());
        assert!(Penalty::l1(-0.1).is_err());
        assert!(Penalty::l1(f64::NAN).is_err());
        assert!(Penalty::top_k(0).is_err());
        assert!(Penalty::new(Family::Mcp, 1.0, None, None).is_err());
        assert_eq!(Family::from_name("scad"), Some(Family::Scad));
        assert_eq!(Family::from_name("bogus"), None);
    }

    #[test]
    fn closed_form_penalties_match_quadrature() {
        for &lam in &[0.1, 0.5, 1.0, 2.0] {
            for &g in &[1.5, 2.0, 3.7] {
                let p = Penalty::mcp(lam, g).unwrap();
                for &z in &[0.0, 0.05, 0.3, 1.0, 2.5, -4.0, 9.0] {
                    let q = simpson(mcp_integrand(lam, g), libm::fabs(z), 20_000);
                    assert!((p.value(z).unwrap() - q).abs() < 1e-6, "MCP lam={lam} g={g} z={z}");
                }
            }
            for &g in &[2.5, 3.7, 5.0] {
                let p = Penalty::scad(lam, g).unwrap();
                for &z in &[0.0, 0.05, 0.3, 1.0, 2.5, -4.0, 9.0] {
                    let q = simpson(scad_integrand(lam, g), libm::fabs(z), 20_000);
                    assert!((p.value(z).unwrap() - q).abs() < 1e-6, "SCAD lam={lam} g={g} z={z}");
                }
            }
        }
    }

    #[test]
    fn topk_examples_and_errors() {
        let z = Vector::from_vec(alloc::vec![3.0, -5.0, 1.0]);
        assert_eq!(prox_topk(&z, 3).unwrap(), z);
        assert_eq!(prox_topk(&z, 1).unwrap().as_slice(), &[0.0, -5.0, 0.0]);
        let tie = Vector::from_vec(alloc::vec![2.0, -2.0]);
        assert_eq!(prox_topk(&tie, 1).unwrap().as_slice(), &[2.0, 0.0]);
        assert!(prox_topk(&z, 0).is_err());
        assert!(prox_topk(&z, 4).is_err());
    }

    #[test]
    fn topk_matches_support_enumeration() {
        let mut rng = crate::random::seeded(11);
        for len in 1..=8usize {
            for k in 1..=len {
                for _ in 0..5 {
                    let z = crate::random::gaussian_vector(&mut rng, len);
                    let got = prox_topk(&z, k).unwrap();
                    // best k-sparse approximation keeps the support with the largest energy
                    let mut best = f64::INFINITY;
                    for mask in 0u32..(1 << len) {
                        if mask.count_ones() as usize != k {
                            continue;
                        }
                        let resid: f64 = (0..len).filter(|i| mask & (1 << i) == 0).map(|i| z[i] * z[i]).sum();
                        best = best.min(resid);
                    }
                    let mine = (&got - &z).norm_squared();
                    assert!(mine <= best + 1e-12);
                    assert!(got.iter().filter(|v| **v != 0.0).count() <= k);
                }
            }
        }
    }

    fn all_penalties(lam: f64) -> Vec<Penalty> {
        alloc::vec![
            Penalty::l0(lam).unwrap(),
            Penalty::l1(lam).unwrap(),
            Penalty::mcp(lam, 2.5).unwrap(),
            Penalty::capped_l1(lam, 1.0).unwrap(),
            Penalty::scad(lam, 3.7).unwrap(),
            Penalty::mcp0(lam).unwrap(),
            Penalty::relu(),
        ]
    }

    #[test]
    fn prox_beats_coarse_grid() {
        let mut rng = crate::random::seeded(5);
        use rand::Rng;
        for &lam in &[0.1, 0.5, 1.0, 2.0] {
            for p in all_penalties(lam) {
                for _ in 0..20 {
                    let z: f64 = rng.random_range(-5.0..5.0);
                    let h = p.prox(z).unwrap();
                    let mine = 0.5 * (h - z) * (h - z) + p.value(h).unwrap();
                    assert!(mine <= grid_min(&p, z, -10.0, 10.0, 1e-3) + 1e-8, "{:?} z={z}", p.family());
                }
            }
        }
    }

    proptest! {
        #[test]
        fn shrinkage_and_sign(z in -20.0f64..20.0, lam in 0.0f64..3.0, which in 0usize..7) {
            let p = all_penalties(lam)[which];
            let h = p.prox(z).unwrap();
            prop_assert!(libm::fabs(h) <= libm::fabs(z));
            if p.family() != Family::IndicatorNonneg {
                prop_assert!(h * z >= 0.0);
            } else {
                prop_assert!(h >= 0.0);
            }
        }

        #[test]
        fn penalties_vanish_at_zero(lam in 0.0f64..3.0, which in 0usize..7) {
            prop_assert_eq!(all_penalties(lam)[which].value(0.0).unwrap(), 0.0);
        }
    }
}
