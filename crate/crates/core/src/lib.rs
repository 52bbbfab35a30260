//! Finite structured approximation of the neural optimization kernel.
//!
//! The crate is `no_std` with `alloc`. It covers:
//!
//! * [`sampler`]: partial-DFT spherical designs `B`, index sets from primitive
//!   roots, diagonal phase randomization and the `W = sqrt(d) R^T B` products.
//! * [`prox`]: separable penalties and their proximal operators, plus top-k.
//! * [`engine`]: the proximal fixed-point iteration and descent certificates.
//! * [`learning`]: Cayley parameterization, Procrustes and alternating fits.
//! * [`kernel`]: `k_{T,N}` Gram matrices, Monte-Carlo oracles, kernel ridge.
//! * [`bounds`]: Rademacher and generalization bound calculators.
//!
//! Enable the `parallel` feature to spread per-sample work over rayon.
#![cfg_attr(not(any(feature = "std", test)), no_std)]
#![warn(missing_debug_implementations)]

extern crate alloc;

pub mod bounds;
pub mod engine;
mod error;
pub mod kernel;
pub mod learning;
pub mod linalg;
pub mod prox;
pub mod random;
pub mod sampler;

pub use error::{Error, Result};

pub use engine::{DescentReport, NokConfig, RateForm, Rotations, Tolerances, Trajectory};
pub use prox::{Family, Penalty};
pub use sampler::{DiagonalRotation, RotationState, StructuredDesign};

/// Dense real matrix used across the crate.
pub type Matrix = nalgebra::DMatrix<f64>;
/// Dense real vector used across the crate.
pub type Vector = nalgebra::DVector<f64>;

#[cfg(feature = "parallel")]
pub(crate) fn maybe_par_map<T, F>(len: usize, f: F) -> alloc::vec::Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..len).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn maybe_par_map<T, F>(len: usize, f: F) -> alloc::vec::Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..len).map(f).collect()
}
