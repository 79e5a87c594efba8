//! Separability of two-mode Gaussian states and simulation of measurement schemes
//! that estimate the quantities entering the PPT criterion.
//!
//! Conventions: `ħ = 1`, quadratures `q = (a + a†)/√2`, `p = i(a† - a)/√2`, ordered
//! `(q1, p1, q2, p2, …)`; the vacuum covariance is `I/2`.

pub mod criterion;
pub mod estimate;
pub mod error;
pub mod factory;
pub mod locc;
pub mod moments;
pub mod sampler;
pub mod state;
pub mod stokes;
pub mod symplectic;
pub mod twocopy;

pub use criterion::{simon_criterion, SeparabilityReport, Verdict};
pub use sampler::Backend;
pub use error::{Error, Result};
pub use state::{BlockDecomposition, GaussianState};
pub use symplectic::{SymplecticForm, SymplecticTransform};
