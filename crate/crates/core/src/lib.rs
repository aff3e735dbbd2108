//! Numerical toolkit for slow-fast switching diffusions on Riemannian
//! manifolds and their large deviations.
//!
//! The layers build on each other:
//!
//! * [`geometry`]: closed-form geometry of Euclidean space, the unit sphere
//!   and the flat torus.
//! * [`switching`]: state-dependent rate matrices, invariant measures, the
//!   Donsker-Varadhan functional and averaged drifts.
//! * [`hamiltonian`]: the Hamiltonian as the principal eigenvalue of the
//!   tilted generator, its momentum gradient and Legendre transform.
//! * [`dynamics`]: Monte Carlo simulation of the slow-fast system, the
//!   averaged flow and the nonlinear generators.
//! * [`variational`]: action integrals, optimal curves, Hopf-Lax, resolvent
//!   and semigroup evaluators, viscosity and comparison diagnostics.

pub mod error;
pub mod geometry;
pub mod switching;
pub mod hamiltonian;
pub mod dynamics;
pub mod variational;

pub use error::{Error, Result};
