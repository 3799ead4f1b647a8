//! Gauss-Galerkin quadrature dynamics for one-dimensional polynomial SDEs
//! and mean-field (McKean-Vlasov) models.
//!
//! The state is a discrete measure with N nodes and N weights whose first
//! 2N-1 moments evolve exactly as the true moment equations dictate. The
//! crate provides the closed node/weight dynamics, an adaptive integrator,
//! stationary-solution finding with continuation and bifurcation sweeps,
//! and independent oracles (exact OU moments, particle simulation, a
//! self-consistency map, a-priori moment bounds) for verification.

pub mod dynamics;
pub mod error;
pub mod lagrange;
pub mod model;
pub mod oracle;
pub mod polynomial;
pub mod quadrature;
#[doc(hidden)]
pub mod solver;
pub mod stationary;

pub use error::{Error, Result};
pub use model::{Model, MvsdeModel, SdeModel};
pub use polynomial::Polynomial;
pub use quadrature::{MomentVector, QuadratureMeasure};
