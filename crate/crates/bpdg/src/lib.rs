//! Discontinuous Galerkin solver for the Boltzmann–Poisson system in one space
//! dimension and two momentum dimensions (p, μ), with positivity-preserving
//! time stepping and entropy-norm diagnostics.

pub mod band;
pub mod config;
pub mod collision;
pub mod curvilinear;
pub mod diagnostics;
pub mod driver;
pub mod error;
pub mod field;
pub mod integrator;
pub mod mesh;
pub mod poisson;
pub mod positivity;
pub mod quadrature;
pub mod transport;
pub mod verify;

pub use error::{Error, Result};
