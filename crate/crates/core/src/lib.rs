//! Shape-optimization toolkit for inclusion identification in impedance
//! tomography on 2D triangle meshes.
//!
//! The crate provides conforming (`P1`/`P2` Lagrange) and symmetric weighted
//! interior penalty discontinuous Galerkin discretizations of the state and
//! adjoint problems, equilibrated-flux reconstructions in Raviart-Thomas
//! spaces, fully computable goal-oriented bounds on the error in the shape
//! gradient, and the certified descent driver that couples them with
//! Armijo line search and goal-driven mesh refinement.

pub mod assembly;
pub mod bessel;
pub mod cda;
pub mod eit;
pub mod estimator;
pub mod io;
pub mod mesh;
pub mod quad;
pub mod spaces;
pub mod validation;

mod error;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// 2D point / vector alias used throughout.
pub type Vec2 = nalgebra::Vector2<f64>;
/// 2x2 matrix alias (gradients of vector fields, deformation tensors).
pub type Mat2 = nalgebra::Matrix2<f64>;
