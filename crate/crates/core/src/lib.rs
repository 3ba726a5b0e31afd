//! Discrete spectral geometry of closed surfaces immersed in hyperbolic space
//! `H^n(delta)` and Euclidean space.
//!
//! The crate discretizes immersed surfaces with linear finite elements,
//! computes first eigenvalues of the Laplacian, the p-Laplacian, divergence
//! form operators `div(T grad u)`, and the Steklov and Steklov-Wentzell
//! problems, and compares them against Reilly-type upper bounds built from the
//! (generalized) mean curvature.
//!
//! Module map:
//! - [`hypgeo`]: ambient geometry (hyperboloid model, exp/log, normal coordinates)
//! - [`mesh`]: immersed meshes, quadrature and operator assembly
//! - [`curvature`]: second fundamental form, `H`, `H_T`, tensor checks
//! - [`spectra`]: eigenvalue solvers
//! - [`center`]: base points where the test-function moments vanish
//! - [`audit`]: both sides of every inequality plus hypothesis checks
//! - [`scenes`]: analytic test surfaces

pub mod audit;
pub mod center;
pub mod config;
pub mod curvature;
pub mod error;
pub mod hypgeo;
pub mod linalg;
pub mod mesh;
pub mod scenes;
pub mod sparse;
pub mod spectra;

pub use config::Config;
pub use error::{Error, Result};
pub use hypgeo::{Ambient, AmbientPoint, Delta};
pub use mesh::ImmersedMesh;
