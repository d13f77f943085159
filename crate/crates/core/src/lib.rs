//! Anisotropic minimal graphs over truncated half-spaces with a free boundary
//! on the wall `{x1 = 0}`.
//!
//! The pipeline is: build an [`EllipticIntegrand`], mesh a [`HalfDomain`],
//! minimize the discrete anisotropic area with [`solver::solve`], then derive
//! geometric fields with [`geometry::compute_geometry`] and run the checks in
//! [`verify`].

pub mod dirichlet;
pub mod domain;
pub mod error;
pub mod geometry;
pub mod integrand;
pub mod scenario;
pub mod solver;
pub mod sparse;
pub mod verify;

pub use dirichlet::DirichletSpec;
pub use domain::{HalfDomain, Mesh, Tag};
pub use error::{Error, Result};
pub use geometry::{compute_geometry, GraphGeometry};
pub use integrand::{EllipticIntegrand, IntegrandBounds, IntegrandDescriptor, IntegrandKind};
pub use scenario::Scenario;
pub use solver::{GraphFunction, SolveConfig, SolveReport};
