//! Quad-tree AMR with a nodal discontinuous Galerkin spectral element solver.
//!
//! The crate is organised bottom-up:
//!
//! * [`basis`]: LGL nodes, quadrature, differentiation and projection matrices.
//! * [`euler`]: equation of state, hydrostatic background, fluxes, diagnostics.
//! * [`sphere`]: cubed-sphere mapping, spherical areas, pseudo-inverse metrics.
//! * [`tree`]: quad-tree forest with 2:1 balance and face connectivity.
//! * [`mortar`]: conservative non-conformal face coupling and solution transfer.
//! * [`dg`]: the spatial operator, time stepping and regrid driver.

pub mod basis;
pub mod dg;
pub mod euler;
pub mod mortar;
pub mod sphere;
pub mod tree;
