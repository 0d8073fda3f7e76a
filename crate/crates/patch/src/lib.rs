//! Block-structured adaptive mesh refinement.
//!
//! Levels of uniform boxes with refinement ratio 2, built by
//! Berger–Rigoutsos clustering and clipped for proper nesting. Each level
//! advances with its own time step (subcycling); flux registers and
//! averaging restore conservation when levels synchronise.

pub mod cluster;
pub mod fv;
pub mod hierarchy;
pub mod index_box;
pub mod nesting;
pub mod stencil;
pub mod vtk;

use thiserror::Error;

pub use cluster::{berger_rigoutsos, ClusterParams};
pub use hierarchy::{
    average_down, reflux, round_robin, Coupling, FluxRegister, Hierarchy, HierarchyConfig, Level,
};
pub use index_box::{Cell, IndexBox};
pub use nesting::{enforce_proper_nesting, is_properly_nested, ProblemDomain};
pub use stencil::{face_interp, StencilOrder};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PatchError {
    #[error("ghost cell {cell:?} on level {level} needs data from two levels down")]
    NestingViolation { level: u32, cell: Cell },
    #[error("cell {cell:?} on level {level} is not covered")]
    Uncovered { level: u32, cell: Cell },
    #[error("boxes on one level overlap")]
    Overlap,
    #[error("non-finite state at t = {0}")]
    NonFinite(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
}
