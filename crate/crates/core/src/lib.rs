//! Per-unit-length capacitance matrices of multiconductor microstrip lines
//! by a 2D method of moments.
//!
//! The pipeline is: describe a layered cross-section ([`geometry`]), split
//! its boundary into segments, assemble and solve the dense system for the
//! total surface charge ([`system`]), refine the mesh until the matrix
//! settles ([`refine`]), check the result for physical validity
//! ([`physicality`]), and sweep parameters while reusing unchanged matrix
//! entries ([`sweep`]).

pub mod geometry;
pub mod io;
pub mod kernel;
pub mod physicality;
pub mod refine;
pub mod sweep;
pub mod system;

#[cfg(feature = "cli")]
pub mod cli;

pub use geometry::{
    build, discretize, refine as bisect, Mesh, SegmentationPlan, StructureSpec, MM,
};
pub use physicality::{audit, AuditOptions, PhysicalityReport};
pub use refine::{converge, ConvergenceReport, RefinementConfig, Strategy};
pub use sweep::{run_method1, run_method2, SweepPlan, SweepResult};
pub use system::{analyze, assemble, solve, CapacitanceMatrix, EPS0};
