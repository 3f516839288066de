//! Adaptive algebraic coarsening for implicitly integrated elastodynamics
//! with barrier contact.
//!
//! Each Newton iteration of the implicit time integrator tags mesh edges by
//! the Frobenius norm of their per-element Green strain increment, aggregates
//! fine vertices into coarse super-nodes across collapsible edges with a
//! group-local bit-hash scheme, assembles the coarse system by Galerkin
//! reduction of block triplets (with 12-DoF affine enrichment for large
//! aggregates), solves it with block-Jacobi PCG, prolongates back to the fine
//! mesh, and refines with a bounded full-space CG pass.
//!
//! The crate is organized along the pipeline:
//!
//! - [`mesh`]: geometry loading, topology, node ordering and grouping
//! - [`energy`]: incremental potential, gradients, SPD-projected block Hessians
//! - [`coarsen`]: edge tags, hash aggregation, DoF classification
//! - [`assemble`]: triplet reduction, Galerkin restriction, mixed-block flattening
//! - [`solve`]: block-Jacobi PCG, prolongation, post-coarsening refinement
//! - [`stepper`]: the outer Newton loop with contact filtering and line search
//! - [`oracle`]: independent brute-force references used by tests and `verify`
//! - [`scene`]: scene configuration and simulation driver
//! - [`verify`]: the oracle-backed property suite behind the `verify` subcommand

pub mod assemble;
pub mod coarsen;
pub mod energy;
pub mod error;
pub mod math;
pub mod mesh;
pub mod oracle;
pub mod output;
pub mod scene;
pub mod solve;
pub mod stepper;
pub mod verify;

pub use error::{Error, Result};
pub use math::{BlockTriplet, Mat3, Vec3};
