//! Error type shared across the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in `{path}` line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("element {element} is degenerate: {msg}")]
    DegenerateElement { element: usize, msg: String },

    #[error(
        "element {element} references vertex {vertex}, but the mesh has {vertex_count} vertices"
    )]
    IndexOutOfRange {
        element: usize,
        vertex: usize,
        vertex_count: usize,
    },

    #[error("meshes with mixed element kinds are not supported")]
    MixedElementKinds,

    #[error("group size {0} out of range, must be in 1..=32")]
    GroupSizeOutOfRange(usize),

    #[error("infeasible state: vertex {vertex} at distance {distance:e} from plane {plane}")]
    InfeasibleState {
        vertex: usize,
        plane: usize,
        distance: f64,
    },

    #[error("node index {0} exceeds the 32-bit key range")]
    IndexOverflow(usize),

    #[error("ill-conditioned system: singular diagonal block at node {node}")]
    IllConditionedSystem { node: usize },

    #[error("indefinite matrix: p'Hp = {curvature:e} at PCG iteration {iter}")]
    IndefiniteMatrix { iter: usize, curvature: f64 },

    #[error("numerical breakdown (non-finite value) at PCG iteration {iter}")]
    NumericalBreakdown { iter: usize },

    #[error(
        "line search failed: alpha underflow at E_prev = {e_prev:e}, trial E = {e_trial:e} \
         (inertia {inertia:e}, elastic {elastic:e}, barrier {barrier:e})"
    )]
    LineSearchFailure {
        e_prev: f64,
        e_trial: f64,
        inertia: f64,
        elastic: f64,
        barrier: f64,
    },

    #[error("Newton did not converge within {max_iters} iterations (last |d|_inf/dt = {residual:e}, tol {tol:e})")]
    NonConvergence {
        max_iters: usize,
        residual: f64,
        tol: f64,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("oracle size guard exceeded: {0}")]
    OracleSizeGuard(String),

    #[error("matrix is not positive definite (oracle factorization failed)")]
    NotPositiveDefinite,

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed stats CSV: {0}")]
    MalformedCsv(String),
}
