//! Small shared numeric types and deterministic reductions.

use nalgebra::DMatrix;

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

/// One non-zero entry of a block sparse matrix: a 3x3 scalar block at
/// (row, col) in node index space. The unit of all sparse assembly and
/// keyed reduction in this crate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockTriplet {
    pub row: usize,
    pub col: usize,
    pub block: Mat3,
}

impl BlockTriplet {
    pub fn new(row: usize, col: usize, block: Mat3) -> Self {
        Self { row, col, block }
    }
}

/// Homogeneous rest-pose coordinate (x, y, z, 1) of a vertex.
pub fn homogeneous(p: &Vec3) -> [f64; 4] {
    [p.x, p.y, p.z, 1.0]
}

const PAIRWISE_BASE: usize = 8;

/// Pairwise (tree) summation with a fixed reduction shape.
///
/// The shape depends only on the slice length, never on worker count, so
/// results are bit-reproducible across runs and thread configurations.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= PAIRWISE_BASE {
        let mut acc = 0.0;
        for &v in values {
            acc += v;
        }
        return acc;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Dot product via the same fixed-shape pairwise reduction as [`pairwise_sum`].
pub fn pairwise_dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.len() <= PAIRWISE_BASE {
        let mut acc = 0.0;
        for (x, y) in a.iter().zip(b) {
            acc += x * y;
        }
        return acc;
    }
    let mid = a.len() / 2;
    pairwise_dot(&a[..mid], &b[..mid]) + pairwise_dot(&a[mid..], &b[mid..])
}

pub fn norm2(v: &[f64]) -> f64 {
    pairwise_dot(v, v).sqrt()
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, &x| m.max(x.abs()))
}

pub fn inf_norm_vec3(v: &[Vec3]) -> f64 {
    v.iter().fold(0.0_f64, |m, p| {
        m.max(p.x.abs()).max(p.y.abs()).max(p.z.abs())
    })
}

/// Flatten per-vertex 3-vectors into a scalar vector.
pub fn flatten_vec3(v: &[Vec3]) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 * v.len());
    for p in v {
        out.extend_from_slice(&[p.x, p.y, p.z]);
    }
    out
}

/// Inverse of [`flatten_vec3`]; length must be a multiple of 3.
pub fn unflatten_vec3(v: &[f64]) -> Vec<Vec3> {
    debug_assert_eq!(v.len() % 3, 0);
    v.chunks_exact(3)
        .map(|c| Vec3::new(c[0], c[1], c[2]))
        .collect()
}

/// Project a symmetric matrix onto the PSD cone by clamping negative
/// eigenvalues to zero. The input is symmetrized first to remove rounding
/// asymmetry from assembly. Matrices that already factor (the common case
/// near rest) skip the eigendecomposition.
pub fn psd_project(mat: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (mat + mat.transpose()) * 0.5;
    if sym.clone().cholesky().is_some() {
        return sym;
    }
    let eig = sym.clone().symmetric_eigen();
    let mut vals = eig.eigenvalues;
    let mut any_negative = false;
    for v in vals.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
            any_negative = true;
        }
    }
    if !any_negative {
        return sym;
    }
    let v = eig.eigenvectors;
    &v * DMatrix::from_diagonal(&vals) * v.transpose()
}
