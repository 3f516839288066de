//! Independent brute-force references used by tests and the `verify`
//! subcommand: union-find components, finite-difference gradients, dense
//! factorization solves, and dense eigen-checks.
//!
//! These deliberately share no sparse kernels with the production modules so
//! that agreement is evidence rather than tautology. They are single-threaded
//! and size-guarded; they never run inside the simulation loop.

use nalgebra::{DMatrix, DVector};

use crate::coarsen::EdgeTags;
use crate::error::{Error, Result};
use crate::math::{BlockTriplet, Vec3};
use crate::mesh::Mesh;

/// Disjoint-set forest with path compression and union by size.
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
    }
}

/// Connected components of the tag-1 subgraph. Canonical labels: the minimum
/// vertex index of each component.
pub fn union_find_components(tags: &EdgeTags, mesh: &Mesh) -> Vec<usize> {
    let n = mesh.vertex_count();
    let mut uf = UnionFind::new(n);
    for (ei, &[a, b]) in mesh.edges.iter().enumerate() {
        if tags.tags[ei] == 1 {
            uf.union(a, b);
        }
    }
    let mut label = vec![usize::MAX; n];
    let mut out = vec![0; n];
    for (v, slot) in out.iter_mut().enumerate() {
        let root = uf.find(v);
        if label[root] == usize::MAX {
            label[root] = v; // v is the smallest index seen for this root
        }
        *slot = label[root];
    }
    out
}

/// Relabel a partition by first occurrence so that two partitions can be
/// compared up to relabeling.
pub fn canonical_partition(labels: &[usize]) -> Vec<usize> {
    let mut remap = std::collections::HashMap::new();
    let mut next = 0usize;
    labels
        .iter()
        .map(|&l| {
            *remap.entry(l).or_insert_with(|| {
                let id = next;
                next += 1;
                id
            })
        })
        .collect()
}

pub fn partitions_equal(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len() && canonical_partition(a) == canonical_partition(b)
}

/// Central finite differences of a scalar energy, per DoF.
///
/// The state must be interior to the feasible set by at least `2 * step`;
/// infeasible probe points surface as the energy's own error.
pub fn fd_gradient<F>(energy: F, x: &[Vec3], step: f64) -> Result<Vec<Vec3>>
where
    F: Fn(&[Vec3]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    let mut grad = vec![Vec3::zeros(); x.len()];
    for v in 0..x.len() {
        for axis in 0..3 {
            probe[v][axis] = x[v][axis] + step;
            let plus = energy(&probe)?;
            probe[v][axis] = x[v][axis] - step;
            let minus = energy(&probe)?;
            probe[v][axis] = x[v][axis];
            grad[v][axis] = (plus - minus) / (2.0 * step);
        }
    }
    Ok(grad)
}

/// Accumulate block triplets into a dense matrix by plain `+=`, independent of
/// the keyed-reduction path.
pub fn dense_from_triplets(triplets: &[BlockTriplet], node_count: usize) -> DMatrix<f64> {
    let n = 3 * node_count;
    let mut m = DMatrix::zeros(n, n);
    for t in triplets {
        for r in 0..3 {
            for c in 0..3 {
                m[(3 * t.row + r, 3 * t.col + c)] += t.block[(r, c)];
            }
        }
    }
    m
}

const DENSE_SOLVE_MAX_DOF: usize = 3000;

/// Cholesky-based dense solve for SPD systems up to 3000 DoF.
pub fn dense_solve(matrix: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if matrix.nrows() > DENSE_SOLVE_MAX_DOF {
        return Err(Error::OracleSizeGuard(format!(
            "dense_solve limited to {DENSE_SOLVE_MAX_DOF} DoF, got {}",
            matrix.nrows()
        )));
    }
    if matrix.nrows() != matrix.ncols() || matrix.nrows() != rhs.len() {
        return Err(Error::Dimension(format!(
            "matrix {}x{} vs rhs {}",
            matrix.nrows(),
            matrix.ncols(),
            rhs.len()
        )));
    }
    let chol = matrix
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite)?;
    Ok(chol.solve(rhs))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn smallest_eigenvalue(matrix: &DMatrix<f64>) -> f64 {
    let sym = (matrix + matrix.transpose()) * 0.5;
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |m, &v| m.min(v))
}
