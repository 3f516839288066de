//! Linear solves: block-Jacobi preconditioned conjugate gradients over block
//! triplets, prolongation of coarse solutions, and the bounded post-coarsening
//! refinement on the full fine system.
//!
//! Determinism contract: SpMV accumulates each row's triplets in sorted key
//! order and dot products use a fixed-shape pairwise reduction, so results do
//! not depend on the worker count.

use rayon::prelude::*;

use crate::assemble::AffineBasis;
use crate::coarsen::{DofClassification, FineToCoarseMap};
use crate::error::{Error, Result};
use crate::math::{norm2, pairwise_dot, unflatten_vec3, BlockTriplet, Mat3, Vec3};

#[derive(Clone, Copy, Debug)]
pub struct PcgConfig {
    pub rel_tol: f64,
    pub max_iters: usize,
    pub post_coarsen_max_iters: usize,
}

impl Default for PcgConfig {
    fn default() -> Self {
        PcgConfig {
            rel_tol: 1e-3,
            max_iters: 1000,
            post_coarsen_max_iters: 10,
        }
    }
}

impl PcgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rel_tol <= 0.0 {
            return Err(Error::Config("pcg rel_tol must be positive".into()));
        }
        if self.max_iters == 0 || self.post_coarsen_max_iters == 0 {
            return Err(Error::Config("pcg iteration caps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-solve statistics; `residual_history` starts with the initial coarse
/// residual norm.
#[derive(Clone, Debug, Default)]
pub struct SolveStats {
    pub coarse_iters: usize,
    pub post_iters: usize,
    pub coarse_dof: usize,
    pub residual_history: Vec<f64>,
}

/// Sparse block matrix in deduplicated, key-sorted triplet form with row
/// segmentation for SpMV.
#[derive(Clone, Debug)]
pub struct BlockMatrix {
    node_count: usize,
    triplets: Vec<BlockTriplet>,
    row_starts: Vec<usize>,
}

impl BlockMatrix {
    /// Build from the output of [`crate::assemble::reduce_triplets`] (sorted
    /// by key, one entry per (i, j)).
    pub fn from_reduced(triplets: Vec<BlockTriplet>, node_count: usize) -> Self {
        debug_assert!(triplets
            .windows(2)
            .all(|w| (w[0].row, w[0].col) < (w[1].row, w[1].col)));
        let mut row_starts = vec![0usize; node_count + 1];
        for t in &triplets {
            row_starts[t.row + 1] += 1;
        }
        for i in 0..node_count {
            row_starts[i + 1] += row_starts[i];
        }
        BlockMatrix {
            node_count,
            triplets,
            row_starts,
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn dof(&self) -> usize {
        3 * self.node_count
    }

    pub fn triplets(&self) -> &[BlockTriplet] {
        &self.triplets
    }

    /// y = A x, parallel over block rows; each row accumulates its segment in
    /// stored (key) order.
    pub fn spmv(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dof());
        debug_assert_eq!(y.len(), self.dof());
        let triplets = &self.triplets;
        let row_starts = &self.row_starts;
        y.par_chunks_mut(3).enumerate().for_each(|(row, out)| {
            let mut acc = Vec3::zeros();
            for t in &triplets[row_starts[row]..row_starts[row + 1]] {
                let xv = Vec3::new(x[3 * t.col], x[3 * t.col + 1], x[3 * t.col + 2]);
                acc += t.block * xv;
            }
            out[0] = acc.x;
            out[1] = acc.y;
            out[2] = acc.z;
        });
    }
}

/// Inverted 3x3 diagonal blocks.
#[derive(Clone, Debug)]
pub struct BlockJacobi {
    inv: Vec<Mat3>,
}

impl BlockJacobi {
    /// z = P r.
    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        debug_assert_eq!(r.len(), 3 * self.inv.len());
        z.par_chunks_mut(3).enumerate().for_each(|(i, out)| {
            let rv = Vec3::new(r[3 * i], r[3 * i + 1], r[3 * i + 2]);
            let zv = self.inv[i] * rv;
            out[0] = zv.x;
            out[1] = zv.y;
            out[2] = zv.z;
        });
    }

    pub fn identity(node_count: usize) -> Self {
        BlockJacobi {
            inv: vec![Mat3::identity(); node_count],
        }
    }
}

/// Invert every diagonal 3x3 block. A missing or singular diagonal block is
/// an ill-conditioned-system error naming the node (degenerate affine
/// aggregates land here; the stepper falls back to all-3-DoF).
pub fn block_jacobi_preconditioner(
    triplets: &[BlockTriplet],
    node_count: usize,
) -> Result<BlockJacobi> {
    let mut diag: Vec<Option<Mat3>> = vec![None; node_count];
    for t in triplets {
        if t.row == t.col {
            diag[t.row] = Some(match diag[t.row] {
                Some(existing) => existing + t.block,
                None => t.block,
            });
        }
    }
    let mut inv = Vec::with_capacity(node_count);
    for (node, block) in diag.into_iter().enumerate() {
        let block = block.ok_or(Error::IllConditionedSystem { node })?;
        let inverse = block
            .try_inverse()
            .filter(|m| m.iter().all(|v| v.is_finite()))
            .ok_or(Error::IllConditionedSystem { node })?;
        inv.push(inverse);
    }
    Ok(BlockJacobi { inv })
}

#[derive(Clone, Debug)]
pub struct PcgOutcome {
    pub x: Vec<f64>,
    pub iters: usize,
    pub converged: bool,
    /// Residual 2-norms; first entry is the initial residual.
    pub residual_history: Vec<f64>,
}

/// Preconditioned conjugate gradients on an SPD block system.
///
/// Returns once the residual 2-norm drops to `rel_tol * |rhs|`, or after
/// `max_iters` iterations with `converged = false`.
pub fn pcg(
    matrix: &BlockMatrix,
    rhs: &[f64],
    preconditioner: &BlockJacobi,
    rel_tol: f64,
    max_iters: usize,
    x0: Option<&[f64]>,
) -> Result<PcgOutcome> {
    let n = matrix.dof();
    if rhs.len() != n {
        return Err(Error::Dimension(format!(
            "rhs length {} vs matrix dof {n}",
            rhs.len()
        )));
    }
    let rhs_norm = norm2(rhs);
    if rhs_norm == 0.0 {
        return Ok(PcgOutcome {
            x: vec![0.0; n],
            iters: 0,
            converged: true,
            residual_history: vec![0.0],
        });
    }
    let mut x = match x0 {
        Some(v) => {
            debug_assert_eq!(v.len(), n);
            v.to_vec()
        }
        None => vec![0.0; n],
    };
    let mut r = vec![0.0; n];
    matrix.spmv(&x, &mut r);
    for (ri, bi) in r.iter_mut().zip(rhs) {
        *ri = bi - *ri;
    }
    let tol = rel_tol * rhs_norm;
    let mut history = vec![norm2(&r)];
    if history[0] <= tol {
        return Ok(PcgOutcome {
            x,
            iters: 0,
            converged: true,
            residual_history: history,
        });
    }

    let mut z = vec![0.0; n];
    preconditioner.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = pairwise_dot(&r, &z);
    let mut ap = vec![0.0; n];

    for iter in 1..=max_iters {
        matrix.spmv(&p, &mut ap);
        let pap = pairwise_dot(&p, &ap);
        if !pap.is_finite() {
            return Err(Error::NumericalBreakdown { iter });
        }
        if pap <= 0.0 {
            return Err(Error::IndefiniteMatrix {
                iter,
                curvature: pap,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rnorm = norm2(&r);
        if !rnorm.is_finite() {
            return Err(Error::NumericalBreakdown { iter });
        }
        history.push(rnorm);
        if rnorm <= tol {
            return Ok(PcgOutcome {
                x,
                iters: iter,
                converged: true,
                residual_history: history,
            });
        }
        preconditioner.apply(&r, &mut z);
        let rz_next = pairwise_dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok(PcgOutcome {
        x: x.clone(),
        iters: max_iters,
        converged: false,
        residual_history: history,
    })
}

/// d_f = U^T d_c: 3-DoF children copy their node's vector; affine children
/// apply their homogeneous rest coordinate to the node's four 3-slots.
pub fn prolongate(
    d_c: &[f64],
    map: &FineToCoarseMap,
    class: &DofClassification,
    affine: &AffineBasis,
) -> Vec<Vec3> {
    debug_assert_eq!(d_c.len(), 3 * class.n3 + 12 * class.n12);
    let fine_count = map.map.len();
    (0..fine_count)
        .map(|f| {
            let c = map.map[f];
            let base = if c < class.n3 {
                3 * c
            } else {
                3 * class.n3 + 12 * (c - class.n3)
            };
            if class.is_affine(c) {
                let x = affine.coeffs(f);
                let mut out = Vec3::zeros();
                for (k, &coeff) in x.iter().enumerate() {
                    out += coeff
                        * Vec3::new(
                            d_c[base + 3 * k],
                            d_c[base + 3 * k + 1],
                            d_c[base + 3 * k + 2],
                        );
                }
                out
            } else {
                Vec3::new(d_c[base], d_c[base + 1], d_c[base + 2])
            }
        })
        .collect()
}

/// Bounded CG refinement of a prolongated direction on the full fine system,
/// block-Jacobi preconditioned. Not intended to converge; it corrects local
/// error so later iterations can release DoF.
pub fn post_coarsen(
    d0: &[Vec3],
    fine: &BlockMatrix,
    g_f: &[Vec3],
    preconditioner: &BlockJacobi,
    config: &PcgConfig,
) -> Result<(Vec<Vec3>, PcgOutcome)> {
    let rhs: Vec<f64> = g_f.iter().flat_map(|g| [-g.x, -g.y, -g.z]).collect();
    let x0: Vec<f64> = d0.iter().flat_map(|d| [d.x, d.y, d.z]).collect();
    let outcome = pcg(
        fine,
        &rhs,
        preconditioner,
        config.rel_tol,
        config.post_coarsen_max_iters,
        Some(&x0),
    )?;
    Ok((unflatten_vec3(&outcome.x), outcome))
}
