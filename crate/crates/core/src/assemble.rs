//! Coarse system assembly: 64-bit keyed deduplication of block triplets,
//! gradient/Hessian restriction through the fine-to-coarse map with adaptive
//! affine enrichment, and flattening of mixed 3/12-DoF blocks back into 3x3
//! triplets via expanded global indices.
//!
//! The whole pipeline is algebraically a Galerkin projection H_c = U H_f U^T,
//! g_c = U g_f for the restriction operator U induced by the aggregation map;
//! [`build_restriction_matrix`] materializes U densely for oracle checks.

use nalgebra::{DMatrix, SMatrix};
use rayon::prelude::*;

use crate::coarsen::{DofClassification, FineToCoarseMap};
use crate::error::{Error, Result};
use crate::math::{homogeneous, BlockTriplet, Vec3};

/// 64-bit dedup key: (i << 32) | j. Sorts lexicographically by (i, j).
pub fn hash_key(i: usize, j: usize) -> Result<u64> {
    if i > u32::MAX as usize {
        return Err(Error::IndexOverflow(i));
    }
    if j > u32::MAX as usize {
        return Err(Error::IndexOverflow(j));
    }
    Ok(((i as u64) << 32) | j as u64)
}

fn key_of(t: &BlockTriplet) -> u64 {
    debug_assert!(t.row <= u32::MAX as usize && t.col <= u32::MAX as usize);
    ((t.row as u64) << 32) | t.col as u64
}

/// Sort triplets by key and sum duplicate (i, j) entries. Sorting (key,
/// input position) pairs keeps equal keys in input order, so segment sums are
/// deterministic for a given input sequence.
pub fn reduce_triplets(triplets: &[BlockTriplet]) -> Vec<BlockTriplet> {
    let mut order: Vec<(u64, u32)> = triplets
        .iter()
        .enumerate()
        .map(|(i, t)| (key_of(t), i as u32))
        .collect();
    order.sort_unstable();
    let mut out: Vec<BlockTriplet> = Vec::new();
    for &(_, i) in &order {
        let t = &triplets[i as usize];
        match out.last_mut() {
            Some(last) if last.row == t.row && last.col == t.col => last.block += t.block,
            _ => out.push(*t),
        }
    }
    out
}

/// Homogeneous rest-pose coordinates backing the per-vertex affine basis
/// A_f = X_f (x) I_3 (a 12x3 block).
#[derive(Clone, Debug)]
pub struct AffineBasis {
    pub rest: Vec<[f64; 4]>,
}

impl AffineBasis {
    pub fn new(rest_positions: &[Vec3]) -> Self {
        AffineBasis {
            rest: rest_positions.iter().map(homogeneous).collect(),
        }
    }

    pub fn coeffs(&self, f: usize) -> [f64; 4] {
        self.rest[f]
    }

    /// Dense A_f for oracle checks: block k of the 12x3 matrix is `X_f[k] I_3`.
    pub fn matrix(&self, f: usize) -> SMatrix<f64, 12, 3> {
        let x = self.rest[f];
        let mut a = SMatrix::<f64, 12, 3>::zeros();
        for (k, &coeff) in x.iter().enumerate() {
            for r in 0..3 {
                a[(3 * k + r, r)] = coeff;
            }
        }
        a
    }
}

/// Reduced gradient and Hessian over the expanded coarse index space.
///
/// Layout: 3-DoF nodes first (one 3-slot each), then 12-DoF nodes (four
/// consecutive 3-slots each, the rows of the node's homogeneous basis).
#[derive(Clone, Debug)]
pub struct CoarseSystem {
    /// Length 3 * n3 + 12 * n12.
    pub gradient: Vec<f64>,
    /// Deduplicated triplets over expanded indices.
    pub hessian: Vec<BlockTriplet>,
    pub n3: usize,
    pub n12: usize,
}

impl CoarseSystem {
    pub fn expanded_node_count(&self) -> usize {
        self.n3 + 4 * self.n12
    }

    pub fn dof(&self) -> usize {
        3 * self.n3 + 12 * self.n12
    }
}

/// First expanded slot of coarse node `c`.
fn expanded_base(class: &DofClassification, c: usize) -> usize {
    if c < class.n3 {
        c
    } else {
        class.n3 + 4 * (c - class.n3)
    }
}

/// Accumulate fine gradients into their coarse targets: raw sums for 3-DoF
/// nodes, A_f g_f for affine nodes.
pub fn restrict_gradient(
    g_f: &[Vec3],
    map: &FineToCoarseMap,
    class: &DofClassification,
    affine: &AffineBasis,
) -> Vec<f64> {
    let mut out = vec![0.0; 3 * class.n3 + 12 * class.n12];
    for (f, g) in g_f.iter().enumerate() {
        let c = map.map[f];
        let base = 3 * expanded_base(class, c);
        if class.is_affine(c) {
            let x = affine.coeffs(f);
            for (k, &coeff) in x.iter().enumerate() {
                out[base + 3 * k] += coeff * g.x;
                out[base + 3 * k + 1] += coeff * g.y;
                out[base + 3 * k + 2] += coeff * g.z;
            }
        } else {
            out[base] += g.x;
            out[base + 1] += g.y;
            out[base + 2] += g.z;
        }
    }
    out
}

/// Flatten one fine triplet into 3x3 blocks over expanded coarse indices.
///
/// The four cases: 3/3 keeps the block; 12/12 expands A_i B A_j^T into 16
/// blocks; 3/12 and 12/3 expand B A_j^T and A_i B into 4 blocks. Block (k, l)
/// of an expanded product is `X_i[k] X_j[l] B`, so the expanded row index for a
/// 12-DoF node m is n3 + (m - n3)*4 + k and the column n3 + (m' - n3)*4 + l
/// (k = floor(K/4), l = K mod 4 for the row-major block index K of the 12/12
/// case).
pub fn transform_triplet(
    t: &BlockTriplet,
    map: &FineToCoarseMap,
    class: &DofClassification,
    affine: &AffineBasis,
    out: &mut Vec<BlockTriplet>,
) {
    let (m_row, m_col) = (map.map[t.row], map.map[t.col]);
    let (row_affine, col_affine) = (class.is_affine(m_row), class.is_affine(m_col));
    let (rbase, cbase) = (expanded_base(class, m_row), expanded_base(class, m_col));
    match (row_affine, col_affine) {
        (false, false) => out.push(BlockTriplet::new(rbase, cbase, t.block)),
        (true, true) => {
            let xi = affine.coeffs(t.row);
            let xj = affine.coeffs(t.col);
            for (k, &ci) in xi.iter().enumerate() {
                for (l, &cj) in xj.iter().enumerate() {
                    out.push(BlockTriplet::new(rbase + k, cbase + l, (ci * cj) * t.block));
                }
            }
        }
        (false, true) => {
            let xj = affine.coeffs(t.col);
            for (l, &coeff) in xj.iter().enumerate() {
                out.push(BlockTriplet::new(rbase, cbase + l, coeff * t.block));
            }
        }
        (true, false) => {
            let xi = affine.coeffs(t.row);
            for (k, &coeff) in xi.iter().enumerate() {
                out.push(BlockTriplet::new(rbase + k, cbase, coeff * t.block));
            }
        }
    }
}

/// Number of 3x3 blocks a fine triplet expands into: 1 (3/3), 4 (mixed), or
/// 16 (12/12).
fn block_count(t: &BlockTriplet, map: &FineToCoarseMap, class: &DofClassification) -> usize {
    match (
        class.is_affine(map.map[t.row]),
        class.is_affine(map.map[t.col]),
    ) {
        (false, false) => 1,
        (true, true) => 16,
        _ => 4,
    }
}

struct TransformEnv<'a> {
    map: &'a FineToCoarseMap,
    class: &'a DofClassification,
    affine: &'a AffineBasis,
}

/// Write the expansions of `fine` into `out` at the exclusive offsets
/// (shifted by `base`, the global offset of `out`'s start). Splits in half
/// for parallelism; output positions depend only on the offsets, never on
/// the split points.
fn fill_transformed(
    fine: &[BlockTriplet],
    offsets: &[usize],
    base: usize,
    out: &mut [BlockTriplet],
    env: &TransformEnv,
) {
    const SEQUENTIAL_CHUNK: usize = 1024;
    if fine.len() <= SEQUENTIAL_CHUNK {
        let mut buf: Vec<BlockTriplet> = Vec::with_capacity(16);
        for (i, t) in fine.iter().enumerate() {
            buf.clear();
            transform_triplet(t, env.map, env.class, env.affine, &mut buf);
            let start = offsets[i] - base;
            out[start..start + buf.len()].copy_from_slice(&buf);
        }
        return;
    }
    let mid = fine.len() / 2;
    let split = offsets[mid] - base;
    let (lo, hi) = out.split_at_mut(split);
    rayon::join(
        || fill_transformed(&fine[..mid], &offsets[..mid], base, lo, env),
        || fill_transformed(&fine[mid..], &offsets[mid..], offsets[mid], hi, env),
    );
}

/// Galerkin-reduce a deduplicated fine system through the aggregation map:
/// transform every triplet, re-deduplicate by expanded key, restrict the
/// gradient. Flattened blocks land at exclusive-prefix-sum offsets, so the
/// stream order (and therefore every segment sum) is independent of the
/// worker count.
pub fn build_coarse_system(
    fine_triplets: &[BlockTriplet],
    g_f: &[Vec3],
    map: &FineToCoarseMap,
    class: &DofClassification,
    affine: &AffineBasis,
) -> CoarseSystem {
    let counts: Vec<usize> = fine_triplets
        .par_iter()
        .map(|t| block_count(t, map, class))
        .collect();
    let mut offsets = Vec::with_capacity(counts.len());
    let mut total = 0usize;
    for &c in &counts {
        offsets.push(total);
        total += c;
    }
    let mut flat = vec![BlockTriplet::new(0, 0, crate::math::Mat3::zeros()); total];
    fill_transformed(
        fine_triplets,
        &offsets,
        0,
        &mut flat,
        &TransformEnv { map, class, affine },
    );
    CoarseSystem {
        gradient: restrict_gradient(g_f, map, class, affine),
        hessian: reduce_triplets(&flat),
        n3: class.n3,
        n12: class.n12,
    }
}

const RESTRICTION_MAX_FINE_DOF: usize = 10_000;

/// Dense restriction operator U of shape (3 n3 + 12 n12) x (3 fine vertices):
/// identity blocks for 3-DoF children, A_f blocks for affine children.
/// Oracle/testing only; guarded against large systems.
pub fn build_restriction_matrix(
    map: &FineToCoarseMap,
    class: &DofClassification,
    affine: &AffineBasis,
    fine_vertex_count: usize,
) -> Result<DMatrix<f64>> {
    if 3 * fine_vertex_count > RESTRICTION_MAX_FINE_DOF {
        return Err(Error::OracleSizeGuard(format!(
            "restriction matrix limited to {RESTRICTION_MAX_FINE_DOF} fine DoF, got {}",
            3 * fine_vertex_count
        )));
    }
    let rows = 3 * class.n3 + 12 * class.n12;
    let mut u = DMatrix::zeros(rows, 3 * fine_vertex_count);
    for f in 0..fine_vertex_count {
        let c = map.map[f];
        let base = 3 * expanded_base(class, c);
        if class.is_affine(c) {
            let x = affine.coeffs(f);
            for (k, &coeff) in x.iter().enumerate() {
                for r in 0..3 {
                    u[(base + 3 * k + r, 3 * f + r)] = coeff;
                }
            }
        } else {
            for r in 0..3 {
                u[(base + r, 3 * f + r)] = 1.0;
            }
        }
    }
    Ok(u)
}

/// Export block triplets as a Matrix Market coordinate file (scalar entries,
/// 1-based indices). Zeros inside stored blocks are kept so the output is a
/// faithful dump of the block structure.
pub fn write_matrix_market<W: std::io::Write>(
    mut w: W,
    triplets: &[BlockTriplet],
    node_count: usize,
) -> std::io::Result<()> {
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(
        w,
        "{} {} {}",
        3 * node_count,
        3 * node_count,
        9 * triplets.len()
    )?;
    for t in triplets {
        for r in 0..3 {
            for c in 0..3 {
                writeln!(
                    w,
                    "{} {} {:e}",
                    3 * t.row + r + 1,
                    3 * t.col + c + 1,
                    t.block[(r, c)]
                )?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coarsen::{classify_dof, FineToCoarseMap};
    use crate::math::Mat3;
    use crate::oracle;
    use nalgebra::DVector;
    use rand::{rngs::StdRng, RngExt, SeedableRng};

    fn rand_block(rng: &mut StdRng) -> Mat3 {
        Mat3::from_fn(|_, _| rng.random::<f64>() - 0.5)
    }

    #[test]
    fn hash_key_bit_layout() {
        assert_eq!(hash_key(1, 2).unwrap(), 0x0000_0001_0000_0002);
        assert_eq!(hash_key(0, 0).unwrap(), 0);
        assert!(hash_key(2, 0).unwrap() > hash_key(1, u32::MAX as usize).unwrap());
        assert!(matches!(
            hash_key(u32::MAX as usize + 1, 0),
            Err(Error::IndexOverflow(_))
        ));
    }

    #[test]
    fn reduce_sums_duplicates() {
        let a = Mat3::from_fn(|r, c| (r * 3 + c) as f64);
        let b = Mat3::identity();
        let reduced = reduce_triplets(&[BlockTriplet::new(0, 1, a), BlockTriplet::new(0, 1, b)]);
        assert_eq!(reduced.len(), 1);
        assert_eq!(reduced[0].block, a + b);
    }

    #[test]
    fn reduce_sorts_unique_input() {
        let t = vec![
            BlockTriplet::new(2, 0, Mat3::identity()),
            BlockTriplet::new(0, 1, Mat3::identity() * 2.0),
            BlockTriplet::new(1, 1, Mat3::identity() * 3.0),
        ];
        let reduced = reduce_triplets(&t);
        let keys: Vec<(usize, usize)> = reduced.iter().map(|t| (t.row, t.col)).collect();
        assert_eq!(keys, vec![(0, 1), (1, 1), (2, 0)]);
    }

    #[test]
    fn reduce_matches_dense_accumulation() {
        let mut rng = StdRng::seed_from_u64(17);
        let triplets: Vec<BlockTriplet> = (0..1000)
            .map(|_| {
                BlockTriplet::new(
                    rng.random_range(0..10),
                    rng.random_range(0..10),
                    rand_block(&mut rng),
                )
            })
            .collect();
        let reduced = reduce_triplets(&triplets);
        let dense_ref = oracle::dense_from_triplets(&triplets, 10);
        let dense_red = oracle::dense_from_triplets(&reduced, 10);
        let err = (&dense_ref - &dense_red).abs().max();
        assert!(err <= 1e-13 * dense_ref.abs().max().max(1.0), "err {err}");
        // One entry per distinct key.
        let mut keys: Vec<u64> = reduced.iter().map(key_of).collect();
        keys.dedup();
        assert_eq!(keys.len(), reduced.len());
    }

    fn all_3dof_single(fine: usize) -> (FineToCoarseMap, DofClassification) {
        let map = FineToCoarseMap {
            map: vec![0; fine],
            coarse_count: 1,
            aggregate_size: vec![fine],
            levels: 1,
        };
        classify_dof(&map, usize::MAX)
    }

    #[test]
    fn restrict_gradient_identity_map() {
        let g = vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(-1.0, 0.5, 0.0)];
        let (map, class) = classify_dof(&FineToCoarseMap::identity(2), usize::MAX);
        let affine = AffineBasis::new(&[Vec3::zeros(), Vec3::zeros()]);
        let out = restrict_gradient(&g, &map, &class, &affine);
        assert_eq!(out, vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0]);
    }

    #[test]
    fn restrict_gradient_sums_children() {
        let g = vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let (map, class) = all_3dof_single(2);
        let affine = AffineBasis::new(&[Vec3::zeros(), Vec3::zeros()]);
        let out = restrict_gradient(&g, &map, &class, &affine);
        assert_eq!(out, vec![1.0, 1.0, 0.0]);
    }

    #[test]
    fn restrict_gradient_affine_slots() {
        // One fine vertex at rest (2, 0, 0) mapped to a 12-DoF node with
        // g = (0, 0, 1): slots are X * g = [(0,0,2), (0,0,0), (0,0,0), (0,0,1)].
        let map = FineToCoarseMap {
            map: vec![0],
            coarse_count: 1,
            aggregate_size: vec![1],
            levels: 1,
        };
        let (map, class) = classify_dof(&map, 0); // size 1 > 0 -> affine
        assert_eq!(class.n12, 1);
        let affine = AffineBasis::new(&[Vec3::new(2.0, 0.0, 0.0)]);
        let out = restrict_gradient(&[Vec3::new(0.0, 0.0, 1.0)], &map, &class, &affine);
        assert_eq!(
            out,
            vec![0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]
        );
    }

    #[test]
    fn transform_3dof_pair_passes_through() {
        // Fine vertices 0..8 with coarse targets 2 and 5 among 6 x 3-DoF nodes.
        let map = FineToCoarseMap {
            map: vec![2, 5, 0, 1, 3, 4],
            coarse_count: 6,
            aggregate_size: vec![1; 6],
            levels: 1,
        };
        let (map, class) = classify_dof(&map, usize::MAX);
        let affine = AffineBasis::new(&[Vec3::zeros(); 6]);
        let b = Mat3::from_fn(|r, c| (r + 2 * c) as f64);
        let mut out = Vec::new();
        transform_triplet(&BlockTriplet::new(0, 1, b), &map, &class, &affine, &mut out);
        assert_eq!(out.len(), 1);
        assert_eq!((out[0].row, out[0].col), (2, 5));
        assert_eq!(out[0].block, b);
    }

    #[test]
    fn transform_12dof_pair_emits_16_blocks() {
        let map = FineToCoarseMap {
            map: vec![0, 1],
            coarse_count: 2,
            aggregate_size: vec![1, 1],
            levels: 1,
        };
        let (map, class) = classify_dof(&map, 0);
        assert_eq!(class.n12, 2);
        let affine = AffineBasis::new(&[Vec3::new(1.0, 2.0, 3.0), Vec3::new(-1.0, 0.5, 2.0)]);
        let b = Mat3::identity();
        let mut out = Vec::new();
        transform_triplet(&BlockTriplet::new(0, 1, b), &map, &class, &affine, &mut out);
        assert_eq!(out.len(), 16);
        // Block (k, l) must be X_i[k] X_j[l] B at expanded (k, 4 + l).
        let xi = affine.coeffs(0);
        let xj = affine.coeffs(1);
        for (idx, t) in out.iter().enumerate() {
            let (k, l) = (idx / 4, idx % 4);
            assert_eq!((t.row, t.col), (k, 4 + l));
            assert_eq!(t.block, (xi[k] * xj[l]) * b);
        }
    }

    #[test]
    fn transform_mixed_pairs_emit_4_blocks() {
        // Coarse node 0 is 3-DoF (singleton), node 1 is 12-DoF.
        let map = FineToCoarseMap {
            map: vec![0, 1, 1],
            coarse_count: 2,
            aggregate_size: vec![1, 2],
            levels: 1,
        };
        let (map, class) = classify_dof(&map, 1);
        assert_eq!((class.n3, class.n12), (1, 1));
        let affine = AffineBasis::new(&[
            Vec3::zeros(),
            Vec3::new(0.5, -1.0, 2.0),
            Vec3::new(1.0, 1.0, 1.0),
        ]);
        let b = Mat3::from_fn(|r, c| 1.0 + (r * c) as f64);
        let mut out = Vec::new();
        transform_triplet(&BlockTriplet::new(0, 1, b), &map, &class, &affine, &mut out);
        assert_eq!(out.len(), 4);
        let xj = affine.coeffs(1);
        for (l, t) in out.iter().enumerate() {
            assert_eq!((t.row, t.col), (0, 1 + l));
            assert_eq!(t.block, xj[l] * b);
        }
        let mut out = Vec::new();
        transform_triplet(&BlockTriplet::new(2, 0, b), &map, &class, &affine, &mut out);
        assert_eq!(out.len(), 4);
        let xi = affine.coeffs(2);
        for (k, t) in out.iter().enumerate() {
            assert_eq!((t.row, t.col), (1 + k, 0));
            assert_eq!(t.block, xi[k] * b);
        }
    }

    #[test]
    fn expanded_index_formula_example() {
        // n3 = 5, 12-DoF coarse node m = 7, K = 6: r = 5 + (7-5)*4 + 1 = 14.
        let class = DofClassification {
            dof: vec![3, 3, 3, 3, 3, 12, 12, 12],
            n3: 5,
            n12: 3,
            reorder: (0..8).collect(),
            affine_threshold: 32,
        };
        let m = 7;
        let k_th = 6;
        let r = expanded_base(&class, m) + k_th / 4;
        assert_eq!(r, 14);
        let m_col = 6;
        let c = expanded_base(&class, m_col) + k_th % 4;
        assert_eq!(c, 5 + (m_col - 5) * 4 + 2);
    }

    #[test]
    fn coarse_system_equals_fine_under_identity_map() {
        let mut rng = StdRng::seed_from_u64(5);
        let n = 6;
        let mut fine = Vec::new();
        for i in 0..n {
            let b = rand_block(&mut rng);
            fine.push(BlockTriplet::new(
                i,
                i,
                b * b.transpose() + Mat3::identity(),
            ));
        }
        fine.push(BlockTriplet::new(0, 3, rand_block(&mut rng)));
        fine.push(BlockTriplet::new(3, 0, rand_block(&mut rng)));
        let fine = reduce_triplets(&fine);
        let g: Vec<Vec3> = (0..n).map(|_| Vec3::from_fn(|_, _| rng.random())).collect();
        let (map, class) = classify_dof(&FineToCoarseMap::identity(n), usize::MAX);
        let affine = AffineBasis::new(&vec![Vec3::zeros(); n]);
        let sys = build_coarse_system(&fine, &g, &map, &class, &affine);
        assert_eq!(sys.hessian, fine);
        assert_eq!(sys.gradient, crate::math::flatten_vec3(&g));
    }

    #[test]
    fn coarse_system_sums_mass_diagonal() {
        let masses = [2.0, 3.0, 5.0];
        let fine: Vec<BlockTriplet> = masses
            .iter()
            .enumerate()
            .map(|(i, &m)| BlockTriplet::new(i, i, Mat3::identity() * m))
            .collect();
        let g = vec![Vec3::zeros(); 3];
        let (map, class) = all_3dof_single(3);
        let affine = AffineBasis::new(&[Vec3::zeros(); 3]);
        let sys = build_coarse_system(&fine, &g, &map, &class, &affine);
        assert_eq!(sys.hessian.len(), 1);
        assert_eq!(sys.hessian[0].block, Mat3::identity() * 10.0);
    }

    /// Random consistent (map, classification, affine) over `n` fine vertices.
    fn random_partition(
        rng: &mut StdRng,
        n: usize,
    ) -> (FineToCoarseMap, DofClassification, AffineBasis) {
        let coarse = rng.random_range(1..=n);
        let mut map: Vec<usize> = (0..n).map(|_| rng.random_range(0..coarse)).collect();
        // Ensure every coarse index is used.
        for (c, slot) in map.iter_mut().enumerate().take(coarse) {
            *slot = c;
        }
        let mut sizes = vec![0usize; coarse];
        for &c in &map {
            sizes[c] += 1;
        }
        let raw = FineToCoarseMap {
            map,
            coarse_count: coarse,
            aggregate_size: sizes,
            levels: 1,
        };
        // Random threshold so both classes appear.
        let threshold = rng.random_range(0..4);
        let (map, class) = classify_dof(&raw, threshold);
        let rest: Vec<Vec3> = (0..n)
            .map(|_| Vec3::from_fn(|_, _| rng.random::<f64>() * 2.0 - 1.0))
            .collect();
        (map, class, AffineBasis::new(&rest))
    }

    fn random_spd_triplets(rng: &mut StdRng, n: usize) -> Vec<BlockTriplet> {
        let mut triplets = Vec::new();
        for i in 0..n {
            triplets.push(BlockTriplet::new(
                i,
                i,
                Mat3::identity() * (1.0 + rng.random::<f64>()),
            ));
        }
        for _ in 0..2 * n {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a == b {
                continue;
            }
            let block = rand_block(rng) * 0.1;
            triplets.push(BlockTriplet::new(a, b, block));
            triplets.push(BlockTriplet::new(b, a, block.transpose()));
        }
        reduce_triplets(&triplets)
    }

    #[test]
    fn galerkin_equivalence_against_dense_oracle() {
        let mut rng = StdRng::seed_from_u64(23);
        for _ in 0..50 {
            let n = rng.random_range(2..=20);
            let fine = random_spd_triplets(&mut rng, n);
            let g: Vec<Vec3> = (0..n).map(|_| Vec3::from_fn(|_, _| rng.random())).collect();
            let (map, class, affine) = random_partition(&mut rng, n);
            let sys = build_coarse_system(&fine, &g, &map, &class, &affine);

            let u = build_restriction_matrix(&map, &class, &affine, n).unwrap();
            let hf = oracle::dense_from_triplets(&fine, n);
            let hc_ref = &u * hf * u.transpose();
            let gc_ref = &u * DVector::from_vec(crate::math::flatten_vec3(&g));

            let hc = oracle::dense_from_triplets(&sys.hessian, sys.expanded_node_count());
            let scale = hc_ref.abs().max().max(1e-30);
            assert!(
                (&hc - &hc_ref).abs().max() <= 1e-10 * scale,
                "coarse Hessian mismatch"
            );
            let gc = DVector::from_vec(sys.gradient.clone());
            let gscale = gc_ref.abs().max().max(1e-30);
            assert!((&gc - &gc_ref).abs().max() <= 1e-10 * gscale);

            // Symmetry preservation.
            let asym = (&hc - hc.transpose()).abs().max();
            assert!(asym <= 1e-10 * scale);
        }
    }

    #[test]
    fn spd_preserved_under_full_rank_restriction() {
        let mut rng = StdRng::seed_from_u64(41);
        // All-3-DoF partitions always have full row rank.
        for _ in 0..10 {
            let n = rng.random_range(3..=15);
            let fine = random_spd_triplets(&mut rng, n);
            let (map, class, affine) = {
                let coarse = rng.random_range(1..=n);
                let mut map: Vec<usize> = (0..n).map(|_| rng.random_range(0..coarse)).collect();
                for (c, slot) in map.iter_mut().enumerate().take(coarse) {
                    *slot = c;
                }
                let mut sizes = vec![0usize; coarse];
                for &c in &map {
                    sizes[c] += 1;
                }
                let raw = FineToCoarseMap {
                    map,
                    coarse_count: coarse,
                    aggregate_size: sizes,
                    levels: 1,
                };
                let (map, class) = classify_dof(&raw, usize::MAX);
                (map, class, AffineBasis::new(&vec![Vec3::zeros(); n]))
            };
            let g = vec![Vec3::zeros(); n];
            let sys = build_coarse_system(&fine, &g, &map, &class, &affine);
            let hc = oracle::dense_from_triplets(&sys.hessian, sys.expanded_node_count());
            assert!(oracle::smallest_eigenvalue(&hc) > 0.0);
        }

        // One affine node over enough non-coplanar children is full rank too.
        let n = 8;
        let fine = random_spd_triplets(&mut rng, n);
        let raw = FineToCoarseMap {
            map: vec![0; n],
            coarse_count: 1,
            aggregate_size: vec![n],
            levels: 1,
        };
        let (map, class) = classify_dof(&raw, 4);
        assert_eq!(class.n12, 1);
        let rest: Vec<Vec3> = (0..n)
            .map(|_| Vec3::from_fn(|_, _| rng.random::<f64>() * 2.0 - 1.0))
            .collect();
        let affine = AffineBasis::new(&rest);
        let sys = build_coarse_system(&fine, &vec![Vec3::zeros(); n], &map, &class, &affine);
        let hc = oracle::dense_from_triplets(&sys.hessian, sys.expanded_node_count());
        assert!(
            oracle::smallest_eigenvalue(&hc) > 0.0,
            "affine coarse system must stay SPD"
        );
    }

    #[test]
    fn restriction_matrix_examples() {
        // Identity map: U = I.
        let (map, class) = classify_dof(&FineToCoarseMap::identity(3), usize::MAX);
        let affine = AffineBasis::new(&[Vec3::zeros(); 3]);
        let u = build_restriction_matrix(&map, &class, &affine, 3).unwrap();
        assert_eq!(u, DMatrix::identity(9, 9));

        // Two vertices into one 3-DoF node: U = [I3 I3].
        let (map, class) = all_3dof_single(2);
        let affine = AffineBasis::new(&[Vec3::zeros(); 2]);
        let u = build_restriction_matrix(&map, &class, &affine, 2).unwrap();
        assert_eq!(u.nrows(), 3);
        for r in 0..3 {
            for c in 0..6 {
                let expected = if c % 3 == r { 1.0 } else { 0.0 };
                assert_eq!(u[(r, c)], expected);
            }
        }

        // Single vertex at rest (1,1,1) into a 12-DoF node: U = X (x) I3.
        let raw = FineToCoarseMap {
            map: vec![0],
            coarse_count: 1,
            aggregate_size: vec![1],
            levels: 1,
        };
        let (map, class) = classify_dof(&raw, 0);
        let affine = AffineBasis::new(&[Vec3::new(1.0, 1.0, 1.0)]);
        let u = build_restriction_matrix(&map, &class, &affine, 1).unwrap();
        assert_eq!(
            u,
            DMatrix::from_fn(12, 3, |r, c| if r % 3 == c { 1.0 } else { 0.0 })
        );
    }

    #[test]
    fn restriction_matrix_size_guard() {
        let (map, class) = classify_dof(&FineToCoarseMap::identity(4000), usize::MAX);
        let affine = AffineBasis::new(&vec![Vec3::zeros(); 4000]);
        assert!(matches!(
            build_restriction_matrix(&map, &class, &affine, 4000),
            Err(Error::OracleSizeGuard(_))
        ));
    }

    #[test]
    fn conservation_under_all_3dof_restriction() {
        let mut rng = StdRng::seed_from_u64(31);
        let n = 17;
        let g: Vec<Vec3> = (0..n).map(|_| Vec3::from_fn(|_, _| rng.random())).collect();
        let raw = FineToCoarseMap {
            map: (0..n).map(|i| i % 4).collect(),
            coarse_count: 4,
            aggregate_size: {
                let mut s = vec![0; 4];
                for i in 0..n {
                    s[i % 4] += 1;
                }
                s
            },
            levels: 1,
        };
        let (map, class) = classify_dof(&raw, usize::MAX);
        let affine = AffineBasis::new(&vec![Vec3::zeros(); n]);
        let out = restrict_gradient(&g, &map, &class, &affine);
        let total_fine: f64 = g.iter().map(|v| v.x + v.y + v.z).sum();
        let total_coarse: f64 = out.iter().sum();
        assert!((total_fine - total_coarse).abs() < 1e-12 * total_fine.abs().max(1.0));
    }

    #[test]
    fn matrix_market_dump_format() {
        let t = vec![BlockTriplet::new(0, 1, Mat3::identity())];
        let mut buf = Vec::new();
        write_matrix_market(&mut buf, &t, 2).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "%%MatrixMarket matrix coordinate real general"
        );
        assert_eq!(lines.next().unwrap(), "6 6 9");
        assert!(text.contains("1 4 1e0"));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// Keyed reduction agrees with plain dense accumulation for any
            /// triplet multiset.
            #[test]
            fn reduction_matches_dense_accumulation(
                entries in proptest::collection::vec(
                    (0usize..6, 0usize..6, -10.0f64..10.0), 0..60
                )
            ) {
                let triplets: Vec<BlockTriplet> = entries
                    .iter()
                    .map(|&(r, c, v)| BlockTriplet::new(r, c, Mat3::identity() * v))
                    .collect();
                let reduced = reduce_triplets(&triplets);
                let dense_a = oracle::dense_from_triplets(&triplets, 6);
                let dense_b = oracle::dense_from_triplets(&reduced, 6);
                let scale = dense_a.abs().max().max(1.0);
                prop_assert!((dense_a - dense_b).abs().max() <= 1e-12 * scale);
                // Sorted, unique keys.
                for w in reduced.windows(2) {
                    prop_assert!((w[0].row, w[0].col) < (w[1].row, w[1].col));
                }
            }
        }
    }
}
