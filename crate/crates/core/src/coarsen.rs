//! Per-iteration adaptive coarsening: edge tags from strain increments,
//! aggregation of fine vertices into coarse super-nodes by group-local
//! bit-hash propagation (applied recursively), and 3/12-DoF classification
//! with a stable reordering.
//!
//! Hashes are 32-bit wide, matching the maximum group size. Within a group,
//! each node starts with its own lane bit plus the lanes of direct collapsible
//! neighbors, then iteratively ORs in the initial hashes of every lane it can
//! reach. Nodes sharing a final hash form one coarse node; the lowest set bit
//! identifies the group-local component leader. Per-group coarse counts are
//! turned into global indices by an exclusive prefix sum. Because one pass
//! only merges within groups, the scheme recurses on the coarse graph until
//! the count stops decreasing.

use rayon::prelude::*;

use crate::mesh::{Mesh, NodeOrdering};

/// Per-edge collapse tags: 1 = collapsible, 0 = protected.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeTags {
    pub tags: Vec<u8>,
}

impl EdgeTags {
    pub fn all_collapsible(edge_count: usize) -> Self {
        EdgeTags {
            tags: vec![1; edge_count],
        }
    }

    pub fn all_protected(edge_count: usize) -> Self {
        EdgeTags {
            tags: vec![0; edge_count],
        }
    }
}

/// Protect every edge whose incident elements include one with a strain
/// increment strictly above the threshold; ties stay collapsible.
pub fn tag_edges(increment_norms: &[f64], threshold: f64, mesh: &Mesh) -> EdgeTags {
    let tags = mesh
        .edge_to_elements
        .iter()
        .map(|elems| {
            let exceeded = elems.iter().any(|&ei| increment_norms[ei] > threshold);
            if exceeded {
                0
            } else {
                1
            }
        })
        .collect();
    EdgeTags { tags }
}

/// Result of one aggregation pass over all fine (or level) nodes.
#[derive(Clone, Debug)]
pub struct FineToCoarseMap {
    /// Per-fine-vertex coarse index, in [0, coarse_count).
    pub map: Vec<usize>,
    pub coarse_count: usize,
    /// Fine vertices per coarse node.
    pub aggregate_size: Vec<usize>,
    /// Number of recursive hashing passes performed.
    pub levels: usize,
}

impl FineToCoarseMap {
    pub fn identity(n: usize) -> Self {
        FineToCoarseMap {
            map: (0..n).collect(),
            coarse_count: n,
            aggregate_size: vec![1; n],
            levels: 0,
        }
    }
}

/// 3/12-DoF split of the coarse nodes, with the stable reordering that puts
/// all 3-DoF nodes first.
#[derive(Clone, Debug)]
pub struct DofClassification {
    /// Per coarse node (after reordering): 3 or 12.
    pub dof: Vec<u8>,
    pub n3: usize,
    pub n12: usize,
    /// `reorder[old] = new` coarse index.
    pub reorder: Vec<usize>,
    pub affine_threshold: usize,
}

impl DofClassification {
    pub fn coarse_dof(&self) -> usize {
        3 * self.n3 + 12 * self.n12
    }

    pub fn is_affine(&self, coarse: usize) -> bool {
        coarse >= self.n3
    }

    /// All nodes 3-DoF (used as the fallback when an affine aggregate is
    /// degenerate).
    pub fn all_3dof(coarse_count: usize) -> Self {
        DofClassification {
            dof: vec![3; coarse_count],
            n3: coarse_count,
            n12: 0,
            reorder: (0..coarse_count).collect(),
            affine_threshold: usize::MAX,
        }
    }
}

/// Coarse DoF over fine DoF.
pub fn active_ratio(classification: &DofClassification, fine_vertex_count: usize) -> f64 {
    classification.coarse_dof() as f64 / (3 * fine_vertex_count) as f64
}

/// Group/lane assignment for one hashing pass, in node-id space.
///
/// Level 0 derives it from the static mesh [`NodeOrdering`] (contiguous
/// position chunks). Recursion levels re-derive it by BFS over the current
/// collapsible graph with every connected component starting at a fresh
/// group, which guarantees each multi-node component merges at least its
/// leading pair per pass (for group sizes >= 2) and therefore that the
/// recursion reaches the exact tag-1 components.
#[derive(Clone, Debug)]
struct LevelGrouping {
    group_of: Vec<usize>,
    lane_of: Vec<usize>,
    /// Per group, member nodes in lane order.
    members: Vec<Vec<usize>>,
    /// True when built component-aligned (recursion levels).
    component_aligned: bool,
}

impl LevelGrouping {
    fn from_ordering(ordering: &NodeOrdering) -> Self {
        let n = ordering.node_count();
        let gs = ordering.group_size;
        let mut group_of = vec![0; n];
        let mut lane_of = vec![0; n];
        let mut members = vec![Vec::new(); ordering.group_count];
        for (p, &v) in ordering.perm.iter().enumerate() {
            group_of[v] = p / gs;
            lane_of[v] = p % gs;
            members[p / gs].push(v);
        }
        LevelGrouping {
            group_of,
            lane_of,
            members,
            component_aligned: false,
        }
    }

    /// BFS over `edges` (lowest-index component roots, ascending neighbors),
    /// chunking each component into groups of `group_size` from a fresh
    /// group boundary.
    fn component_aligned(node_count: usize, edges: &[[usize; 2]], group_size: usize) -> Self {
        let mut adjacency = vec![Vec::new(); node_count];
        for &[a, b] in edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for l in &mut adjacency {
            l.sort_unstable();
            l.dedup();
        }
        let mut group_of = vec![0; node_count];
        let mut lane_of = vec![0; node_count];
        let mut members: Vec<Vec<usize>> = Vec::new();
        let mut visited = vec![false; node_count];
        let mut queue = std::collections::VecDeque::new();
        for start in 0..node_count {
            if visited[start] {
                continue;
            }
            visited[start] = true;
            queue.push_back(start);
            let mut placed = 0usize;
            while let Some(v) = queue.pop_front() {
                if placed.is_multiple_of(group_size) {
                    members.push(Vec::new());
                }
                let group = members.len() - 1;
                group_of[v] = group;
                lane_of[v] = placed % group_size;
                members[group].push(v);
                placed += 1;
                for &w in &adjacency[v] {
                    if !visited[w] {
                        visited[w] = true;
                        queue.push_back(w);
                    }
                }
            }
        }
        LevelGrouping {
            group_of,
            lane_of,
            members,
            component_aligned: true,
        }
    }
}

/// Initial hash per node: own lane bit plus the lanes of same-group
/// neighbors across collapsible edges.
fn init_hashes_grouped(
    node_count: usize,
    collapsible_edges: &[[usize; 2]],
    grouping: &LevelGrouping,
) -> Vec<u32> {
    let mut adjacency = vec![Vec::new(); node_count];
    for &[a, b] in collapsible_edges {
        adjacency[a].push(b);
        adjacency[b].push(a);
    }
    (0..node_count)
        .into_par_iter()
        .map(|v| {
            let group = grouping.group_of[v];
            let mut hash = 1u32 << grouping.lane_of[v];
            for &w in &adjacency[v] {
                if grouping.group_of[w] == group {
                    hash |= 1u32 << grouping.lane_of[w];
                }
            }
            hash
        })
        .collect()
}

/// Per-node results of one propagation pass, in node-id space.
struct GroupedPropagate {
    final_hash: Vec<u32>,
    local_order: Vec<usize>,
    group_counts: Vec<usize>,
}

fn propagate_grouped(hashes: &[u32], grouping: &LevelGrouping) -> GroupedPropagate {
    let per_group: Vec<(Vec<u32>, Vec<usize>, usize)> = grouping
        .members
        .par_iter()
        .map(|members| {
            let len = members.len();
            let init: Vec<u32> = members.iter().map(|&v| hashes[v]).collect();
            let full: u32 = if len >= 32 {
                u32::MAX
            } else {
                (1u32 << len) - 1
            };

            let mut finals = vec![0u32; len];
            for i in 0..len {
                let mut conhash = init[i];
                let mut visited = 1u32 << i;
                loop {
                    if conhash == full {
                        break;
                    }
                    let todo = conhash & !visited;
                    if todo == 0 {
                        break;
                    }
                    let next = todo.trailing_zeros() as usize;
                    visited |= 1u32 << next;
                    conhash |= init[next];
                }
                finals[i] = conhash;
            }

            let mut elect = 0u32;
            for (i, &h) in finals.iter().enumerate() {
                let below = (1u32 << i) - 1;
                if h & below == 0 {
                    elect |= 1u32 << i;
                }
            }
            let orders = finals
                .iter()
                .map(|h| {
                    let leader = h.trailing_zeros();
                    (elect & ((1u32 << leader) - 1)).count_ones() as usize
                })
                .collect();
            (finals, orders, elect.count_ones() as usize)
        })
        .collect();

    let node_count = grouping.group_of.len();
    let mut result = GroupedPropagate {
        final_hash: vec![0; node_count],
        local_order: vec![0; node_count],
        group_counts: Vec::with_capacity(per_group.len()),
    };
    for (members, (finals, orders, count)) in grouping.members.iter().zip(per_group) {
        for (i, &v) in members.iter().enumerate() {
            result.final_hash[v] = finals[i];
            result.local_order[v] = orders[i];
        }
        result.group_counts.push(count);
    }
    result
}

/// Initial group-local hash per ordered position: own lane bit plus the
/// lanes of same-group neighbors across collapsible edges.
pub fn init_hashes(tags: &EdgeTags, ordering: &NodeOrdering, mesh: &Mesh) -> Vec<u32> {
    let edges: Vec<[usize; 2]> = mesh
        .edges
        .iter()
        .zip(&tags.tags)
        .filter(|(_, &t)| t == 1)
        .map(|(e, _)| *e)
        .collect();
    let grouping = LevelGrouping::from_ordering(ordering);
    let by_node = init_hashes_grouped(ordering.node_count(), &edges, &grouping);
    ordering.perm.iter().map(|&v| by_node[v]).collect()
}

#[derive(Clone, Debug)]
pub struct PropagateResult {
    /// Final hash per ordered position; equal hashes form one coarse node.
    pub hashes: Vec<u32>,
    /// Group-local coarse order per position: the number of elected leaders
    /// at lanes below this node's component leader.
    pub local_order: Vec<usize>,
    /// Distinct final hashes per group.
    pub group_counts: Vec<usize>,
}

/// Iteratively OR each node's hash with the initial hashes of reachable
/// lanes until fixpoint, then elect component leaders and assign group-local
/// coarse orders. Parallel across groups, sequential within a group.
pub fn propagate_hashes(hashes: &[u32], ordering: &NodeOrdering) -> PropagateResult {
    let grouping = LevelGrouping::from_ordering(ordering);
    // Hashes arrive in position space; the engine works in node space.
    let by_node: Vec<u32> = {
        let mut v = vec![0u32; hashes.len()];
        for (p, &h) in hashes.iter().enumerate() {
            v[ordering.perm[p]] = h;
        }
        v
    };
    let prop = propagate_grouped(&by_node, &grouping);
    PropagateResult {
        hashes: ordering.perm.iter().map(|&v| prop.final_hash[v]).collect(),
        local_order: ordering.perm.iter().map(|&v| prop.local_order[v]).collect(),
        group_counts: prop.group_counts,
    }
}

/// One hashing pass: returns (node -> level-coarse index, coarse count).
fn aggregate_level(
    node_count: usize,
    collapsible_edges: &[[usize; 2]],
    grouping: &LevelGrouping,
) -> (Vec<usize>, usize) {
    let hashes = init_hashes_grouped(node_count, collapsible_edges, grouping);
    let prop = propagate_grouped(&hashes, grouping);

    // Exclusive prefix sum over per-group counts yields global coarse bases.
    let mut offsets = Vec::with_capacity(prop.group_counts.len());
    let mut running = 0usize;
    for &c in &prop.group_counts {
        offsets.push(running);
        running += c;
    }
    let map = (0..node_count)
        .map(|v| offsets[grouping.group_of[v]] + prop.local_order[v])
        .collect();
    (map, running)
}

/// Aggregate fine vertices into the connected components of the tag-1
/// subgraph by recursive group hashing. Each recursion level rebuilds the
/// grouping from the coarse collapsible graph; the loop ends when no
/// collapsible edge crosses two aggregates (or, for degenerate group size 1,
/// when a pass stops making progress).
pub fn build_map(tags: &EdgeTags, ordering: &NodeOrdering, mesh: &Mesh) -> FineToCoarseMap {
    let n = mesh.vertex_count();
    let mut composite: Vec<usize> = (0..n).collect();
    let mut edges: Vec<[usize; 2]> = mesh
        .edges
        .iter()
        .zip(&tags.tags)
        .filter(|(_, &t)| t == 1)
        .map(|(e, _)| *e)
        .collect();
    let mut node_count = n;
    let mut grouping = LevelGrouping::from_ordering(ordering);
    let mut levels = 0usize;

    loop {
        let (level_map, new_count) = aggregate_level(node_count, &edges, &grouping);
        levels += 1;
        for m in composite.iter_mut() {
            *m = level_map[*m];
        }

        // Coarse graph: an edge wherever a collapsible edge crosses aggregates.
        let mut coarse_edges: Vec<[usize; 2]> = edges
            .iter()
            .filter_map(|&[a, b]| {
                let (ca, cb) = (level_map[a], level_map[b]);
                match ca.cmp(&cb) {
                    std::cmp::Ordering::Less => Some([ca, cb]),
                    std::cmp::Ordering::Greater => Some([cb, ca]),
                    std::cmp::Ordering::Equal => None,
                }
            })
            .collect();
        coarse_edges.sort_unstable();
        coarse_edges.dedup();

        let stalled = new_count >= node_count;
        node_count = new_count;
        if new_count <= 1 || coarse_edges.is_empty() {
            break;
        }
        // A component-aligned pass with group size >= 2 always merges
        // something while cross-aggregate edges remain; a stalled pass here
        // means group size 1, which cannot aggregate at all.
        if stalled && grouping.component_aligned {
            debug_assert_eq!(ordering.group_size, 1);
            break;
        }
        edges = coarse_edges;
        grouping = LevelGrouping::component_aligned(node_count, &edges, ordering.group_size);
    }

    // Canonical labels by first occurrence in fine-vertex order. This keeps
    // the map independent of the ordering permutation, so all-protected tags
    // give exactly the identity map (and the all-protected pipeline is
    // bit-identical to a direct fine solve).
    let mut remap = vec![usize::MAX; node_count];
    let mut next = 0usize;
    for m in composite.iter_mut() {
        if remap[*m] == usize::MAX {
            remap[*m] = next;
            next += 1;
        }
        *m = remap[*m];
    }

    let mut aggregate_size = vec![0usize; node_count];
    for &c in &composite {
        aggregate_size[c] += 1;
    }
    FineToCoarseMap {
        map: composite,
        coarse_count: node_count,
        aggregate_size,
        levels,
    }
}

/// Classify coarse nodes by aggregate size and reorder so 3-DoF nodes precede
/// 12-DoF nodes (stable within each class). Returns the recomposed
/// fine-to-coarse map alongside the classification.
pub fn classify_dof(
    map: &FineToCoarseMap,
    affine_threshold: usize,
) -> (FineToCoarseMap, DofClassification) {
    let c = map.coarse_count;
    let is12: Vec<bool> = map
        .aggregate_size
        .iter()
        .map(|&s| s > affine_threshold)
        .collect();

    // Stable sort by (class, original index): reorder keys are `old` for
    // 3-DoF and `old + coarse_count` for 12-DoF.
    let mut indices: Vec<usize> = (0..c).collect();
    indices.sort_by_key(|&old| if is12[old] { old + c } else { old });

    let mut reorder = vec![0usize; c];
    for (new, &old) in indices.iter().enumerate() {
        reorder[old] = new;
    }
    let n3 = is12.iter().filter(|&&b| !b).count();
    let n12 = c - n3;
    let dof = (0..c).map(|new| if new < n3 { 3 } else { 12 }).collect();

    let new_map = FineToCoarseMap {
        map: map.map.iter().map(|&old| reorder[old]).collect(),
        coarse_count: c,
        aggregate_size: indices.iter().map(|&old| map.aggregate_size[old]).collect(),
        levels: map.levels,
    };
    (
        new_map,
        DofClassification {
            dof,
            n3,
            n12,
            reorder,
            affine_threshold,
        },
    )
}

/// Debug dump: one `vertex_id,coarse_id,dof` row per fine vertex.
pub fn write_map_csv<W: std::io::Write>(
    mut w: W,
    map: &FineToCoarseMap,
    classification: &DofClassification,
) -> std::io::Result<()> {
    writeln!(w, "vertex_id,coarse_id,dof")?;
    for (v, &c) in map.map.iter().enumerate() {
        writeln!(w, "{v},{c},{}", classification.dof[c])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::MaterialParams;
    use crate::mesh::{gen, order_and_group, Element, Mesh, NodeOrdering};
    use crate::oracle;
    use rand::{rngs::StdRng, RngExt, SeedableRng};

    fn material() -> MaterialParams {
        MaterialParams {
            youngs_modulus: 1.0,
            poisson_ratio: 0.3,
            density: 1.0,
        }
    }

    fn edge_mesh(n: usize, edges: &[[usize; 2]]) -> Mesh {
        let positions = (0..n)
            .map(|i| Vec3::new(i as f64, (i % 3) as f64 * 0.1, 0.0))
            .collect();
        let elements = edges.iter().map(|&e| Element::Edge(e)).collect();
        Mesh::build(positions, elements, &material()).unwrap()
    }

    fn identity_ordering(n: usize, group_size: usize) -> NodeOrdering {
        NodeOrdering {
            perm: (0..n).collect(),
            inv_perm: (0..n).collect(),
            group_size,
            group_count: n.div_ceil(group_size),
        }
    }

    use crate::math::Vec3;

    #[test]
    fn tag_edges_all_zero_increments() {
        let mesh = edge_mesh(4, &[[0, 1], [1, 2], [2, 3]]);
        let tags = tag_edges(&[0.0; 3], 5e-5, &mesh);
        assert_eq!(tags.tags, vec![1, 1, 1]);
    }

    #[test]
    fn tag_edges_protects_exactly_exceeding_element() {
        // Two disjoint triangles; only the first exceeds the threshold.
        let positions = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(5.0, 0.0, 0.0),
            Vec3::new(6.0, 0.0, 0.0),
            Vec3::new(5.0, 1.0, 0.0),
        ];
        let mesh = Mesh::build(
            positions,
            vec![Element::Triangle([0, 1, 2]), Element::Triangle([3, 4, 5])],
            &material(),
        )
        .unwrap();
        let tags = tag_edges(&[1e-4, 0.0], 5e-5, &mesh);
        for (edge, tag) in mesh.edges.iter().zip(&tags.tags) {
            let belongs_first = edge.iter().all(|&v| v < 3);
            assert_eq!(*tag, if belongs_first { 0 } else { 1 });
        }
    }

    #[test]
    fn tag_edges_strict_threshold_semantics() {
        let mesh = edge_mesh(3, &[[0, 1], [1, 2]]);
        // Nonzero increments with threshold 0: everything protected.
        let tags = tag_edges(&[1e-9, 1e-9], 0.0, &mesh);
        assert_eq!(tags.tags, vec![0, 0]);
        // Increments equal to the threshold stay collapsible.
        let tags = tag_edges(&[5e-5, 5e-5], 5e-5, &mesh);
        assert_eq!(tags.tags, vec![1, 1]);
    }

    #[test]
    fn init_hashes_all_protected_group() {
        let mesh = edge_mesh(3, &[[0, 1], [1, 2]]);
        let ordering = identity_ordering(3, 3);
        let hashes = init_hashes(&EdgeTags::all_protected(2), &ordering, &mesh);
        assert_eq!(hashes, vec![0b001, 0b010, 0b100]);
    }

    #[test]
    fn init_hashes_mutually_connected_group() {
        let mesh = edge_mesh(3, &[[0, 1], [1, 2], [0, 2]]);
        let ordering = identity_ordering(3, 3);
        let hashes = init_hashes(&EdgeTags::all_collapsible(3), &ordering, &mesh);
        assert_eq!(hashes, vec![0b111, 0b111, 0b111]);
    }

    #[test]
    fn init_hashes_isolated_vertex_self_bit() {
        let mesh = edge_mesh(3, &[[0, 1]]);
        let ordering = identity_ordering(3, 3);
        let hashes = init_hashes(&EdgeTags::all_collapsible(1), &ordering, &mesh);
        assert_eq!(hashes[2], 0b100);
    }

    #[test]
    fn propagate_indirect_connectivity_converges() {
        // Indirect connectivity: initial hashes {0111, 1111, 0111, 1010} in a
        // group of four converge to 1111 everywhere.
        let ordering = identity_ordering(4, 4);
        let result = propagate_hashes(&[0b0111, 0b1111, 0b0111, 0b1010], &ordering);
        assert_eq!(result.hashes, vec![0b1111; 4]);
        assert_eq!(result.group_counts, vec![1]);
        assert_eq!(result.local_order, vec![0; 4]);
    }

    #[test]
    fn propagate_orthogonal_hashes_untouched() {
        let ordering = identity_ordering(3, 3);
        let result = propagate_hashes(&[0b001, 0b010, 0b100], &ordering);
        assert_eq!(result.hashes, vec![0b001, 0b010, 0b100]);
        assert_eq!(result.local_order, vec![0, 1, 2]);
        assert_eq!(result.group_counts, vec![3]);
    }

    #[test]
    fn propagate_single_node_group() {
        let ordering = identity_ordering(1, 4);
        let result = propagate_hashes(&[0b1], &ordering);
        assert_eq!(result.group_counts, vec![1]);
        assert_eq!(result.local_order, vec![0]);
    }

    #[test]
    fn build_map_constant_on_connected_collapsible_mesh() {
        let mesh = edge_mesh(6, &[[0, 1], [1, 2], [2, 3], [3, 4], [4, 5]]);
        let ordering = order_and_group(&mesh, 3).unwrap();
        let map = build_map(&EdgeTags::all_collapsible(5), &ordering, &mesh);
        assert_eq!(map.map, vec![0; 6]);
        assert_eq!(map.coarse_count, 1);
        assert_eq!(map.aggregate_size, vec![6]);
    }

    #[test]
    fn build_map_identity_when_all_protected() {
        let mesh = edge_mesh(5, &[[0, 1], [1, 2], [2, 3], [3, 4]]);
        let ordering = order_and_group(&mesh, 3).unwrap();
        let map = build_map(&EdgeTags::all_protected(4), &ordering, &mesh);
        assert_eq!(map.map, (0..5).collect::<Vec<_>>());
        assert_eq!(map.coarse_count, 5);
        assert_eq!(map.levels, 1);
    }

    #[test]
    fn build_map_two_components_aligned_with_groups() {
        let mesh = edge_mesh(6, &[[0, 1], [1, 2], [3, 4], [4, 5]]);
        let ordering = order_and_group(&mesh, 3).unwrap();
        let map = build_map(&EdgeTags::all_collapsible(4), &ordering, &mesh);
        assert_eq!(map.map, vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(map.coarse_count, 2);
    }

    #[test]
    fn build_map_global_indices_offset_by_prefix_sum() {
        // First group {0,1,2} mutually collapsible, second group {3,4,5} fully
        // protected: global coarse indices become {0,0,0,1,2,3}.
        let mesh = edge_mesh(6, &[[0, 1], [1, 2], [0, 2], [2, 3], [3, 4], [4, 5]]);
        let ordering = identity_ordering(6, 3);
        let mut tags = EdgeTags::all_collapsible(mesh.edges.len());
        for (ei, edge) in mesh.edges.iter().enumerate() {
            if edge.iter().any(|&v| v >= 3) {
                tags.tags[ei] = 0;
            }
        }
        let map = build_map(&tags, &ordering, &mesh);
        assert_eq!(map.map, vec![0, 0, 0, 1, 2, 3]);
        assert_eq!(map.coarse_count, 4);
    }

    #[test]
    fn build_map_matches_union_find_on_random_instances() {
        let mut rng = StdRng::seed_from_u64(42);
        for trial in 0..100 {
            let n = rng.random_range(2..60);
            let mut edges: Vec<[usize; 2]> = (1..n).map(|v| [rng.random_range(0..v), v]).collect();
            for _ in 0..rng.random_range(0..2 * n) {
                let a = rng.random_range(0..n);
                let b = rng.random_range(0..n);
                if a != b {
                    edges.push([a.min(b), a.max(b)]);
                }
            }
            edges.sort_unstable();
            edges.dedup();
            let mesh = edge_mesh(n, &edges);
            let tags = EdgeTags {
                tags: (0..mesh.edges.len())
                    .map(|_| u8::from(rng.random::<f64>() < 0.6))
                    .collect(),
            };
            let gs = rng.random_range(2..=32);
            let ordering = order_and_group(&mesh, gs).unwrap();
            let map = build_map(&tags, &ordering, &mesh);
            let reference = oracle::union_find_components(&tags, &mesh);
            assert!(
                oracle::partitions_equal(&map.map, &reference),
                "trial {trial}: partition mismatch (n={n}, gs={gs})"
            );
            assert_eq!(map.aggregate_size.iter().sum::<usize>(), n);
            assert!(map.map.iter().all(|&c| c < map.coarse_count));
        }
    }

    #[test]
    fn protecting_more_edges_never_decreases_count() {
        let mut rng = StdRng::seed_from_u64(7);
        let (positions, elements) = gen::cloth_grid(5, 5, 1.0);
        let mesh = Mesh::build(positions, elements, &material()).unwrap();
        let ordering = order_and_group(&mesh, 4).unwrap();
        for _ in 0..20 {
            let mut tags = EdgeTags {
                tags: (0..mesh.edges.len())
                    .map(|_| u8::from(rng.random::<f64>() < 0.7))
                    .collect(),
            };
            let before = build_map(&tags, &ordering, &mesh).coarse_count;
            // Protect a few more edges.
            for _ in 0..5 {
                let e = rng.random_range(0..tags.tags.len());
                tags.tags[e] = 0;
            }
            let after = build_map(&tags, &ordering, &mesh).coarse_count;
            assert!(after >= before);
        }
    }

    #[test]
    fn recursion_depth_logarithmic_on_paths_and_grids() {
        for (n, gs) in [(200usize, 32usize), (100, 8), (64, 4)] {
            let edges: Vec<[usize; 2]> = (0..n - 1).map(|i| [i, i + 1]).collect();
            let mesh = edge_mesh(n, &edges);
            let ordering = order_and_group(&mesh, gs).unwrap();
            let map = build_map(&EdgeTags::all_collapsible(edges.len()), &ordering, &mesh);
            assert_eq!(map.coarse_count, 1);
            let bound = (n as f64).log(gs as f64).ceil() as usize + 1;
            assert!(
                map.levels <= bound,
                "levels {} > bound {bound} (n={n}, gs={gs})",
                map.levels
            );
        }
        let (positions, elements) = gen::cloth_grid(10, 10, 1.0);
        let mesh = Mesh::build(positions, elements, &material()).unwrap();
        let ordering = order_and_group(&mesh, 16).unwrap();
        let map = build_map(
            &EdgeTags::all_collapsible(mesh.edges.len()),
            &ordering,
            &mesh,
        );
        assert_eq!(map.coarse_count, 1);
        assert!(map.levels <= (100.0_f64).log(16.0).ceil() as usize + 1);

        let (positions, elements) = gen::tet_grid(5, 5, 5, 1.0);
        let mesh = Mesh::build(positions, elements, &material()).unwrap();
        let ordering = order_and_group(&mesh, 32).unwrap();
        let map = build_map(
            &EdgeTags::all_collapsible(mesh.edges.len()),
            &ordering,
            &mesh,
        );
        assert_eq!(map.coarse_count, 1);
        assert!(map.levels <= (125.0_f64).log(32.0).ceil() as usize + 1);
    }

    #[test]
    fn map_csv_dump_format() {
        let map = FineToCoarseMap {
            map: vec![0, 1, 1],
            coarse_count: 2,
            aggregate_size: vec![1, 2],
            levels: 1,
        };
        let (map, class) = classify_dof(&map, 1);
        let mut buf = Vec::new();
        write_map_csv(&mut buf, &map, &class).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "vertex_id,coarse_id,dof");
        assert_eq!(lines[1], "0,0,3");
        assert_eq!(lines[2], "1,1,12");
        assert_eq!(lines[3], "2,1,12");
    }

    #[test]
    fn fully_protected_vertex_stays_alone() {
        let mut rng = StdRng::seed_from_u64(13);
        let (positions, elements) = gen::cloth_grid(4, 4, 1.0);
        let mesh = Mesh::build(positions, elements, &material()).unwrap();
        let ordering = order_and_group(&mesh, 8).unwrap();
        let mut tags = EdgeTags {
            tags: (0..mesh.edges.len())
                .map(|_| u8::from(rng.random::<f64>() < 0.8))
                .collect(),
        };
        let isolated = 5usize;
        for &e in &mesh.vertex_to_edges[isolated] {
            tags.tags[e] = 0;
        }
        let map = build_map(&tags, &ordering, &mesh);
        assert_eq!(map.aggregate_size[map.map[isolated]], 1);
    }

    #[test]
    fn deterministic_across_runs() {
        let (positions, elements) = gen::tet_grid(3, 3, 3, 1.0);
        let mesh = Mesh::build(positions, elements, &material()).unwrap();
        let ordering = order_and_group(&mesh, 8).unwrap();
        let mut rng = StdRng::seed_from_u64(3);
        let tags = EdgeTags {
            tags: (0..mesh.edges.len())
                .map(|_| u8::from(rng.random::<f64>() < 0.5))
                .collect(),
        };
        let a = build_map(&tags, &ordering, &mesh);
        let b = build_map(&tags, &ordering, &mesh);
        assert_eq!(a.map, b.map);
        assert_eq!(a.levels, b.levels);
    }

    #[test]
    fn deterministic_across_worker_counts() {
        let (positions, elements) = gen::tet_grid(4, 4, 4, 1.0);
        let mesh = Mesh::build(positions, elements, &material()).unwrap();
        let ordering = order_and_group(&mesh, 8).unwrap();
        let mut rng = StdRng::seed_from_u64(21);
        let tags = EdgeTags {
            tags: (0..mesh.edges.len())
                .map(|_| u8::from(rng.random::<f64>() < 0.5))
                .collect(),
        };
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| build_map(&tags, &ordering, &mesh))
        };
        let serial = run(1);
        for threads in [2, 5, 8] {
            let parallel = run(threads);
            assert_eq!(serial.map, parallel.map, "{threads} workers diverged");
            assert_eq!(serial.levels, parallel.levels);
        }
    }

    #[test]
    fn classify_all_singletons_identity() {
        let map = FineToCoarseMap::identity(5);
        let (new_map, class) = classify_dof(&map, 32);
        assert_eq!(class.n3, 5);
        assert_eq!(class.n12, 0);
        assert_eq!(class.reorder, vec![0, 1, 2, 3, 4]);
        assert_eq!(new_map.map, map.map);
        assert_eq!(class.coarse_dof(), 15);
    }

    #[test]
    fn classify_large_aggregate_becomes_affine() {
        let map = FineToCoarseMap {
            map: vec![0; 40],
            coarse_count: 1,
            aggregate_size: vec![40],
            levels: 1,
        };
        let (_, class) = classify_dof(&map, 32);
        assert_eq!((class.n3, class.n12), (0, 1));
        assert_eq!(class.coarse_dof(), 12);
    }

    #[test]
    fn classify_reorders_mixed_sizes_stably() {
        // Aggregates of sizes [40, 1, 50] with threshold 32: 3-DoF node (the
        // singleton) first, then the two affine nodes in original order.
        let mut map_vec = Vec::new();
        map_vec.extend(std::iter::repeat_n(0, 40));
        map_vec.push(1);
        map_vec.extend(std::iter::repeat_n(2, 50));
        let map = FineToCoarseMap {
            map: map_vec,
            coarse_count: 3,
            aggregate_size: vec![40, 1, 50],
            levels: 1,
        };
        let (new_map, class) = classify_dof(&map, 32);
        assert_eq!((class.n3, class.n12), (1, 2));
        assert_eq!(class.coarse_dof(), 27);
        assert_eq!(class.reorder, vec![1, 0, 2]);
        assert_eq!(new_map.aggregate_size, vec![1, 40, 50]);
        assert_eq!(new_map.map[40], 0);
        assert_eq!(new_map.map[0], 1);
        assert_eq!(new_map.map[41], 2);
        assert_eq!(class.dof, vec![3, 12, 12]);
    }

    #[test]
    fn active_ratio_examples() {
        let (_, class) = classify_dof(&FineToCoarseMap::identity(7), 32);
        assert_eq!(active_ratio(&class, 7), 1.0);

        let map = FineToCoarseMap {
            map: vec![0; 100],
            coarse_count: 1,
            aggregate_size: vec![100],
            levels: 1,
        };
        let (_, class) = classify_dof(&map, 32);
        assert_eq!(active_ratio(&class, 100), 0.04);
    }

    #[test]
    fn active_ratio_reported_statistics_row() {
        // 14675 3-DoF and 113 12-DoF nodes over 218568 fine DoF.
        let class = DofClassification {
            dof: vec![],
            n3: 14675,
            n12: 113,
            reorder: vec![],
            affine_threshold: 32,
        };
        assert_eq!(class.coarse_dof(), 45381);
        let ratio = class.coarse_dof() as f64 / 218568.0;
        assert!(
            (ratio - 0.21).abs() < 0.005,
            "ratio {ratio} should round to 0.21"
        );
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        /// Arbitrary small graph: vertex count plus tagged edges.
        fn graph_strategy() -> impl Strategy<Value = (usize, Vec<([usize; 2], u8)>, usize)> {
            (2usize..40).prop_flat_map(|n| {
                let edges = proptest::collection::vec(((0..n), (0..n), 0u8..2), 0..(3 * n));
                (Just(n), edges, 2usize..=32).prop_map(|(n, raw, gs)| {
                    let mut edges: Vec<([usize; 2], u8)> = raw
                        .into_iter()
                        .filter(|&(a, b, _)| a != b)
                        .map(|(a, b, t)| ([a.min(b), a.max(b)], t))
                        .collect();
                    edges.sort_unstable();
                    edges.dedup_by_key(|(e, _)| *e);
                    (n, edges, gs)
                })
            })
        }

        proptest! {
            /// The hash aggregation always lands on the connected components
            /// of the tag-1 subgraph, for any graph, tags, and group size.
            #[test]
            fn aggregation_equals_union_find((n, tagged, gs) in graph_strategy()) {
                let positions = (0..n)
                    .map(|i| Vec3::new(i as f64, (i % 7) as f64 * 0.21, 0.0))
                    .collect();
                let elements = tagged.iter().map(|&(e, _)| Element::Edge(e)).collect();
                let mesh = Mesh::build(positions, elements, &material()).unwrap();
                let tags = EdgeTags {
                    tags: mesh
                        .edges
                        .iter()
                        .map(|e| tagged.iter().find(|(p, _)| p == e).unwrap().1)
                        .collect(),
                };
                let ordering = order_and_group(&mesh, gs).unwrap();
                let map = build_map(&tags, &ordering, &mesh);
                let reference = oracle::union_find_components(&tags, &mesh);
                prop_assert!(oracle::partitions_equal(&map.map, &reference));
                prop_assert_eq!(map.aggregate_size.iter().sum::<usize>(), n);
            }
        }
    }
}
