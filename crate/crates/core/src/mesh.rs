//! Simulation geometry: element topology, adjacency, lumped masses, and the
//! deterministic node ordering consumed by aggregation.
//!
//! A mesh holds exactly one element kind (edge nets, triangle shells, or
//! tetrahedral volumes). Connectivity is static for the lifetime of a
//! simulation; everything here is computed once at load time and only read
//! afterwards.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Matrix2, Matrix3};

use crate::energy::MaterialParams;
use crate::error::{Error, Result};
use crate::math::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementKind {
    Edge,
    Triangle,
    Tetrahedron,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Element {
    Edge([usize; 2]),
    Triangle([usize; 3]),
    Tetrahedron([usize; 4]),
}

impl Element {
    pub fn kind(&self) -> ElementKind {
        match self {
            Element::Edge(_) => ElementKind::Edge,
            Element::Triangle(_) => ElementKind::Triangle,
            Element::Tetrahedron(_) => ElementKind::Tetrahedron,
        }
    }

    pub fn vertices(&self) -> &[usize] {
        match self {
            Element::Edge(v) => v,
            Element::Triangle(v) => v,
            Element::Tetrahedron(v) => v,
        }
    }

    /// Undirected vertex pairs covering the element's edges.
    pub fn edge_pairs(&self) -> Vec<[usize; 2]> {
        let v = self.vertices();
        match self {
            Element::Edge(_) => vec![[v[0], v[1]]],
            Element::Triangle(_) => vec![[v[0], v[1]], [v[1], v[2]], [v[0], v[2]]],
            Element::Tetrahedron(_) => vec![
                [v[0], v[1]],
                [v[0], v[2]],
                [v[0], v[3]],
                [v[1], v[2]],
                [v[1], v[3]],
                [v[2], v[3]],
            ],
        }
    }
}

/// Precomputed rest-state quantities per element.
#[derive(Clone, Debug)]
pub enum ElementRest {
    Edge { length: f64 },
    Triangle { inv_dm: Matrix2<f64>, area: f64 },
    Tetrahedron { inv_dm: Matrix3<f64>, volume: f64 },
}

impl ElementRest {
    pub fn measure(&self) -> f64 {
        match self {
            ElementRest::Edge { length } => *length,
            ElementRest::Triangle { area, .. } => *area,
            ElementRest::Tetrahedron { volume, .. } => *volume,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Mesh {
    pub rest_positions: Vec<Vec3>,
    pub elements: Vec<Element>,
    /// Unique undirected pairs (a < b), sorted lexicographically.
    pub edges: Vec<[usize; 2]>,
    /// Per edge, ascending indices of incident elements.
    pub edge_to_elements: Vec<Vec<usize>>,
    /// Per vertex, ascending indices of incident edges.
    pub vertex_to_edges: Vec<Vec<usize>>,
    /// Lumped vertex masses (kg), strictly positive.
    pub vertex_mass: Vec<f64>,
    /// Rest matrices and measures per element.
    pub rest: Vec<ElementRest>,
}

impl Mesh {
    /// Validate elements, compute rest data, lump masses, and build adjacency.
    pub fn build(
        rest_positions: Vec<Vec3>,
        elements: Vec<Element>,
        material: &MaterialParams,
    ) -> Result<Mesh> {
        let n = rest_positions.len();
        if let Some(first) = elements.first() {
            let kind = first.kind();
            if elements.iter().any(|e| e.kind() != kind) {
                return Err(Error::MixedElementKinds);
            }
        }
        for (ei, elem) in elements.iter().enumerate() {
            for &v in elem.vertices() {
                if v >= n {
                    return Err(Error::IndexOutOfRange {
                        element: ei,
                        vertex: v,
                        vertex_count: n,
                    });
                }
            }
        }

        let rest = elements
            .iter()
            .enumerate()
            .map(|(ei, elem)| element_rest(ei, elem, &rest_positions))
            .collect::<Result<Vec<_>>>()?;

        let mut vertex_mass = vec![0.0; n];
        for (elem, r) in elements.iter().zip(&rest) {
            let verts = elem.vertices();
            let share = material.density * r.measure() / verts.len() as f64;
            for &v in verts {
                vertex_mass[v] += share;
            }
        }

        let mut mesh = Mesh {
            rest_positions,
            elements,
            edges: Vec::new(),
            edge_to_elements: Vec::new(),
            vertex_to_edges: Vec::new(),
            vertex_mass,
            rest,
        };
        build_adjacency(&mut mesh);
        Ok(mesh)
    }

    /// Variant of [`Mesh::build`] for synthetic test states: vertex masses are
    /// given directly, so meshes with no elements (free particles) are legal.
    pub fn with_vertex_masses(
        rest_positions: Vec<Vec3>,
        elements: Vec<Element>,
        material: &MaterialParams,
        masses: Vec<f64>,
    ) -> Result<Mesh> {
        assert_eq!(rest_positions.len(), masses.len());
        let mut mesh = if elements.is_empty() {
            Mesh {
                rest_positions,
                elements,
                edges: Vec::new(),
                edge_to_elements: Vec::new(),
                vertex_to_edges: Vec::new(),
                vertex_mass: Vec::new(),
                rest: Vec::new(),
            }
        } else {
            Mesh::build(rest_positions, elements, material)?
        };
        mesh.vertex_to_edges
            .resize(mesh.rest_positions.len(), Vec::new());
        mesh.vertex_mass = masses;
        Ok(mesh)
    }

    pub fn vertex_count(&self) -> usize {
        self.rest_positions.len()
    }

    pub fn kind(&self) -> Option<ElementKind> {
        self.elements.first().map(|e| e.kind())
    }

    /// Vertex adjacency via edges, neighbor lists ascending.
    pub fn vertex_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertex_count()];
        for &[a, b] in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for l in &mut adj {
            l.sort_unstable();
            l.dedup();
        }
        adj
    }

    /// Boundary triangles for rendering: the surface of a tet mesh, or the
    /// triangles themselves for shells. Edge nets have no surface triangles.
    pub fn surface_triangles(&self) -> Vec<[usize; 3]> {
        match self.kind() {
            Some(ElementKind::Triangle) => self
                .elements
                .iter()
                .map(|e| match e {
                    Element::Triangle(v) => *v,
                    _ => unreachable!(),
                })
                .collect(),
            Some(ElementKind::Tetrahedron) => {
                let mut count: BTreeMap<[usize; 3], [usize; 3]> = BTreeMap::new();
                let mut seen: BTreeMap<[usize; 3], usize> = BTreeMap::new();
                for elem in &self.elements {
                    let v = elem.vertices();
                    // Outward-facing windings for a positively oriented tet.
                    let faces = [
                        [v[0], v[2], v[1]],
                        [v[0], v[1], v[3]],
                        [v[0], v[3], v[2]],
                        [v[1], v[2], v[3]],
                    ];
                    for f in faces {
                        let mut key = f;
                        key.sort_unstable();
                        *seen.entry(key).or_insert(0) += 1;
                        count.insert(key, f);
                    }
                }
                seen.iter()
                    .filter(|(_, &c)| c == 1)
                    .map(|(k, _)| count[k])
                    .collect()
            }
            _ => Vec::new(),
        }
    }
}

fn element_rest(ei: usize, elem: &Element, pos: &[Vec3]) -> Result<ElementRest> {
    match elem {
        Element::Edge([a, b]) => {
            let length = (pos[*b] - pos[*a]).norm();
            if length <= 0.0 {
                return Err(Error::DegenerateElement {
                    element: ei,
                    msg: format!("non-positive rest length {length:e}"),
                });
            }
            Ok(ElementRest::Edge { length })
        }
        Element::Triangle([a, b, c]) => {
            let e1 = pos[*b] - pos[*a];
            let e2 = pos[*c] - pos[*a];
            let normal = e1.cross(&e2);
            let doubled = normal.norm();
            if doubled <= 0.0 {
                return Err(Error::DegenerateElement {
                    element: ei,
                    msg: format!("non-positive rest area {:e}", doubled * 0.5),
                });
            }
            // Rest edges in an orthonormal tangent basis (u along e1).
            let u = e1 / e1.norm();
            let w = normal.cross(&u) / doubled;
            let dm = Matrix2::new(e1.norm(), e2.dot(&u), 0.0, e2.dot(&w));
            let inv_dm = dm.try_inverse().ok_or(Error::DegenerateElement {
                element: ei,
                msg: "singular rest edge matrix".into(),
            })?;
            Ok(ElementRest::Triangle {
                inv_dm,
                area: doubled * 0.5,
            })
        }
        Element::Tetrahedron([a, b, c, d]) => {
            let dm =
                Matrix3::from_columns(&[pos[*b] - pos[*a], pos[*c] - pos[*a], pos[*d] - pos[*a]]);
            let det = dm.determinant();
            if det <= 0.0 {
                return Err(Error::DegenerateElement {
                    element: ei,
                    msg: format!("non-positive rest volume {:e}", det / 6.0),
                });
            }
            let inv_dm = dm.try_inverse().ok_or(Error::DegenerateElement {
                element: ei,
                msg: "singular rest edge matrix".into(),
            })?;
            Ok(ElementRest::Tetrahedron {
                inv_dm,
                volume: det / 6.0,
            })
        }
    }
}

/// Deduplicate edges (sorted lexicographically) and fill both adjacency maps.
/// [`Mesh::build`] calls this; it only needs to be re-run if elements are
/// edited in place.
pub fn build_adjacency(mesh: &mut Mesh) {
    let mut by_pair: BTreeMap<[usize; 2], Vec<usize>> = BTreeMap::new();
    for (ei, elem) in mesh.elements.iter().enumerate() {
        for [a, b] in elem.edge_pairs() {
            let key = if a < b { [a, b] } else { [b, a] };
            by_pair.entry(key).or_default().push(ei);
        }
    }
    mesh.edges = by_pair.keys().copied().collect();
    mesh.edge_to_elements = by_pair.values().cloned().collect();
    mesh.vertex_to_edges = vec![Vec::new(); mesh.vertex_count()];
    for (idx, &[a, b]) in mesh.edges.iter().enumerate() {
        mesh.vertex_to_edges[a].push(idx);
        mesh.vertex_to_edges[b].push(idx);
    }
}

/// Deterministic vertex ordering and fixed-size grouping for aggregation.
#[derive(Clone, Debug)]
pub struct NodeOrdering {
    /// `perm[p]` = vertex at ordered position `p`.
    pub perm: Vec<usize>,
    /// `inv_perm[v]` = ordered position of vertex `v`.
    pub inv_perm: Vec<usize>,
    pub group_size: usize,
    pub group_count: usize,
}

impl NodeOrdering {
    pub fn node_count(&self) -> usize {
        self.perm.len()
    }

    /// Number of positions actually present in group `g` (the tail group may
    /// be short).
    pub fn group_len(&self, g: usize) -> usize {
        let start = g * self.group_size;
        let end = ((g + 1) * self.group_size).min(self.perm.len());
        end.saturating_sub(start)
    }
}

/// Breadth-first vertex order: components are visited starting from their
/// lowest-index vertex, neighbors in ascending index order. Consecutive
/// ordered vertices therefore tend to share edges, which is what grouping
/// needs.
pub(crate) fn bfs_order(n: usize, adjacency: &[Vec<usize>]) -> Vec<usize> {
    let mut order = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    let mut queue = std::collections::VecDeque::new();
    for start in 0..n {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &w in &adjacency[v] {
                if !visited[w] {
                    visited[w] = true;
                    queue.push_back(w);
                }
            }
        }
    }
    order
}

/// Order vertices breadth-first and partition the ordered positions into
/// groups of `group_size` (1..=32, the hash width).
pub fn order_and_group(mesh: &Mesh, group_size: usize) -> Result<NodeOrdering> {
    ordering_from_adjacency(mesh.vertex_count(), &mesh.vertex_adjacency(), group_size)
}

pub(crate) fn ordering_from_adjacency(
    n: usize,
    adjacency: &[Vec<usize>],
    group_size: usize,
) -> Result<NodeOrdering> {
    if group_size == 0 || group_size > 32 {
        return Err(Error::GroupSizeOutOfRange(group_size));
    }
    let perm = bfs_order(n, adjacency);
    let mut inv_perm = vec![0; n];
    for (p, &v) in perm.iter().enumerate() {
        inv_perm[v] = p;
    }
    Ok(NodeOrdering {
        perm,
        inv_perm,
        group_size,
        group_count: n.div_ceil(group_size),
    })
}

/// Load a mesh from disk. `.tet` files use the ASCII `v x y z` / `t i j k l`
/// format (0-based); `.obj` files use the Wavefront subset with `v`, `f`
/// (triangles only), and `l` records (1-based).
pub fn load_mesh(path: &Path, material: &MaterialParams) -> Result<Mesh> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let (positions, elements) = match ext.as_str() {
        "tet" => parse_tet_ascii(path, &text)?,
        "obj" => parse_obj_subset(path, &text)?,
        other => {
            return Err(Error::Config(format!(
                "unsupported mesh extension `{other}` for `{}` (expected .tet or .obj)",
                path.display()
            )))
        }
    };
    Mesh::build(positions, elements, material)
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_tet_ascii(path: &Path, text: &str) -> Result<(Vec<Vec3>, Vec<Element>)> {
    let mut positions = Vec::new();
    let mut elements = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = ln + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let coords: Vec<f64> = it
                    .map(|t| t.parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| parse_err(path, lineno, format!("bad vertex coordinate: {e}")))?;
                if coords.len() != 3 {
                    return Err(parse_err(path, lineno, "vertex record needs 3 coordinates"));
                }
                positions.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("t") => {
                let idx: Vec<usize> = it
                    .map(|t| t.parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| parse_err(path, lineno, format!("bad tet index: {e}")))?;
                if idx.len() != 4 {
                    return Err(parse_err(path, lineno, "tet record needs 4 indices"));
                }
                elements.push(Element::Tetrahedron([idx[0], idx[1], idx[2], idx[3]]));
            }
            Some(other) => {
                return Err(parse_err(path, lineno, format!("unknown record `{other}`")));
            }
            None => unreachable!(),
        }
    }
    Ok((positions, elements))
}

fn parse_obj_subset(path: &Path, text: &str) -> Result<(Vec<Vec3>, Vec<Element>)> {
    let mut positions = Vec::new();
    let mut elements = Vec::new();
    let parse_index = |tok: &str, lineno: usize, count: usize| -> Result<usize> {
        let vertex_part = tok.split('/').next().unwrap_or(tok);
        let idx: i64 = vertex_part
            .parse()
            .map_err(|e| parse_err(path, lineno, format!("bad index `{tok}`: {e}")))?;
        if idx < 1 || idx as usize > count {
            return Err(parse_err(
                path,
                lineno,
                format!("index {idx} out of range (1..={count})"),
            ));
        }
        Ok(idx as usize - 1)
    };
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = ln + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let coords: Vec<f64> = it
                    .take(3)
                    .map(|t| t.parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| parse_err(path, lineno, format!("bad vertex coordinate: {e}")))?;
                if coords.len() != 3 {
                    return Err(parse_err(path, lineno, "vertex record needs 3 coordinates"));
                }
                positions.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = it
                    .map(|t| parse_index(t, lineno, positions.len()))
                    .collect::<Result<_>>()?;
                if idx.len() != 3 {
                    return Err(parse_err(path, lineno, "only triangle faces are supported"));
                }
                elements.push(Element::Triangle([idx[0], idx[1], idx[2]]));
            }
            Some("l") => {
                let idx: Vec<usize> = it
                    .map(|t| parse_index(t, lineno, positions.len()))
                    .collect::<Result<_>>()?;
                if idx.len() < 2 {
                    return Err(parse_err(
                        path,
                        lineno,
                        "line record needs at least 2 indices",
                    ));
                }
                for pair in idx.windows(2) {
                    elements.push(Element::Edge([pair[0], pair[1]]));
                }
            }
            // Common OBJ records we deliberately ignore.
            Some("vn") | Some("vt") | Some("o") | Some("g") | Some("s") | Some("mtllib")
            | Some("usemtl") => {}
            Some(other) => {
                return Err(parse_err(path, lineno, format!("unknown record `{other}`")));
            }
            None => unreachable!(),
        }
    }
    Ok((positions, elements))
}

/// Procedural meshes used by tests, `verify`, and the scene generator.
pub mod gen {
    use super::{Element, Vec3};
    use nalgebra::Matrix3;

    /// Regular lattice of tetrahedra: `nx*ny*nz` vertices, 6 tets per cell.
    pub fn tet_grid(nx: usize, ny: usize, nz: usize, spacing: f64) -> (Vec<Vec3>, Vec<Element>) {
        assert!(nx >= 2 && ny >= 2 && nz >= 2);
        let id = |i: usize, j: usize, k: usize| (i * ny + j) * nz + k;
        let mut positions = Vec::with_capacity(nx * ny * nz);
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    positions.push(Vec3::new(
                        i as f64 * spacing,
                        j as f64 * spacing,
                        k as f64 * spacing,
                    ));
                }
            }
        }
        let mut elements = Vec::new();
        // Kuhn subdivision: six tets per cell along the main diagonal.
        let paths: [[usize; 3]; 6] = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        for i in 0..nx - 1 {
            for j in 0..ny - 1 {
                for k in 0..nz - 1 {
                    for path in &paths {
                        let mut corner = [0usize; 3];
                        let mut verts = [id(i, j, k); 4];
                        for (step, &axis) in path.iter().enumerate() {
                            corner[axis] = 1;
                            verts[step + 1] = id(i + corner[0], j + corner[1], k + corner[2]);
                        }
                        let mut t = verts;
                        let dm = Matrix3::from_columns(&[
                            positions[t[1]] - positions[t[0]],
                            positions[t[2]] - positions[t[0]],
                            positions[t[3]] - positions[t[0]],
                        ]);
                        if dm.determinant() < 0.0 {
                            t.swap(2, 3);
                        }
                        elements.push(Element::Tetrahedron(t));
                    }
                }
            }
        }
        (positions, elements)
    }

    /// Flat triangle grid in the x-z plane at y = 0.
    pub fn cloth_grid(nx: usize, nz: usize, spacing: f64) -> (Vec<Vec3>, Vec<Element>) {
        assert!(nx >= 2 && nz >= 2);
        let id = |i: usize, k: usize| i * nz + k;
        let mut positions = Vec::with_capacity(nx * nz);
        for i in 0..nx {
            for k in 0..nz {
                positions.push(Vec3::new(i as f64 * spacing, 0.0, k as f64 * spacing));
            }
        }
        let mut elements = Vec::new();
        for i in 0..nx - 1 {
            for k in 0..nz - 1 {
                let (a, b, c, d) = (id(i, k), id(i + 1, k), id(i + 1, k + 1), id(i, k + 1));
                elements.push(Element::Triangle([a, b, c]));
                elements.push(Element::Triangle([a, c, d]));
            }
        }
        (positions, elements)
    }

    /// Straight chain of edge elements along the x axis.
    pub fn rod_line(n: usize, spacing: f64) -> (Vec<Vec3>, Vec<Element>) {
        assert!(n >= 2);
        let positions = (0..n)
            .map(|i| Vec3::new(i as f64 * spacing, 0.0, 0.0))
            .collect();
        let elements = (0..n - 1).map(|i| Element::Edge([i, i + 1])).collect();
        (positions, elements)
    }

    /// Translate all positions by `offset`.
    pub fn translated(positions: Vec<Vec3>, offset: Vec3) -> Vec<Vec3> {
        positions.into_iter().map(|p| p + offset).collect()
    }
}
