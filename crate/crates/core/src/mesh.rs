//! Closed oriented triangle meshes.
//!
//! A [`TriangleMesh`] is purely combinatorial: a vertex count and a list of
//! oriented triangles. Construction validates that the triangles form a closed,
//! connected, consistently oriented 2-manifold, and derives the edge list
//! (sorted lexicographically by vertex pair) together with the two triangles
//! incident to every edge. Geometry lives elsewhere and is attached as
//! per-edge lengths.

mod generate;
mod off;

use std::sync::{Arc, OnceLock};

use thiserror::Error;

pub use generate::{
    barycentric_subdivision, flat_torus, genus2_octagon, icosphere, regular_tetrahedron,
    Subdivision,
};
pub use off::load_mesh;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("OFF parse error: {0}")]
    Parse(String),
    #[error("face {face} has {sides} sides; only triangles are accepted")]
    NonTriangleFace { face: usize, sides: usize },
    #[error("mesh has no triangles")]
    Empty,
    #[error("invalid generator parameter: {0}")]
    InvalidParameter(String),
    #[error("triangle {triangle} references vertex {vertex} out of range")]
    IndexOutOfRange { triangle: usize, vertex: usize },
    #[error("triangle {triangle} repeats a vertex")]
    RepeatedVertex { triangle: usize },
    #[error("boundary edge ({a}, {b}): incident to a single triangle")]
    BoundaryEdge { a: usize, b: usize },
    #[error("non-manifold edge ({a}, {b}): incident to {count} triangles")]
    NonManifoldEdge { a: usize, b: usize, count: usize },
    #[error("non-orientable or inconsistently oriented at edge ({a}, {b})")]
    NonOrientable { a: usize, b: usize },
    #[error("non-manifold vertex {vertex}: its link is not a single cycle")]
    NonManifoldVertex { vertex: usize },
    #[error("vertex {vertex} is not used by any triangle")]
    IsolatedVertex { vertex: usize },
    #[error("mesh is disconnected ({components} components)")]
    Disconnected { components: usize },
    #[error("2 - chi = {0} is odd; the mesh is corrupted")]
    OddEulerCharacteristic(i64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An undirected edge `vertices[0] < vertices[1]` and its two incident
/// triangles. `triangles[0]` traverses the edge from `vertices[0]` to
/// `vertices[1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    pub vertices: [usize; 2],
    pub triangles: [usize; 2],
}

/// Symmetric vertex adjacency in CSR form, diagonal included, columns sorted.
///
/// `edge_slots[e]` holds the positions of `(i, j)` and `(j, i)` for edge `e`
/// so that edge-based quantities can be scattered without searching.
#[derive(Debug, PartialEq, Eq)]
pub struct VertexAdjacency {
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub diag_slot: Vec<usize>,
    pub edge_slots: Vec<[usize; 2]>,
}

impl VertexAdjacency {
    pub fn n(&self) -> usize {
        self.diag_slot.len()
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }
}

#[derive(Debug)]
pub struct TriangleMesh {
    vertex_count: usize,
    triangles: Vec<[usize; 3]>,
    edges: Vec<Edge>,
    /// `triangle_edges[t][c]` is the edge opposite corner `c` of triangle `t`.
    triangle_edges: Vec<[usize; 3]>,
    euler_characteristic: i64,
    adjacency: OnceLock<Arc<VertexAdjacency>>,
}

impl Clone for TriangleMesh {
    fn clone(&self) -> Self {
        Self {
            vertex_count: self.vertex_count,
            triangles: self.triangles.clone(),
            edges: self.edges.clone(),
            triangle_edges: self.triangle_edges.clone(),
            euler_characteristic: self.euler_characteristic,
            adjacency: OnceLock::new(),
        }
    }
}

impl PartialEq for TriangleMesh {
    fn eq(&self, other: &Self) -> bool {
        self.vertex_count == other.vertex_count && self.triangles == other.triangles
    }
}

impl TriangleMesh {
    /// Builds and validates a closed oriented surface.
    pub fn new(vertex_count: usize, triangles: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        if triangles.is_empty() || vertex_count == 0 {
            return Err(MeshError::Empty);
        }
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&v) = tri.iter().find(|&&v| v >= vertex_count) {
                return Err(MeshError::IndexOutOfRange { triangle: t, vertex: v });
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(MeshError::RepeatedVertex { triangle: t });
            }
        }

        // (min, max, forward?, triangle)
        let mut half_edges: Vec<(usize, usize, bool, usize)> = Vec::with_capacity(3 * triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            for c in 0..3 {
                let a = tri[(c + 1) % 3];
                let b = tri[(c + 2) % 3];
                half_edges.push((a.min(b), a.max(b), a < b, t));
            }
        }
        half_edges.sort_unstable();

        let mut edges = Vec::with_capacity(half_edges.len() / 2);
        let mut i = 0;
        while i < half_edges.len() {
            let (a, b, _, _) = half_edges[i];
            let mut j = i;
            while j < half_edges.len() && half_edges[j].0 == a && half_edges[j].1 == b {
                j += 1;
            }
            match j - i {
                1 => return Err(MeshError::BoundaryEdge { a, b }),
                2 => {}
                count => return Err(MeshError::NonManifoldEdge { a, b, count }),
            }
            let (first, second) = (half_edges[i], half_edges[i + 1]);
            if first.2 == second.2 {
                return Err(MeshError::NonOrientable { a, b });
            }
            let triangles = if first.2 { [first.3, second.3] } else { [second.3, first.3] };
            edges.push(Edge { vertices: [a, b], triangles });
            i = j;
        }

        let mut triangle_edges = vec![[usize::MAX; 3]; triangles.len()];
        for (e, edge) in edges.iter().enumerate() {
            for &t in &edge.triangles {
                let tri = triangles[t];
                let c = (0..3)
                    .find(|&c| !edge.vertices.contains(&tri[c]))
                    .expect("edge belongs to triangle");
                triangle_edges[t][c] = e;
            }
        }

        let mut used = vec![false; vertex_count];
        triangles.iter().flatten().for_each(|&v| used[v] = true);
        if let Some(vertex) = used.iter().position(|&u| !u) {
            return Err(MeshError::IsolatedVertex { vertex });
        }

        check_vertex_links(vertex_count, &triangles, &edges)?;

        let components = triangle_components(triangles.len(), &edges);
        if components != 1 {
            return Err(MeshError::Disconnected { components });
        }

        let euler_characteristic =
            vertex_count as i64 - edges.len() as i64 + triangles.len() as i64;
        if (2 - euler_characteristic).rem_euclid(2) != 0 {
            return Err(MeshError::OddEulerCharacteristic(2 - euler_characteristic));
        }

        Ok(Self {
            vertex_count,
            triangles,
            edges,
            triangle_edges,
            euler_characteristic,
            adjacency: OnceLock::new(),
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn triangle_edges(&self) -> &[[usize; 3]] {
        &self.triangle_edges
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.euler_characteristic
    }

    pub fn genus(&self) -> i64 {
        (2 - self.euler_characteristic) / 2
    }

    /// Index of the edge joining `a` and `b`, if any.
    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        let key = [a.min(b), a.max(b)];
        self.edges.binary_search_by(|e| e.vertices.cmp(&key)).ok()
    }

    pub fn adjacency(&self) -> Arc<VertexAdjacency> {
        self.adjacency
            .get_or_init(|| Arc::new(build_adjacency(self.vertex_count, &self.edges)))
            .clone()
    }
}

/// Euler characteristic and genus, `chi = V - E + F`, `genus = (2 - chi) / 2`.
pub fn euler_genus(mesh: &TriangleMesh) -> Result<(i64, i64), MeshError> {
    let chi = mesh.vertex_count as i64 - mesh.edges.len() as i64 + mesh.triangles.len() as i64;
    if (2 - chi).rem_euclid(2) != 0 {
        return Err(MeshError::OddEulerCharacteristic(2 - chi));
    }
    Ok((chi, (2 - chi) / 2))
}

fn check_vertex_links(
    vertex_count: usize,
    triangles: &[[usize; 3]],
    edges: &[Edge],
) -> Result<(), MeshError> {
    // Every edge has two triangles, so the link of each vertex is a disjoint
    // union of cycles; it is a single cycle iff the incident triangles are
    // connected through edges containing the vertex.
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); vertex_count];
    for (t, tri) in triangles.iter().enumerate() {
        for &v in tri {
            incident[v].push(t);
        }
    }
    let mut spokes: Vec<Vec<[usize; 2]>> = vec![Vec::new(); vertex_count];
    for e in edges {
        for &v in &e.vertices {
            spokes[v].push(e.triangles);
        }
    }
    for v in 0..vertex_count {
        let local = &incident[v];
        let mut dsu = Dsu::new(local.len());
        for pair in &spokes[v] {
            let a = local.iter().position(|&t| t == pair[0]);
            let b = local.iter().position(|&t| t == pair[1]);
            if let (Some(a), Some(b)) = (a, b) {
                dsu.union(a, b);
            }
        }
        if dsu.components() != 1 {
            return Err(MeshError::NonManifoldVertex { vertex: v });
        }
    }
    Ok(())
}

fn triangle_components(triangle_count: usize, edges: &[Edge]) -> usize {
    let mut dsu = Dsu::new(triangle_count);
    for e in edges {
        dsu.union(e.triangles[0], e.triangles[1]);
    }
    dsu.components()
}

fn build_adjacency(n: usize, edges: &[Edge]) -> VertexAdjacency {
    let mut neighbors: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for e in edges {
        let [a, b] = e.vertices;
        neighbors[a].push(b);
        neighbors[b].push(a);
    }
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(n + 2 * edges.len());
    let mut diag_slot = vec![0; n];
    row_ptr.push(0);
    for (i, row) in neighbors.iter_mut().enumerate() {
        row.sort_unstable();
        diag_slot[i] = col_idx.len() + row.binary_search(&i).expect("diagonal present");
        col_idx.extend_from_slice(row);
        row_ptr.push(col_idx.len());
    }
    let slot = |i: usize, j: usize| -> usize {
        let row = &col_idx[row_ptr[i]..row_ptr[i + 1]];
        row_ptr[i] + row.binary_search(&j).expect("edge present")
    };
    let edge_slots = edges
        .iter()
        .map(|e| {
            let [a, b] = e.vertices;
            [slot(a, b), slot(b, a)]
        })
        .collect();
    VertexAdjacency { row_ptr, col_idx, diag_slot, edge_slots }
}

struct Dsu {
    parent: Vec<usize>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }

    fn components(&mut self) -> usize {
        (0..self.parent.len()).filter(|&i| self.find(i) == i).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tetra_triangles() -> Vec<[usize; 3]> {
        vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]]
    }

    #[test]
    fn tetrahedron_counts() {
        let mesh = TriangleMesh::new(4, tetra_triangles()).unwrap();
        assert_eq!(mesh.edge_count(), 6);
        assert_eq!(euler_genus(&mesh).unwrap(), (2, 0));
        assert_eq!(3 * mesh.triangle_count(), 2 * mesh.edge_count());
    }

    #[test]
    fn edges_are_lexicographic() {
        let mesh = TriangleMesh::new(4, tetra_triangles()).unwrap();
        let pairs: Vec<_> = mesh.edges().iter().map(|e| e.vertices).collect();
        assert_eq!(pairs, vec![[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]]);
        assert_eq!(mesh.edge_index(3, 1), Some(4));
        assert_eq!(mesh.edge_index(0, 0), None);
    }

    #[test]
    fn edge_first_triangle_traverses_forward() {
        let mesh = TriangleMesh::new(4, tetra_triangles()).unwrap();
        for e in mesh.edges() {
            let tri = mesh.triangles()[e.triangles[0]];
            let forward = (0..3).any(|c| tri[c] == e.vertices[0] && tri[(c + 1) % 3] == e.vertices[1]);
            assert!(forward);
        }
    }

    #[test]
    fn triangle_edges_are_opposite_corners() {
        let mesh = TriangleMesh::new(4, tetra_triangles()).unwrap();
        for (t, tri) in mesh.triangles().iter().enumerate() {
            for c in 0..3 {
                let e = mesh.edges()[mesh.triangle_edges()[t][c]];
                assert!(!e.vertices.contains(&tri[c]));
            }
        }
    }

    #[test]
    fn boundary_is_rejected() {
        let err = TriangleMesh::new(4, tetra_triangles()[..3].to_vec()).unwrap_err();
        assert!(matches!(err, MeshError::BoundaryEdge { .. }));
    }

    #[test]
    fn flipped_triangle_is_non_orientable() {
        let mut tris = tetra_triangles();
        tris[3] = [1, 2, 3];
        let err = TriangleMesh::new(4, tris).unwrap_err();
        assert!(matches!(err, MeshError::NonOrientable { .. }));
    }

    #[test]
    fn three_triangles_on_an_edge() {
        let mut tris = tetra_triangles();
        tris.extend([[0, 1, 4], [0, 4, 2], [1, 2, 4]]);
        let err = TriangleMesh::new(5, tris).unwrap_err();
        assert!(matches!(err, MeshError::NonManifoldEdge { a: 0, b: 1, count: 3 }));
    }

    #[test]
    fn two_tetrahedra_are_disconnected() {
        let mut tris = tetra_triangles();
        tris.extend(tetra_triangles().iter().map(|t| [t[0] + 4, t[1] + 4, t[2] + 4]));
        let err = TriangleMesh::new(8, tris).unwrap_err();
        assert!(matches!(err, MeshError::Disconnected { components: 2 }));
    }

    #[test]
    fn pinched_vertex_is_rejected() {
        // Two tetrahedra glued at vertex 0 only.
        let mut tris = tetra_triangles();
        tris.extend(tetra_triangles().iter().map(|t| t.map(|v| if v == 0 { 0 } else { v + 3 })));
        let err = TriangleMesh::new(7, tris).unwrap_err();
        assert!(matches!(err, MeshError::NonManifoldVertex { vertex: 0 }));
    }

    #[test]
    fn isolated_vertex_is_rejected() {
        let err = TriangleMesh::new(5, tetra_triangles()).unwrap_err();
        assert!(matches!(err, MeshError::IsolatedVertex { vertex: 4 }));
    }

    #[test]
    fn adjacency_slots_point_at_neighbors() {
        let mesh = TriangleMesh::new(4, tetra_triangles()).unwrap();
        let adj = mesh.adjacency();
        assert_eq!(adj.nnz(), 4 + 2 * 6);
        for (e, edge) in mesh.edges().iter().enumerate() {
            let [ij, ji] = adj.edge_slots[e];
            assert_eq!(adj.col_idx[ij], edge.vertices[1]);
            assert_eq!(adj.col_idx[ji], edge.vertices[0]);
        }
        for i in 0..4 {
            assert_eq!(adj.col_idx[adj.diag_slot[i]], i);
        }
    }

    #[test]
    fn validation_is_idempotent() {
        let mesh = TriangleMesh::new(4, tetra_triangles()).unwrap();
        let again = TriangleMesh::new(mesh.vertex_count(), mesh.triangles().to_vec()).unwrap();
        assert_eq!(mesh, again);
        assert_eq!(mesh.edges(), again.edges());
        assert_eq!(mesh.triangle_edges(), again.triangle_edges());
    }
}
