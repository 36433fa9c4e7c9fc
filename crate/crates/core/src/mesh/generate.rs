//! Built-in surface generators.

use std::collections::HashMap;
use std::f64::consts::PI;

use super::{MeshError, TriangleMesh};

/// Result of one barycentric subdivision step.
///
/// Old vertices keep their indices. The midpoint of old edge `e` becomes
/// vertex `V + e` and the centroid of old triangle `t` becomes `V + E + t`.
/// Old triangle `t` is replaced by new triangles `6t..6t+6`.
#[derive(Clone, Debug)]
pub struct Subdivision {
    pub mesh: TriangleMesh,
    pub old_vertex_count: usize,
    pub old_edge_count: usize,
}

#[derive(Clone, Copy, Debug)]
enum Site {
    Corner(usize),
    Mid(usize, usize),
    Center,
}

/// Corner sites of the six children of triangle `(a, b, c)`, in order.
const CHILDREN: [[Site; 3]; 6] = {
    use Site::*;
    [
        [Corner(0), Mid(0, 1), Center],
        [Mid(0, 1), Corner(1), Center],
        [Corner(1), Mid(1, 2), Center],
        [Mid(1, 2), Corner(2), Center],
        [Corner(2), Mid(2, 0), Center],
        [Mid(2, 0), Corner(0), Center],
    ]
};

pub fn barycentric_subdivision(mesh: &TriangleMesh) -> Subdivision {
    let v = mesh.vertex_count();
    let e = mesh.edge_count();
    let mut triangles = Vec::with_capacity(6 * mesh.triangle_count());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let opp = mesh.triangle_edges()[t];
        let site_vertex = |s: Site| match s {
            Site::Corner(k) => tri[k],
            // The edge through corners k1, k2 is opposite the third corner.
            Site::Mid(k1, k2) => v + opp[3 - k1 - k2],
            Site::Center => v + e + t,
        };
        for child in CHILDREN {
            triangles.push(child.map(site_vertex));
        }
    }
    let mesh = TriangleMesh::new(v + e + mesh.triangle_count(), triangles)
        .expect("subdivision of a valid surface is valid");
    Subdivision { mesh, old_vertex_count: v, old_edge_count: e }
}

type Lift = [f64; 3];

fn mink(p: &Lift, q: &Lift) -> f64 {
    p[0] * q[0] - p[1] * q[1] - p[2] * q[2]
}

fn onto_hyperboloid(p: Lift) -> Lift {
    let s = mink(&p, &p).sqrt();
    [p[0] / s, p[1] / s, p[2] / s]
}

/// Hyperbolic distance, `2 asinh(|p - q| / 2)` with the Minkowski norm of the
/// (spacelike) chord, which stays accurate for nearby points.
fn hyp_distance(p: &Lift, q: &Lift) -> f64 {
    let d = [p[0] - q[0], p[1] - q[1], p[2] - q[2]];
    let chord2 = (d[1] * d[1] + d[2] * d[2] - d[0] * d[0]).max(0.0);
    2.0 * (0.5 * chord2.sqrt()).asinh()
}

/// Point a fraction `s` of the way along the geodesic from `p` to `q`.
fn hyp_lerp(p: &Lift, q: &Lift, s: f64) -> Lift {
    let d = hyp_distance(p, q);
    if d == 0.0 {
        return *p;
    }
    let (a, b) = (((1.0 - s) * d).sinh() / d.sinh(), (s * d).sinh() / d.sinh());
    [a * p[0] + b * q[0], a * p[1] + b * q[1], a * p[2] + b * q[2]]
}

fn hyp_site(lift: &[Lift; 3], site: Site) -> Lift {
    match site {
        Site::Corner(k) => lift[k],
        Site::Mid(a, b) => {
            onto_hyperboloid([0, 1, 2].map(|i| lift[a][i] + lift[b][i]))
        }
        Site::Center => {
            onto_hyperboloid([0, 1, 2].map(|i| lift[0][i] + lift[1][i] + lift[2][i]))
        }
    }
}

/// Genus-2 surface built from the regular hyperbolic octagon with interior
/// angles `pi/4`, triangulated and then barycentrically subdivided `level`
/// times. Edge lengths are hyperbolic geodesic distances, so the total area
/// is close to `4 pi` and the scalar curvature close to `-2`.
///
/// Level 0 has 18 vertices: the octagon center, an inner ring of 8 points,
/// the single corner class, and 8 classes of side points (each side is cut in
/// thirds). Sides are glued in the pattern `a b a^-1 b^-1 c d c^-1 d^-1`.
/// Every corner of the octagon is cut off by one triangle, capping vertex
/// degree at 8. After each subdivision the vertex positions are relaxed
/// intrinsically.
pub fn genus2_octagon(level: u32) -> (TriangleMesh, Vec<f64>) {
    let (mesh, lifts) = octagon_lifted(level);
    let lengths = (0..mesh.edge_count())
        .map(|e| lifted_edge_length(&mesh, &lifts, e, 0))
        .collect();
    (mesh, lengths)
}

/// Length of edge `e` measured in the lift of its `side`-th incident triangle.
fn lifted_edge_length(mesh: &TriangleMesh, lifts: &[[Lift; 3]], e: usize, side: usize) -> f64 {
    let edge = mesh.edges()[e];
    let t = edge.triangles[side];
    let tri = mesh.triangles()[t];
    let pos = |v: usize| tri.iter().position(|&w| w == v).expect("vertex in triangle");
    hyp_distance(&lifts[t][pos(edge.vertices[0])], &lifts[t][pos(edge.vertices[1])])
}

fn octagon_lifted(level: u32) -> (TriangleMesh, Vec<[Lift; 3]>) {
    let cosh_radius = 3.0 + 2.0 * 2f64.sqrt();
    let sinh_radius = (cosh_radius * cosh_radius - 1.0).sqrt();
    let corners: Vec<Lift> = (0..8)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / 8.0;
            [cosh_radius, sinh_radius * a.cos(), sinh_radius * a.sin()]
        })
        .collect();
    let boundary: Vec<Lift> = (0..24)
        .map(|j| {
            let (k, f) = (j / 3, j % 3);
            hyp_lerp(&corners[k], &corners[(k + 1) % 8], f as f64 / 3.0)
        })
        .collect();
    let center: Lift = [1.0, 0.0, 0.0];
    let ring: Vec<Lift> = (0..8)
        .map(|k| {
            let side_mid = hyp_lerp(&corners[k], &corners[(k + 1) % 8], 0.5);
            hyp_lerp(&center, &side_mid, 0.5)
        })
        .collect();

    const CORNER: usize = 9;
    let partner_pair = [0, 1, 0, 1, 2, 3, 2, 3];
    // Class of the point a fraction f/3 along side k, f in {1, 2}.
    let side_class = |k: usize, f: usize| -> usize {
        let base = 10 + 2 * partner_pair[k];
        // The second side of a pair is glued with reversed orientation.
        if matches!(k, 0 | 1 | 4 | 5) { base + f - 1 } else { base + 2 - f }
    };
    let ring_id = |k: usize| 1 + k % 8;

    let mut triangles = Vec::with_capacity(40);
    let mut lifts = Vec::with_capacity(40);
    for k in 0..8 {
        let kn = (k + 1) % 8;
        let (s1, s2) = (boundary[3 * k + 1], boundary[3 * k + 2]);
        let next_s1 = boundary[3 * kn + 1];
        triangles.push([0, ring_id(k), ring_id(kn)]);
        lifts.push([center, ring[k], ring[kn]]);
        triangles.push([ring_id(k), side_class(k, 1), side_class(k, 2)]);
        lifts.push([ring[k], s1, s2]);
        triangles.push([ring_id(k), side_class(k, 2), ring_id(kn)]);
        lifts.push([ring[k], s2, ring[kn]]);
        triangles.push([ring_id(kn), side_class(k, 2), side_class(kn, 1)]);
        lifts.push([ring[kn], s2, next_s1]);
        triangles.push([side_class(k, 2), CORNER, side_class(kn, 1)]);
        lifts.push([s2, corners[kn], next_s1]);
    }
    let mut mesh = TriangleMesh::new(18, triangles).expect("octagon triangulation is valid");
    smooth_lifts(&mesh, &mut lifts, SMOOTHING_SWEEPS);

    for _ in 0..level {
        let sub = barycentric_subdivision(&mesh);
        let mut next = Vec::with_capacity(6 * lifts.len());
        for lift in &lifts {
            for child in CHILDREN {
                next.push(child.map(|s| hyp_site(lift, s)));
            }
        }
        mesh = sub.mesh;
        lifts = next;
        smooth_lifts(&mesh, &mut lifts, SMOOTHING_SWEEPS);
    }
    (mesh, lifts)
}

const SMOOTHING_SWEEPS: usize = 60;

/// Tangent vector at `p` pointing to `q`, with norm `sinh d(p, q)`.
fn toward(p: &Lift, q: &Lift) -> Lift {
    let c = mink(p, q);
    [q[0] - c * p[0], q[1] - c * p[1], q[2] - c * p[2]]
}

/// Positive-definite inner product on a tangent plane.
fn tdot(a: &Lift, b: &Lift) -> f64 {
    -mink(a, b)
}

fn unit(a: Lift) -> Lift {
    let n = tdot(&a, &a).sqrt();
    a.map(|x| x / n)
}

/// Orthonormal frame at corner `c` of a lifted triangle: `e1` points along the
/// outgoing edge, `e2` into the triangle.
fn corner_frame(lift: &[Lift; 3], c: usize) -> (Lift, Lift) {
    let p = &lift[c];
    let e1 = unit(toward(p, &lift[(c + 1) % 3]));
    let wb = toward(p, &lift[(c + 2) % 3]);
    let g = tdot(&wb, &e1);
    let e2 = unit([0, 1, 2].map(|i| wb[i] - g * e1[i]));
    (e1, e2)
}

/// Intrinsic Laplacian smoothing of vertex positions. Each vertex is moved
/// along the exponential map toward the average of its neighbours, laid out
/// in its own tangent plane; every lifted copy of the vertex receives the same
/// intrinsic displacement, so glued sides stay isometric.
fn smooth_lifts(mesh: &TriangleMesh, lifts: &mut [[Lift; 3]], sweeps: usize) {
    let n = mesh.vertex_count();
    let mut star: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        for c in 0..3 {
            star[tri[c]].push((t, c));
        }
    }
    // Order each star counter-clockwise: (v, a, b) is followed by (v, b, ..).
    for corners in &mut star {
        let mut ordered = Vec::with_capacity(corners.len());
        let mut current = corners[0];
        for _ in 0..corners.len() {
            ordered.push(current);
            let (t, c) = current;
            let b = mesh.triangles()[t][(c + 2) % 3];
            current = *corners
                .iter()
                .find(|&&(s, d)| mesh.triangles()[s][(d + 1) % 3] == b)
                .expect("closed star");
        }
        *corners = ordered;
    }

    let mut layout_angle = vec![[0.0; 3]; lifts.len()];
    let mut displacement = vec![(0.0, 0.0); n];
    for _ in 0..sweeps {
        for (v, corners) in star.iter().enumerate() {
            let (mut phi, mut sx, mut sy) = (0.0f64, 0.0, 0.0);
            for &(t, c) in corners {
                layout_angle[t][c] = phi;
                let lift = &lifts[t];
                let d = hyp_distance(&lift[c], &lift[(c + 1) % 3]);
                sx += d * phi.cos();
                sy += d * phi.sin();
                let wa = toward(&lift[c], &lift[(c + 1) % 3]);
                let wb = toward(&lift[c], &lift[(c + 2) % 3]);
                let cos = tdot(&wa, &wb) / (tdot(&wa, &wa) * tdot(&wb, &wb)).sqrt();
                phi += cos.clamp(-1.0, 1.0).acos();
            }
            let k = 0.5 / corners.len() as f64;
            displacement[v] = (k * sx, k * sy);
        }
        let old = lifts.to_vec();
        for (t, tri) in mesh.triangles().iter().enumerate() {
            for c in 0..3 {
                let (dx, dy) = displacement[tri[c]];
                let m = dx.hypot(dy);
                if m == 0.0 {
                    continue;
                }
                let psi = dy.atan2(dx) - layout_angle[t][c];
                let (e1, e2) = corner_frame(&old[t], c);
                let dir = [0, 1, 2].map(|i| psi.cos() * e1[i] + psi.sin() * e2[i]);
                let p = old[t][c];
                lifts[t][c] = onto_hyperboloid([0, 1, 2].map(|i| m.cosh() * p[i] + m.sinh() * dir[i]));
            }
        }
    }
}

/// Flat torus `[0, width) x [0, height)` on an `nx x ny` grid, each cell cut
/// along its diagonal.
pub fn flat_torus(
    nx: usize,
    ny: usize,
    width: f64,
    height: f64,
) -> Result<(TriangleMesh, Vec<f64>), MeshError> {
    if nx < 3 || ny < 3 {
        return Err(MeshError::InvalidParameter(format!(
            "torus grid needs at least 3x3 cells, got {nx}x{ny}"
        )));
    }
    if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
        return Err(MeshError::InvalidParameter("torus side lengths must be positive".into()));
    }
    let id = |i: usize, j: usize| (j % ny) * nx + (i % nx);
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (v00, v10, v01, v11) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }
    let mesh = TriangleMesh::new(nx * ny, triangles)?;
    let (dx, dy) = (width / nx as f64, height / ny as f64);
    let lengths = mesh
        .edges()
        .iter()
        .map(|e| {
            let [a, b] = e.vertices;
            let step_x = (b % nx + nx - a % nx) % nx != 0;
            let step_y = (b / nx + ny - a / nx) % ny != 0;
            match (step_x, step_y) {
                (true, false) => dx,
                (false, true) => dy,
                _ => dx.hypot(dy),
            }
        })
        .collect();
    Ok((mesh, lengths))
}

/// Unit icosphere: the icosahedron with each triangle split into four
/// `level` times and vertices projected to the sphere. Lengths are chords.
pub fn icosphere(level: u32) -> (TriangleMesh, Vec<f64>) {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut points: Vec<[f64; 3]> = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ]
    .into_iter()
    .map(normalize3)
    .collect();
    let mut triangles: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..level {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, points: &mut Vec<[f64; 3]>| -> usize {
            *midpoint.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let (p, q) = (points[a], points[b]);
                points.push(normalize3([p[0] + q[0], p[1] + q[1], p[2] + q[2]]));
                points.len() - 1
            })
        };
        let mut next = Vec::with_capacity(4 * triangles.len());
        for [a, b, c] in triangles {
            let ab = mid(a, b, &mut points);
            let bc = mid(b, c, &mut points);
            let ca = mid(c, a, &mut points);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        triangles = next;
    }
    let mesh = TriangleMesh::new(points.len(), triangles).expect("icosphere is valid");
    let lengths = mesh
        .edges()
        .iter()
        .map(|e| {
            let [p, q] = e.vertices.map(|v| points[v]);
            ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
        })
        .collect();
    (mesh, lengths)
}

fn normalize3(p: [f64; 3]) -> [f64; 3] {
    let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    [p[0] / n, p[1] / n, p[2] / n]
}

/// Regular tetrahedron with all edges of length `edge`.
pub fn regular_tetrahedron(edge: f64) -> (TriangleMesh, Vec<f64>) {
    let mesh = TriangleMesh::new(4, vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
        .expect("tetrahedron is valid");
    (mesh, vec![edge; 6])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn octagon_counts_by_level() {
        let expected = [(18, 60, 40), (118, 360, 240), (718, 2160, 1440)];
        for (level, &(v, e, f)) in expected.iter().enumerate() {
            let (mesh, lengths) = genus2_octagon(level as u32);
            assert_eq!((mesh.vertex_count(), mesh.edge_count(), mesh.triangle_count()), (v, e, f));
            assert_eq!(mesh.euler_characteristic(), -2);
            assert_eq!(mesh.genus(), 2);
            assert_eq!(lengths.len(), e);
            assert!(lengths.iter().all(|&l| l > 0.0 && l.is_finite()));
        }
    }

    #[test]
    fn octagon_glued_edges_have_consistent_lengths() {
        // Edges on glued sides are seen from two different lifts.
        for level in 0..2 {
            let (mesh, lifts) = octagon_lifted(level);
            for e in 0..mesh.edge_count() {
                let a = lifted_edge_length(&mesh, &lifts, e, 0);
                let b = lifted_edge_length(&mesh, &lifts, e, 1);
                assert!((a - b).abs() < 1e-12 * a.max(1.0), "edge {e}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn octagon_lifts_tile_a_genus_two_surface() {
        // Hyperbolic triangles have area pi minus their angle sum; a
        // genus-2 hyperbolic surface has area 4 pi. Positive determinants
        // mean every lifted triangle keeps its orientation in the Klein model.
        for level in 0..3 {
            let (_, lifts) = octagon_lifted(level);
            let mut area = 0.0;
            for lift in &lifts {
                let mut angle_sum = 0.0;
                for c in 0..3 {
                    let wa = toward(&lift[c], &lift[(c + 1) % 3]);
                    let wb = toward(&lift[c], &lift[(c + 2) % 3]);
                    angle_sum += (tdot(&wa, &wb) / (tdot(&wa, &wa) * tdot(&wb, &wb)).sqrt()).acos();
                }
                area += PI - angle_sum;
                let [p, q, r] = lift;
                let det = p[0] * (q[1] * r[2] - q[2] * r[1]) - p[1] * (q[0] * r[2] - q[2] * r[0])
                    + p[2] * (q[0] * r[1] - q[1] * r[0]);
                assert!(det > 0.0);
            }
            assert!((area - 4.0 * PI).abs() < 1e-9, "level {level}: {area}");
        }
    }

    #[test]
    fn subdivision_keeps_old_vertices() {
        let (mesh, _) = regular_tetrahedron(1.0);
        let sub = barycentric_subdivision(&mesh);
        assert_eq!(sub.mesh.vertex_count(), 4 + 6 + 4);
        assert_eq!(sub.mesh.triangle_count(), 24);
        assert_eq!(sub.mesh.euler_characteristic(), 2);
        for (t, tri) in mesh.triangles().iter().enumerate() {
            assert_eq!(sub.mesh.triangles()[6 * t][0], tri[0]);
            assert_eq!(sub.mesh.triangles()[6 * t][2], 4 + 6 + t);
        }
    }

    #[test]
    fn torus_lengths() {
        let (mesh, lengths) = flat_torus(4, 3, 2.0, 1.5).unwrap();
        assert_eq!(mesh.euler_characteristic(), 0);
        let h = lengths.iter().filter(|&&l| l == 0.5).count();
        let d = lengths.iter().filter(|&&l| (l - 0.5f64.hypot(0.5)).abs() < 1e-15).count();
        assert_eq!(h, 24);
        assert_eq!(d, 12);
        assert!(flat_torus(2, 5, 1.0, 1.0).is_err());
    }

    #[test]
    fn icosphere_counts() {
        let (mesh, lengths) = icosphere(2);
        assert_eq!(mesh.vertex_count(), 162);
        assert_eq!(mesh.euler_characteristic(), 2);
        assert_eq!(lengths.len(), 480);
    }
}
