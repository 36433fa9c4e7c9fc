use std::io::Read;

use super::{MeshError, TriangleMesh};

/// Reads an ASCII OFF file and returns the validated mesh with the Euclidean
/// length of every edge (in edge order).
///
/// `#` starts a comment. Only triangular faces are accepted.
pub fn load_mesh<R: Read>(mut reader: R) -> Result<(TriangleMesh, Vec<f64>), MeshError> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let mut tokens = text
        .lines()
        .map(|line| line.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace);

    match tokens.next() {
        Some("OFF") => {}
        Some(other) => return Err(MeshError::Parse(format!("expected OFF header, found {other:?}"))),
        None => return Err(MeshError::Parse("empty input".into())),
    }
    let n_vertices = count(&mut tokens, "vertex count")?;
    let n_faces = count(&mut tokens, "face count")?;
    let _n_edges = count(&mut tokens, "edge count")?;

    let mut positions = Vec::with_capacity(n_vertices);
    for v in 0..n_vertices {
        let mut p = [0.0; 3];
        for x in &mut p {
            let tok = tokens
                .next()
                .ok_or_else(|| MeshError::Parse(format!("vertex {v}: missing coordinate")))?;
            *x = tok
                .parse()
                .ok()
                .filter(|x: &f64| x.is_finite())
                .ok_or_else(|| MeshError::Parse(format!("vertex {v}: invalid coordinate {tok:?}")))?;
        }
        positions.push(p);
    }

    let mut triangles = Vec::with_capacity(n_faces);
    for f in 0..n_faces {
        let sides = count(&mut tokens, "face size")?;
        if sides != 3 {
            return Err(MeshError::NonTriangleFace { face: f, sides });
        }
        let mut tri = [0; 3];
        for v in &mut tri {
            *v = count(&mut tokens, "face index")?;
        }
        triangles.push(tri);
    }
    // Trailing per-face colour values are permitted by the format; anything
    // else that is not numeric is treated as corruption.
    if let Some(tok) = tokens.find(|t| t.parse::<f64>().is_err()) {
        return Err(MeshError::Parse(format!("unexpected trailing token {tok:?}")));
    }

    let mesh = TriangleMesh::new(n_vertices, triangles)?;
    let lengths = mesh
        .edges()
        .iter()
        .map(|e| {
            let [a, b] = e.vertices.map(|v| positions[v]);
            ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
        })
        .collect();
    Ok((mesh, lengths))
}

fn count<'a>(tokens: &mut impl Iterator<Item = &'a str>, what: &str) -> Result<usize, MeshError> {
    let tok = tokens
        .next()
        .ok_or_else(|| MeshError::Parse(format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| MeshError::Parse(format!("invalid {what}: {tok:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TETRA: &str = "OFF\n# regular tetrahedron\n4 4 6\n\
        1 1 1\n1 -1 -1\n-1 1 -1\n-1 -1 1\n\
        3 0 1 2\n3 0 3 1\n3 0 2 3\n3 1 3 2\n";

    #[test]
    fn reads_tetrahedron() {
        let (mesh, lengths) = load_mesh(TETRA.as_bytes()).unwrap();
        assert_eq!(mesh.vertex_count(), 4);
        assert_eq!(mesh.edge_count(), 6);
        for l in lengths {
            assert!((l - 8f64.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_quads() {
        let text = TETRA.replace("3 1 3 2", "4 1 3 2 0");
        assert!(matches!(
            load_mesh(text.as_bytes()),
            Err(MeshError::NonTriangleFace { face: 3, sides: 4 })
        ));
    }

    #[test]
    fn rejects_bad_header_and_truncation() {
        assert!(matches!(load_mesh("PLY\n".as_bytes()), Err(MeshError::Parse(_))));
        let truncated = &TETRA[..TETRA.len() - 8];
        assert!(matches!(load_mesh(truncated.as_bytes()), Err(MeshError::Parse(_))));
        let nan = TETRA.replace("1 1 1", "1 nan 1");
        assert!(matches!(load_mesh(nan.as_bytes()), Err(MeshError::Parse(_))));
    }

    #[test]
    fn rejects_open_surface() {
        let open = "OFF\n4 3 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 2\n3 0 3 1\n3 0 2 3\n";
        assert!(matches!(load_mesh(open.as_bytes()), Err(MeshError::BoundaryEdge { .. })));
    }
}
