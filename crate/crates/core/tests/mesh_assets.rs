use std::fs::File;
use std::path::PathBuf;

use nrf_core::mesh::{euler_genus, genus2_octagon, load_mesh, MeshError};

fn asset(name: &str) -> File {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "data", name].iter().collect();
    File::open(path).unwrap()
}

#[test]
fn tetrahedron_asset() {
    let (mesh, lengths) = load_mesh(asset("tetrahedron.off")).unwrap();
    assert_eq!((mesh.vertex_count(), mesh.edge_count(), mesh.triangle_count()), (4, 6, 4));
    assert_eq!(euler_genus(&mesh).unwrap(), (2, 0));
    for l in lengths {
        assert!((l - 8f64.sqrt()).abs() < 1e-15);
    }
}

#[test]
fn double_torus_asset() {
    let (mesh, lengths) = load_mesh(asset("double_torus.off")).unwrap();
    assert_eq!((mesh.vertex_count(), mesh.edge_count(), mesh.triangle_count()), (48, 150, 100));
    assert_eq!(euler_genus(&mesh).unwrap(), (-2, 2));
    assert!(lengths.iter().all(|&l| l == 1.0 || l == 2f64.sqrt()));
}

#[test]
fn non_manifold_asset_is_rejected() {
    let err = load_mesh(asset("non_manifold.off")).unwrap_err();
    assert!(matches!(err, MeshError::NonManifoldEdge { a: 0, b: 1, count: 4 }), "{err}");
}

#[test]
fn octagon_counts_follow_the_subdivision_recurrence() {
    let (mesh, _) = genus2_octagon(0);
    let (mut v, mut e, mut f) = (mesh.vertex_count(), mesh.edge_count(), mesh.triangle_count());
    assert_eq!(v as i64 - e as i64 + f as i64, -2);
    for level in 1..=3 {
        (v, e, f) = (v + e + f, 2 * e + 6 * f, 6 * f);
        let (mesh, _) = genus2_octagon(level);
        assert_eq!((mesh.vertex_count(), mesh.edge_count(), mesh.triangle_count()), (v, e, f));
        assert_eq!(euler_genus(&mesh).unwrap(), (-2, 2));
    }
    assert_eq!((v, e, f), (4318, 12960, 8640));
}
