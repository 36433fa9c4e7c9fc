//! Cotangent Laplacian, lumped mass and the lowest eigenpairs of the pencil
//! `L phi = lambda M phi`.

mod cholesky;
mod lanczos;

use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::geometry::{ConformalMetric, GeometryError, TriangleData};
use crate::mesh::{TriangleMesh, VertexAdjacency};
use cholesky::Symbolic;

#[derive(Debug, Error)]
pub enum SpectrumError {
    #[error("invalid eigenvalue request: {0}")]
    InvalidRequest(String),
    #[error("expected {expected} entries, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("shifted operator is not positive definite (pivot at vertex {vertex})")]
    NotPositiveDefinite { vertex: usize },
    #[error("eigensolver did not converge for {requested} pairs (best residual {best_residual:.3e})")]
    NoConvergence { requested: usize, best_residual: f64 },
    #[error("Rayleigh quotient of a vector with zero mass norm")]
    ZeroVector,
    #[error(transparent)]
    Geometry(#[from] Box<GeometryError>),
}

/// Symmetric matrix on a mesh's vertex-adjacency pattern.
#[derive(Clone, Debug)]
pub struct SymmetricCsr {
    adjacency: Arc<VertexAdjacency>,
    values: Vec<f64>,
}

impl SymmetricCsr {
    pub fn n(&self) -> usize {
        self.adjacency.n()
    }

    pub fn adjacency(&self) -> &Arc<VertexAdjacency> {
        &self.adjacency
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = self.adjacency.row(i);
        row.binary_search(&j)
            .map(|p| self.values[self.adjacency.row_ptr[i] + p])
            .unwrap_or(0.0)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let adj = &*self.adjacency;
        (0..adj.n())
            .map(|i| {
                (adj.row_ptr[i]..adj.row_ptr[i + 1])
                    .map(|s| self.values[s] * x[adj.col_idx[s]])
                    .sum()
            })
            .collect()
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.matvec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let adj = &*self.adjacency;
        DMatrix::from_fn(n, n, |i, j| {
            adj.row(i).binary_search(&j).map(|p| self.values[adj.row_ptr[i] + p]).unwrap_or(0.0)
        })
    }
}

/// Cotangent stiffness `L` and lumped (barycentric) mass diagonal `M`.
#[derive(Clone, Debug)]
pub struct Operators {
    pub stiffness: SymmetricCsr,
    pub mass: Vec<f64>,
}

pub fn assemble_operators(metric: &ConformalMetric) -> Result<Operators, GeometryError> {
    let data = metric.triangle_data()?;
    Ok(operators_from(metric.mesh(), &data))
}

pub(crate) fn operators_from(mesh: &TriangleMesh, data: &[TriangleData]) -> Operators {
    let adjacency = mesh.adjacency();
    let mut values = vec![0.0; adjacency.nnz()];
    for (e, edge) in mesh.edges().iter().enumerate() {
        let w: f64 = edge
            .triangles
            .iter()
            .map(|&t| {
                let c = mesh.triangle_edges()[t].iter().position(|&x| x == e).expect("edge in triangle");
                0.5 * data[t].cotangents[c]
            })
            .sum();
        let [ij, ji] = adjacency.edge_slots[e];
        values[ij] = -w;
        values[ji] = -w;
        let [a, b] = edge.vertices;
        values[adjacency.diag_slot[a]] += w;
        values[adjacency.diag_slot[b]] += w;
    }
    let mut mass = vec![0.0; mesh.vertex_count()];
    for (tri, d) in mesh.triangles().iter().zip(data) {
        for &v in tri {
            mass[v] += d.area / 3.0;
        }
    }
    Operators { stiffness: SymmetricCsr { adjacency, values }, mass }
}

/// Lowest eigenpairs at one instant. Eigenvectors are `M`-normalised and
/// signed so that their largest-magnitude entry is positive; `mass` is the
/// mass diagonal they are normalised against.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumSnapshot {
    pub t: f64,
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub mass: Vec<f64>,
}

/// Eigensolver that caches the symbolic factorisation of the last pattern
/// it saw.
#[derive(Debug, Default)]
pub struct SpectralSolver {
    symbolic: Mutex<Option<(Arc<VertexAdjacency>, Arc<Symbolic>)>>,
}

impl SpectralSolver {
    pub fn new() -> Self {
        Self::default()
    }

    fn symbolic_for(&self, adjacency: &Arc<VertexAdjacency>) -> Arc<Symbolic> {
        let mut cache = self.symbolic.lock().unwrap_or_else(|e| e.into_inner());
        if let Some((adj, sym)) = cache.as_ref() {
            if Arc::ptr_eq(adj, adjacency) || **adj == **adjacency {
                return sym.clone();
            }
        }
        let sym = Arc::new(Symbolic::analyze(adjacency));
        *cache = Some((adjacency.clone(), sym.clone()));
        sym
    }

    /// The `k` smallest eigenpairs, each with relative residual
    /// `|L x - lambda M x| / |M x| <= tol`.
    pub fn smallest_eigenpairs(
        &self,
        stiffness: &SymmetricCsr,
        mass: &[f64],
        k: usize,
        tol: f64,
        seed: u64,
    ) -> Result<SpectrumSnapshot, SpectrumError> {
        let n = stiffness.n();
        if mass.len() != n {
            return Err(SpectrumError::DimensionMismatch { expected: n, found: mass.len() });
        }
        if k == 0 || 2 * k >= n {
            return Err(SpectrumError::InvalidRequest(format!(
                "k = {k} must be positive and below half of {n} vertices"
            )));
        }
        if !(tol > 0.0) {
            return Err(SpectrumError::InvalidRequest(format!("tolerance {tol}")));
        }
        if mass.iter().any(|m| !(*m > 0.0)) {
            return Err(SpectrumError::InvalidRequest("mass must be positive".into()));
        }
        let total: f64 = mass.iter().sum();
        let sigma = -1.0 / total;
        let adjacency = stiffness.adjacency();
        let mut shifted = stiffness.values.clone();
        for (i, &m) in mass.iter().enumerate() {
            shifted[adjacency.diag_slot[i]] -= sigma * m;
        }
        let sym = self.symbolic_for(adjacency);
        let factor = cholesky::factor(&sym, &shifted)
            .map_err(|e| SpectrumError::NotPositiveDefinite { vertex: e.0 })?;

        let pairs = lanczos::lowest_eigenpairs(
            n,
            mass,
            &|x| stiffness.matvec(x),
            &|b| factor.solve(&sym, b),
            k,
            tol,
            seed,
        )?;
        let mut eigenvectors = pairs.vectors;
        eigenvectors.iter_mut().for_each(|v| fix_sign(v));
        Ok(SpectrumSnapshot {
            t: 0.0,
            eigenvalues: pairs.values,
            eigenvectors,
            residuals: pairs.residuals,
            mass: mass.to_vec(),
        })
    }
}

pub fn smallest_eigenpairs(
    stiffness: &SymmetricCsr,
    mass: &[f64],
    k: usize,
    tol: f64,
    seed: u64,
) -> Result<SpectrumSnapshot, SpectrumError> {
    SpectralSolver::new().smallest_eigenpairs(stiffness, mass, k, tol, seed)
}

/// Full dense solution of the pencil, ascending. Intended as a reference
/// for small meshes.
pub fn dense_eigenpairs(stiffness: &SymmetricCsr, mass: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = stiffness.n();
    let inv_sqrt: Vec<f64> = mass.iter().map(|m| 1.0 / m.sqrt()).collect();
    let a = DMatrix::from_fn(n, n, |i, j| stiffness.get(i, j) * inv_sqrt[i] * inv_sqrt[j]);
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&c| eig.eigenvalues[c]).collect();
    let vectors = order
        .iter()
        .map(|&c| {
            let mut v: Vec<f64> =
                eig.eigenvectors.column(c).iter().zip(&inv_sqrt).map(|(y, s)| y * s).collect();
            fix_sign(&mut v);
            v
        })
        .collect();
    (values, vectors)
}

/// `f^T L f / f^T M f` for the operators of `metric`.
pub fn rayleigh_quotient(f: &[f64], metric: &ConformalMetric) -> Result<f64, SpectrumError> {
    let ops = assemble_operators(metric).map_err(Box::new)?;
    if f.len() != ops.mass.len() {
        return Err(SpectrumError::DimensionMismatch { expected: ops.mass.len(), found: f.len() });
    }
    let denom: f64 = f.iter().zip(&ops.mass).map(|(x, m)| x * x * m).sum();
    if !(denom > 0.0) {
        return Err(SpectrumError::ZeroVector);
    }
    Ok(ops.stiffness.quadratic_form(f) / denom)
}

fn fix_sign(v: &mut [f64]) {
    let pivot = v.iter().cloned().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
    if pivot < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{flat_torus, genus2_octagon, icosphere, regular_tetrahedron};
    use std::f64::consts::PI;

    fn ops_of(mesh: TriangleMesh, lengths: Vec<f64>) -> (ConformalMetric, Operators) {
        let m = ConformalMetric::new(Arc::new(mesh), lengths).unwrap();
        let ops = assemble_operators(&m).unwrap();
        (m, ops)
    }

    #[test]
    fn stiffness_annihilates_constants() {
        let (_, ops) = ops_of(genus2_octagon(1).0, genus2_octagon(1).1);
        let ones = vec![1.0; ops.mass.len()];
        assert!(ops.stiffness.matvec(&ones).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn tetrahedron_spectrum() {
        // Equilateral faces: every cotangent weight is 1/sqrt(3), so L is
        // (1/sqrt(3)) times the graph Laplacian of K4 and M = sqrt(3)/4 I.
        let (_, ops) = ops_of(regular_tetrahedron(1.0).0, vec![1.0; 6]);
        let (values, _) = dense_eigenpairs(&ops.stiffness, &ops.mass);
        let expected = 4.0 / 3f64.sqrt() / (3f64.sqrt() / 4.0);
        assert!(values[0].abs() < 1e-12);
        for &l in &values[1..] {
            assert!((l - expected).abs() < 1e-12 * expected);
        }
        let s = smallest_eigenpairs(&ops.stiffness, &ops.mass, 1, 1e-10, 1).unwrap();
        assert!(s.eigenvalues[0].abs() < 1e-10);
    }

    #[test]
    fn matches_dense_reference() {
        let (_, ops) = ops_of(genus2_octagon(0).0, genus2_octagon(0).1);
        let s = smallest_eigenpairs(&ops.stiffness, &ops.mass, 8, 1e-10, 3).unwrap();
        let (dense, _) = dense_eigenpairs(&ops.stiffness, &ops.mass);
        for i in 0..8 {
            assert!((s.eigenvalues[i] - dense[i]).abs() < 1e-8 * dense[i].abs().max(1.0));
            assert!(s.residuals[i] <= 1e-10);
        }
    }

    #[test]
    fn torus_multiplicity_four() {
        let (_, ops) = ops_of(flat_torus(24, 24, 1.0, 1.0).unwrap().0, flat_torus(24, 24, 1.0, 1.0).unwrap().1);
        let s = smallest_eigenpairs(&ops.stiffness, &ops.mass, 9, 1e-9, 5).unwrap();
        let target = 4.0 * PI * PI;
        for &l in &s.eigenvalues[1..5] {
            assert!((l - target).abs() < 0.03 * target, "{l}");
        }
        let spread = s.eigenvalues[4] - s.eigenvalues[1];
        assert!(spread < 1e-6 * target);
    }

    #[test]
    fn sphere_first_cluster() {
        let (_, ops) = ops_of(icosphere(3).0, icosphere(3).1);
        let s = smallest_eigenpairs(&ops.stiffness, &ops.mass, 9, 1e-9, 9).unwrap();
        for &l in &s.eigenvalues[1..4] {
            assert!((l - 2.0).abs() < 0.02);
        }
        for &l in &s.eigenvalues[4..9] {
            assert!((l - 6.0).abs() < 0.1);
        }
    }

    #[test]
    fn eigenvectors_are_mass_orthonormal() {
        let (_, ops) = ops_of(genus2_octagon(1).0, genus2_octagon(1).1);
        let s = smallest_eigenpairs(&ops.stiffness, &ops.mass, 8, 1e-10, 2).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let g: f64 = (0..ops.mass.len())
                    .map(|v| s.eigenvectors[i][v] * s.eigenvectors[j][v] * ops.mass[v])
                    .sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((g - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rayleigh_quotient_of_eigenvector() {
        let (m, ops) = ops_of(genus2_octagon(1).0, genus2_octagon(1).1);
        let s = smallest_eigenpairs(&ops.stiffness, &ops.mass, 3, 1e-10, 2).unwrap();
        let q = rayleigh_quotient(&s.eigenvectors[2], &m).unwrap();
        assert!((q - s.eigenvalues[2]).abs() < 1e-12 * q);
        assert!(matches!(rayleigh_quotient(&vec![0.0; ops.mass.len()], &m), Err(SpectrumError::ZeroVector)));
    }

    #[test]
    fn rejects_bad_requests() {
        let (_, ops) = ops_of(regular_tetrahedron(1.0).0, vec![1.0; 6]);
        assert!(smallest_eigenpairs(&ops.stiffness, &ops.mass, 0, 1e-9, 0).is_err());
        assert!(smallest_eigenpairs(&ops.stiffness, &ops.mass, 2, 1e-9, 0).is_err());
        assert!(smallest_eigenpairs(&ops.stiffness, &ops.mass[..3], 2, 1e-9, 0).is_err());
    }
}
