//! Discrete conformal metrics and their curvature.
//!
//! A metric is a fixed base length per edge together with a conformal factor
//! `u` per vertex; the current length of edge `ij` is
//! `exp((u_i + u_j) / 2) * base_ij`. Scaling every `u` by the same constant
//! multiplies every length by the same factor, so areas scale exactly.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::TriangleMesh;
use crate::spectrum::{assemble_operators, SpectralSolver, SpectrumError};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("expected {expected} values, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("edge {edge} has invalid base length {value}")]
    InvalidLength { edge: usize, value: f64 },
    #[error("conformal factor at vertex {vertex} is not finite")]
    NonFiniteFactor { vertex: usize },
    #[error("triangle inequality violated in triangle {triangle}")]
    TriangleInequality { triangle: usize },
    #[error("triangle {triangle} is degenerate")]
    DegenerateTriangle { triangle: usize },
    #[error("scale factor must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("perturbation produced non-negative curvature (max R = {r_max})")]
    NonNegativeCurvature { r_max: f64 },
    #[error("perturbation has no admissible direction")]
    DegeneratePerturbation,
    #[error(transparent)]
    Spectrum(#[from] Box<SpectrumError>),
}

/// Intrinsic data of one triangle. Corner `c` is opposite the edge
/// `triangle_edges[t][c]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TriangleData {
    pub angles: [f64; 3],
    pub cotangents: [f64; 3],
    pub area: f64,
    /// Derivative of the area with respect to the conformal factor at each
    /// corner.
    pub area_gradient: [f64; 3],
}

/// Curvature of a metric. `scalar[i] = 2 * defect[i] / dual_area[i]` and
/// `mean = 4 pi chi / total_area`.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvatureField {
    pub defect: Vec<f64>,
    pub dual_area: Vec<f64>,
    pub scalar: Vec<f64>,
    pub mean: f64,
    pub total_area: f64,
    pub min: f64,
    pub max: f64,
    pub argmin: usize,
    pub argmax: usize,
}

impl CurvatureField {
    /// `max_i |R_i - r|`.
    pub fn max_deviation(&self) -> f64 {
        (self.max - self.mean).abs().max((self.mean - self.min).abs())
    }

    /// The field of the metric scaled by `c`: angles and defects are
    /// unchanged, areas grow by `c` and curvatures shrink by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            defect: self.defect.clone(),
            dual_area: self.dual_area.iter().map(|a| a * c).collect(),
            scalar: self.scalar.iter().map(|r| r / c).collect(),
            mean: self.mean / c,
            total_area: self.total_area * c,
            min: self.min / c,
            max: self.max / c,
            argmin: self.argmin,
            argmax: self.argmax,
        }
    }
}

/// Curvature bounds `alpha < R < beta` measured from a metric, widened by
/// `1e-6 |R_min|` on both sides.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureWindow {
    pub alpha: f64,
    pub beta: f64,
}

impl CurvatureWindow {
    pub fn measure(field: &CurvatureField) -> Self {
        let margin = 1e-6 * field.min.abs();
        Self { alpha: field.min - margin, beta: field.max + margin }
    }

    /// Smallest window containing both.
    pub fn union(self, other: Self) -> Self {
        Self { alpha: self.alpha.min(other.alpha), beta: self.beta.max(other.beta) }
    }

    /// `alpha < r < beta < 0`.
    pub fn admits(&self, r: f64) -> bool {
        self.alpha < r && r < self.beta && self.beta < 0.0
    }
}

#[derive(Clone, Debug)]
pub struct ConformalMetric {
    mesh: Arc<TriangleMesh>,
    base_lengths: Arc<[f64]>,
    u: Vec<f64>,
}

impl ConformalMetric {
    /// Metric with `u = 0`. Base lengths must be positive, finite and satisfy
    /// the strict triangle inequality in every triangle.
    pub fn new(mesh: Arc<TriangleMesh>, base_lengths: Vec<f64>) -> Result<Self, GeometryError> {
        let u = vec![0.0; mesh.vertex_count()];
        Self::from_parts(mesh, base_lengths.into(), u)
    }

    pub fn from_parts(
        mesh: Arc<TriangleMesh>,
        base_lengths: Arc<[f64]>,
        u: Vec<f64>,
    ) -> Result<Self, GeometryError> {
        if base_lengths.len() != mesh.edge_count() {
            return Err(GeometryError::LengthMismatch {
                expected: mesh.edge_count(),
                found: base_lengths.len(),
            });
        }
        if let Some((edge, &value)) =
            base_lengths.iter().enumerate().find(|(_, l)| !(l.is_finite() && **l > 0.0))
        {
            return Err(GeometryError::InvalidLength { edge, value });
        }
        let metric = Self { mesh, base_lengths, u: Vec::new() };
        let metric = metric.with_u(u)?;
        metric.triangle_data()?;
        Ok(metric)
    }

    /// Same mesh and base lengths with a new conformal factor. The triangle
    /// inequality is not checked here.
    pub fn with_u(&self, u: Vec<f64>) -> Result<Self, GeometryError> {
        if u.len() != self.mesh.vertex_count() {
            return Err(GeometryError::LengthMismatch {
                expected: self.mesh.vertex_count(),
                found: u.len(),
            });
        }
        if let Some(vertex) = u.iter().position(|x| !x.is_finite()) {
            return Err(GeometryError::NonFiniteFactor { vertex });
        }
        Ok(Self { mesh: self.mesh.clone(), base_lengths: self.base_lengths.clone(), u })
    }

    pub fn mesh(&self) -> &Arc<TriangleMesh> {
        &self.mesh
    }

    pub fn base_lengths(&self) -> &Arc<[f64]> {
        &self.base_lengths
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn into_u(self) -> Vec<f64> {
        self.u
    }

    fn length(&self, e: usize) -> f64 {
        let [a, b] = self.mesh.edges()[e].vertices;
        (0.5 * self.u[a]).exp() * (0.5 * self.u[b]).exp() * self.base_lengths[e]
    }

    /// Current edge lengths; fails if any triangle violates the triangle
    /// inequality.
    pub fn current_lengths(&self) -> Result<Vec<f64>, GeometryError> {
        self.triangle_data()?;
        Ok((0..self.mesh.edge_count()).map(|e| self.length(e)).collect())
    }

    pub fn mean_edge_length(&self) -> f64 {
        let n = self.mesh.edge_count();
        (0..n).map(|e| self.length(e)).sum::<f64>() / n as f64
    }

    pub fn triangle_data(&self) -> Result<Vec<TriangleData>, GeometryError> {
        let mut out = Vec::new();
        triangle_data_into(&self.mesh, &self.base_lengths, &self.u, &mut out)?;
        Ok(out)
    }

    pub fn total_area(&self) -> Result<f64, GeometryError> {
        Ok(self.triangle_data()?.iter().map(|d| d.area).sum())
    }

    pub fn measure_curvature(&self) -> Result<CurvatureField, GeometryError> {
        let data = self.triangle_data()?;
        Ok(curvature_from(&self.mesh, &data))
    }

    /// The metric `c * g`: lengths scale by `sqrt(c)` and areas by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self, GeometryError> {
        if !(c.is_finite() && c > 0.0) {
            return Err(GeometryError::InvalidScale(c));
        }
        self.shifted(0.5 * c.ln())
    }

    /// Uniform shift of the conformal factor.
    pub fn shifted(&self, delta: f64) -> Result<Self, GeometryError> {
        self.with_u(self.u.iter().map(|x| x + delta).collect())
    }

    /// Rescales so that the total area equals `target`.
    pub fn with_area(&self, target: f64) -> Result<Self, GeometryError> {
        if !(target.is_finite() && target > 0.0) {
            return Err(GeometryError::InvalidScale(target));
        }
        let area = self.total_area()?;
        self.scaled(target / area)
    }
}

/// Triangle data for the lengths `exp(u_a / 2) exp(u_b / 2) base_ab`, written
/// into `out` (which is resized as needed).
pub(crate) fn triangle_data_into(
    mesh: &TriangleMesh,
    base_lengths: &[f64],
    u: &[f64],
    out: &mut Vec<TriangleData>,
) -> Result<(), GeometryError> {
    let scale: Vec<f64> = u.iter().map(|x| (0.5 * x).exp()).collect();
    out.resize(mesh.triangle_count(), TriangleData { angles: [0.0; 3], cotangents: [0.0; 3], area: 0.0, area_gradient: [0.0; 3] });
    out.par_iter_mut()
        .zip(mesh.triangles().par_iter().zip(mesh.triangle_edges()))
        .enumerate()
        .try_for_each(|(t, (slot, (tri, opp)))| {
            let l = [0, 1, 2].map(|c| {
                scale[tri[(c + 1) % 3]] * scale[tri[(c + 2) % 3]] * base_lengths[opp[c]]
            });
            *slot = triangle_data(l).map_err(|degenerate| {
                if degenerate {
                    GeometryError::DegenerateTriangle { triangle: t }
                } else {
                    GeometryError::TriangleInequality { triangle: t }
                }
            })?;
            Ok(())
        })
}

/// Angles, cotangents and area from the three opposite edge lengths.
/// `Err(false)` signals a triangle inequality violation, `Err(true)` a
/// numerically degenerate triangle.
pub fn triangle_data(l: [f64; 3]) -> Result<TriangleData, bool> {
    let mut s = l;
    s.sort_by(|a, b| b.total_cmp(a));
    let [x, y, z] = s;
    // Kahan's stable Heron formula, x >= y >= z.
    let slack = z - (x - y);
    if !(slack > 0.0) {
        return Err(false);
    }
    let area = 0.25 * ((x + (y + z)) * slack * (z + (x - y)) * (x + (y - z))).sqrt();
    if !(area > 1e-13 * x * x) {
        return Err(true);
    }
    let sq = l.map(|v| v * v);
    // The largest angle is taken as the complement of the other two, so the
    // angle sum is pi up to a single rounding.
    let widest = if l[0] >= l[1] && l[0] >= l[2] { 0 } else if l[1] >= l[2] { 1 } else { 2 };
    let mut angles = [0.0; 3];
    let mut cotangents = [0.0; 3];
    for c in 0..3 {
        let adj = sq[(c + 1) % 3] + sq[(c + 2) % 3] - sq[c];
        if c != widest {
            angles[c] = (4.0 * area).atan2(adj);
        }
        cotangents[c] = adj / (4.0 * area);
    }
    angles[widest] = PI - angles[(widest + 1) % 3] - angles[(widest + 2) % 3];
    // dA / d(log l_c) = l_c^2 cot(theta_c) / 2, and u at a corner moves the
    // log-lengths of its two edges by half as much.
    let d = [0, 1, 2].map(|c| 0.5 * sq[c] * cotangents[c]);
    let area_gradient = [0, 1, 2].map(|c| 0.5 * (d[(c + 1) % 3] + d[(c + 2) % 3]));
    Ok(TriangleData { angles, cotangents, area, area_gradient })
}

pub(crate) fn curvature_from(mesh: &TriangleMesh, data: &[TriangleData]) -> CurvatureField {
    let n = mesh.vertex_count();
    let mut angle_sum = vec![0.0; n];
    let mut dual_area = vec![0.0; n];
    let mut total_area = 0.0;
    for (tri, d) in mesh.triangles().iter().zip(data) {
        for c in 0..3 {
            angle_sum[tri[c]] += d.angles[c];
            dual_area[tri[c]] += d.area / 3.0;
        }
        total_area += d.area;
    }
    let defect: Vec<f64> = angle_sum.iter().map(|s| 2.0 * PI - s).collect();
    let scalar: Vec<f64> = defect.iter().zip(&dual_area).map(|(k, a)| 2.0 * k / a).collect();
    let mean = 4.0 * PI * mesh.euler_characteristic() as f64 / total_area;
    let (mut argmin, mut argmax) = (0, 0);
    for (i, &r) in scalar.iter().enumerate() {
        if r < scalar[argmin] {
            argmin = i;
        }
        if r > scalar[argmax] {
            argmax = i;
        }
    }
    CurvatureField {
        min: scalar[argmin],
        max: scalar[argmax],
        argmin,
        argmax,
        defect,
        dual_area,
        scalar,
        mean,
        total_area,
    }
}

/// `metric` scaled by `c`.
pub fn scale_metric(metric: &ConformalMetric, c: f64) -> Result<ConformalMetric, GeometryError> {
    metric.scaled(c)
}

pub const PERTURBATION_MODES: usize = 6;

/// Adds a smooth random bump to the conformal factor and restores the area.
///
/// The bump is `sum_n c_n phi_n(a) phi_n` over the first six non-constant
/// Laplace eigenfunctions, with `c_n` uniform in `[0.5, 1.5]` and an anchor
/// vertex `a` chosen among the first eight vertices, all drawn from
/// `mode_seed`. The bump is normalised to unit sup norm before scaling by
/// `amplitude`, and depends neither on eigenvector signs nor on the basis
/// chosen inside a degenerate eigenspace.
///
/// Returns the new metric with its measured curvature window.
pub fn perturb_metric(
    metric: &ConformalMetric,
    amplitude: f64,
    mode_seed: u64,
) -> Result<(ConformalMetric, CurvatureWindow), GeometryError> {
    let area = metric.total_area()?;
    let n = metric.mesh.vertex_count();
    // The eigensolver needs fewer than n/2 pairs.
    let modes = PERTURBATION_MODES.min((n.saturating_sub(1) / 2).saturating_sub(1));
    if modes == 0 {
        return Err(GeometryError::DegeneratePerturbation);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mode_seed);
    let anchor = rng.random_range(0..n.min(8));
    let weights: Vec<f64> = (0..modes).map(|_| rng.random_range(0.5..=1.5)).collect();

    let ops = assemble_operators(metric)?;
    let spectrum = SpectralSolver::new()
        .smallest_eigenpairs(&ops.stiffness, &ops.mass, modes + 1, 1e-9, mode_seed)
        .map_err(Box::new)?;

    let mut bump = vec![0.0; n];
    for (w, phi) in weights.iter().zip(&spectrum.eigenvectors[1..]) {
        let c = w * phi[anchor];
        bump.iter_mut().zip(phi).for_each(|(b, p)| *b += c * p);
    }
    let sup = bump.iter().fold(0.0f64, |m, b| m.max(b.abs()));
    if !(sup > 0.0) {
        return Err(GeometryError::DegeneratePerturbation);
    }
    let u = metric.u.iter().zip(&bump).map(|(u, b)| u + amplitude * b / sup).collect();
    let perturbed = metric.with_u(u)?.with_area(area)?;
    let curvature = perturbed.measure_curvature()?;
    if curvature.max >= 0.0 {
        return Err(GeometryError::NonNegativeCurvature { r_max: curvature.max });
    }
    Ok((perturbed, CurvatureWindow::measure(&curvature)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{flat_torus, genus2_octagon, icosphere, regular_tetrahedron};

    fn metric(mesh: TriangleMesh, lengths: Vec<f64>) -> ConformalMetric {
        ConformalMetric::new(Arc::new(mesh), lengths).unwrap()
    }

    #[test]
    fn equilateral_triangle() {
        let d = triangle_data([1.0; 3]).unwrap();
        for c in 0..3 {
            assert!((d.angles[c] - PI / 3.0).abs() < 1e-15);
            assert!((d.cotangents[c] - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        }
        assert!((d.area - 3f64.sqrt() / 4.0).abs() < 1e-15);
        for g in d.area_gradient {
            assert!((g - 2.0 * d.area / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn area_gradient_matches_finite_differences() {
        let l = [1.3, 0.9, 0.7];
        let d = triangle_data(l).unwrap();
        let h = 1e-6;
        for c in 0..3 {
            let area = |s: f64| {
                let e = (0.5 * s).exp();
                let mut m = l;
                m[(c + 1) % 3] *= e;
                m[(c + 2) % 3] *= e;
                triangle_data(m).unwrap().area
            };
            let fd = (area(h) - area(-h)) / (2.0 * h);
            assert!((fd - d.area_gradient[c]).abs() < 1e-9, "{fd} {}", d.area_gradient[c]);
        }
        let sum: f64 = d.area_gradient.iter().sum();
        assert!((sum - 2.0 * d.area).abs() < 1e-14);
    }

    #[test]
    fn right_triangle_and_violations() {
        let d = triangle_data([5.0, 4.0, 3.0]).unwrap();
        assert!((d.angles[0] - PI / 2.0).abs() < 1e-15);
        assert!(d.cotangents[0].abs() < 1e-15);
        assert!((d.area - 6.0).abs() < 1e-14);
        assert_eq!(triangle_data([1.0, 2.0, 3.0]), Err(false));
        assert_eq!(triangle_data([1.0, 1.0, 2.5]), Err(false));
    }

    #[test]
    fn tetrahedron_defects() {
        let m = metric(regular_tetrahedron(1.0).0, vec![1.0; 6]);
        let k = m.measure_curvature().unwrap();
        for i in 0..4 {
            assert!((k.defect[i] - PI).abs() < 1e-14);
        }
        assert!((k.total_area - 3f64.sqrt()).abs() < 1e-14);
        assert!((k.mean - 8.0 * PI / 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn gauss_bonnet_holds() {
        for (mesh, lengths) in [genus2_octagon(1), icosphere(1), flat_torus(5, 4, 1.0, 0.7).unwrap()] {
            let chi = mesh.euler_characteristic() as f64;
            let k = metric(mesh, lengths).measure_curvature().unwrap();
            let total: f64 = k.defect.iter().sum();
            assert!((total - 2.0 * PI * chi).abs() < 1e-10);
            let weighted: f64 = k.scalar.iter().zip(&k.dual_area).map(|(r, a)| r * a).sum();
            assert!((weighted / k.total_area - k.mean).abs() < 1e-10);
        }
    }

    #[test]
    fn octagon_is_negatively_curved_near_minus_two() {
        let k = metric(genus2_octagon(2).0, genus2_octagon(2).1).measure_curvature().unwrap();
        assert!(k.max < 0.0);
        assert!((k.total_area - 4.0 * PI).abs() < 0.05 * 4.0 * PI);
        assert!((k.mean + 2.0).abs() < 0.05);
    }

    #[test]
    fn scaling_is_exact() {
        let m = metric(genus2_octagon(0).0, genus2_octagon(0).1);
        let k0 = m.measure_curvature().unwrap();
        let k1 = m.scaled(2.5).unwrap().measure_curvature().unwrap();
        assert!((k1.total_area / k0.total_area - 2.5).abs() < 1e-13);
        for i in 0..k0.scalar.len() {
            assert!((k1.scalar[i] * 2.5 - k0.scalar[i]).abs() < 1e-12 * k0.scalar[i].abs().max(1.0));
        }
        assert!(m.scaled(0.0).is_err());
    }

    #[test]
    fn triangle_inequality_is_enforced() {
        let (mesh, _) = regular_tetrahedron(1.0);
        let mut lengths = vec![1.0; 6];
        lengths[0] = 2.5;
        let err = ConformalMetric::new(Arc::new(mesh), lengths).unwrap_err();
        assert!(matches!(err, GeometryError::TriangleInequality { .. }));
    }

    #[test]
    fn perturbation_is_deterministic_and_area_preserving() {
        let m = metric(genus2_octagon(1).0, genus2_octagon(1).1).with_area(1.0).unwrap();
        let (a, wa) = perturb_metric(&m, 0.05, 7).unwrap();
        let (b, wb) = perturb_metric(&m, 0.05, 7).unwrap();
        assert_eq!(wa, wb);
        assert!(wa.admits(-8.0 * PI));
        assert_eq!(a.u(), b.u());
        assert!((a.total_area().unwrap() - 1.0).abs() < 1e-13);
        let diff: Vec<f64> = a.u().iter().zip(m.u()).map(|(x, y)| x - y).collect();
        let spread = diff.iter().cloned().fold(f64::MIN, f64::max)
            - diff.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread > 0.05 && spread <= 0.1 + 1e-12);
        let (neg, wn) = perturb_metric(&m, -0.05, 7).unwrap();
        assert_ne!(neg.u(), a.u());
        assert!(wn.alpha < wa.beta && wa.alpha < wn.beta);
    }

    #[test]
    fn zero_amplitude_brackets_base_curvature() {
        let m = metric(genus2_octagon(1).0, genus2_octagon(1).1);
        let k = m.measure_curvature().unwrap();
        let (same, w) = perturb_metric(&m, 0.0, 3).unwrap();
        assert!(same.u().iter().all(|x| x.abs() < 1e-14));
        assert!(w.alpha < k.min && k.max < w.beta && w.beta < 0.0);
    }

    #[test]
    fn excessive_perturbation_is_rejected() {
        let m = metric(genus2_octagon(1).0, genus2_octagon(1).1);
        let err = perturb_metric(&m, 1.0, 1).unwrap_err();
        assert!(err.to_string().contains("non-negative curvature"), "{err}");
    }
}
