//! Normalized Ricci flow `du/dt = (r - R) / 2` on the conformal factor.
//!
//! Steps are classical RK4 followed by a uniform shift of `u` that restores
//! the initial area. Inside the stages the velocity is made tangent to the
//! constant-area surface by a uniform correction built from the exact area
//! gradient. The step size is the smallest of the curvature rule
//! `safety / max|R - r|`, twice the previous step, `dt_init`, and the
//! stability cap `safety * 2.785 / G` where `G` is the Gershgorin bound of
//! `M^{-1} L`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    curvature_from, triangle_data_into, ConformalMetric, CurvatureField, CurvatureWindow,
    GeometryError, TriangleData,
};
use crate::mesh::TriangleMesh;
use crate::spectrum::{assemble_operators, SpectralSolver, SpectrumSnapshot};

/// Length of the stability interval of classical RK4 on the negative axis.
pub const RK4_STABILITY: f64 = 2.785;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("invalid flow configuration: {0}")]
    InvalidConfig(String),
    #[error("inadmissible initial metric: {0}")]
    Inadmissible(String),
    #[error("step size fell below dt_min = {dt_min} at t = {t}")]
    StepTooSmall { t: f64, dt_min: f64, u: Box<Vec<f64>> },
    #[error("Euler characteristic {0} is not negative")]
    NonNegativeEuler(i64),
    #[error("invalid time map argument: {0}")]
    InvalidArgument(String),
    #[error("sample {index} needs neighbours in time; trace has {len} samples")]
    SampleOutOfRange { index: usize, len: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Admissibility {
    /// Reject initial metrics with `R_max >= 0` or genus below 2.
    #[default]
    Strict,
    /// Log a warning and continue.
    WarnOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub dt_init: f64,
    pub dt_min: f64,
    pub safety: f64,
    pub area_tolerance: f64,
    /// Stop once `max|R - r| <= convergence_tol * |r|`.
    pub convergence_tol: f64,
    pub t_max: f64,
    /// Steps between spectral snapshots.
    pub spectrum_every: usize,
    /// Steps between stored states without a spectrum; 0 stores states only
    /// alongside spectra.
    pub sample_every: usize,
    pub k: usize,
    pub eig_tol: f64,
    pub seed: u64,
    pub admissibility: Admissibility,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            dt_init: 1e-2,
            dt_min: 1e-12,
            safety: 0.9,
            area_tolerance: 1e-9,
            convergence_tol: 1e-4,
            t_max: 50.0,
            spectrum_every: 500,
            sample_every: 0,
            k: 12,
            eig_tol: 1e-8,
            seed: 0,
            admissibility: Admissibility::Strict,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<(), FlowError> {
        let positive = [
            ("dt_init", self.dt_init),
            ("dt_min", self.dt_min),
            ("area_tolerance", self.area_tolerance),
            ("convergence_tol", self.convergence_tol),
            ("t_max", self.t_max),
            ("eig_tol", self.eig_tol),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(FlowError::InvalidConfig(format!("{name} must be positive, got {value}")));
            }
        }
        if self.dt_min > self.dt_init {
            return Err(FlowError::InvalidConfig("dt_min exceeds dt_init".into()));
        }
        if !(self.safety > 0.0 && self.safety < 1.0) {
            return Err(FlowError::InvalidConfig(format!("safety {} outside (0, 1)", self.safety)));
        }
        if self.spectrum_every == 0 {
            return Err(FlowError::InvalidConfig("spectrum_every must be positive".into()));
        }
        if self.k < 2 {
            return Err(FlowError::InvalidConfig("k must be at least 2".into()));
        }
        Ok(())
    }
}

/// Per-step curvature statistics. `dt` is the step that produced the state
/// (0 for the initial state).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub area: f64,
    pub r: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub argmin: usize,
    pub argmax: usize,
    pub max_deviation: f64,
}

impl StepStats {
    fn new(step: usize, t: f64, dt: f64, field: &CurvatureField) -> Self {
        Self {
            step,
            t,
            dt,
            area: field.total_area,
            r: field.mean,
            r_min: field.min,
            r_max: field.max,
            argmin: field.argmin,
            argmax: field.argmax,
            max_deviation: field.max_deviation(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowSample {
    pub step: usize,
    pub t: f64,
    pub u: Vec<f64>,
    pub curvature: CurvatureField,
    pub spectrum: Option<SpectrumSnapshot>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumFailure {
    pub step: usize,
    pub t: f64,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct FlowTrace {
    /// The initial metric; sample states share its mesh and base lengths.
    pub initial: ConformalMetric,
    pub config: FlowConfig,
    pub initial_area: f64,
    pub measured_alpha: f64,
    pub measured_beta: f64,
    pub admissible: bool,
    pub converged: bool,
    pub rejected_steps: usize,
    pub steps: Vec<StepStats>,
    /// Stored states in time order; the last one is the final state and
    /// always carries a spectrum unless the eigensolver failed there.
    pub samples: Vec<FlowSample>,
    pub spectrum_failures: Vec<SpectrumFailure>,
}

impl FlowTrace {
    pub fn window(&self) -> CurvatureWindow {
        CurvatureWindow { alpha: self.measured_alpha, beta: self.measured_beta }
    }

    pub fn r(&self) -> f64 {
        self.steps[0].r
    }

    pub fn limit(&self) -> &FlowSample {
        self.samples.last().expect("a trace has at least one sample")
    }

    pub fn metric_at(&self, sample: &FlowSample) -> ConformalMetric {
        self.initial.with_u(sample.u.clone()).expect("stored states are finite")
    }

    pub fn final_metric(&self) -> ConformalMetric {
        self.metric_at(self.limit())
    }

    /// Samples that carry a spectrum.
    pub fn snapshots(&self) -> Vec<&SpectrumSnapshot> {
        self.samples.iter().filter_map(|s| s.spectrum.as_ref()).collect()
    }
}

/// `(r - R_i) / 2` at every vertex.
pub fn nrf_velocity(metric: &ConformalMetric) -> Result<Vec<f64>, GeometryError> {
    Ok(velocity(&metric.measure_curvature()?))
}

fn velocity(field: &CurvatureField) -> Vec<f64> {
    field.scalar.iter().map(|r| 0.5 * (field.mean - r)).collect()
}

/// Reusable buffers for repeated curvature evaluation on one mesh.
struct Evaluator<'a> {
    mesh: &'a TriangleMesh,
    base: &'a [f64],
    data: Vec<TriangleData>,
}

impl<'a> Evaluator<'a> {
    fn new(metric: &'a ConformalMetric) -> Self {
        Self { mesh: metric.mesh(), base: metric.base_lengths(), data: Vec::new() }
    }

    fn field(&mut self, u: &[f64]) -> Result<CurvatureField, GeometryError> {
        triangle_data_into(self.mesh, self.base, u, &mut self.data)?;
        Ok(curvature_from(self.mesh, &self.data))
    }

    /// Flow velocity at the last evaluated state, corrected by a constant so
    /// that the area is stationary.
    fn velocity(&self, field: &CurvatureField) -> Vec<f64> {
        let mut v = velocity(field);
        let mut gradient = vec![0.0; v.len()];
        for (tri, d) in self.mesh.triangles().iter().zip(&self.data) {
            for c in 0..3 {
                gradient[tri[c]] += d.area_gradient[c];
            }
        }
        // The ratio is scale invariant, so the data may also belong to a
        // uniformly shifted copy of the state.
        let rate: f64 = gradient.iter().zip(&v).map(|(g, v)| g * v).sum();
        let shift = rate / gradient.iter().sum::<f64>();
        v.iter_mut().for_each(|x| *x -= shift);
        v
    }

    /// Gershgorin bound of `M^{-1} L` for the last evaluated state.
    fn gershgorin(&self, field: &CurvatureField) -> f64 {
        let mut weight = vec![0.0; self.mesh.edge_count()];
        for (opp, d) in self.mesh.triangle_edges().iter().zip(&self.data) {
            for c in 0..3 {
                weight[opp[c]] += 0.5 * d.cotangents[c];
            }
        }
        let mut diag = vec![0.0; field.dual_area.len()];
        let mut off = vec![0.0; field.dual_area.len()];
        for (edge, w) in self.mesh.edges().iter().zip(&weight) {
            for v in edge.vertices {
                diag[v] += w;
                off[v] += w.abs();
            }
        }
        (0..diag.len())
            .map(|i| (diag[i].abs() + off[i]) / field.dual_area[i])
            .fold(0.0, f64::max)
    }

    /// One RK4 step from `u` with first stage `k1`, followed by the area
    /// shift. Returns the new state, its curvature and its Gershgorin bound.
    fn step(
        &mut self,
        u: &[f64],
        k1: &[f64],
        dt: f64,
        area: f64,
    ) -> Result<(Vec<f64>, CurvatureField, f64), GeometryError> {
        let stage = |k: &[f64], h: f64| -> Vec<f64> { u.iter().zip(k).map(|(x, v)| x + h * v).collect() };
        let f2 = self.field(&stage(k1, 0.5 * dt))?;
        let k2 = self.velocity(&f2);
        let f3 = self.field(&stage(&k2, 0.5 * dt))?;
        let k3 = self.velocity(&f3);
        let f4 = self.field(&stage(&k3, dt))?;
        let k4 = self.velocity(&f4);
        let mut next: Vec<f64> = (0..u.len())
            .map(|i| u[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect();
        let field = self.field(&next)?;
        let g = self.gershgorin(&field);
        let c = area / field.total_area;
        let shift = 0.5 * c.ln();
        next.iter_mut().for_each(|x| *x += shift);
        Ok((next, field.scaled(c), g / c))
    }
}

/// One RK4 step of size `dt`, renormalised to the area of `metric`.
pub fn step(metric: &ConformalMetric, dt: f64) -> Result<ConformalMetric, GeometryError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(GeometryError::InvalidScale(dt));
    }
    let mut eval = Evaluator::new(metric);
    let field = eval.field(metric.u())?;
    let k1 = eval.velocity(&field);
    let (u, _, _) = eval.step(metric.u(), &k1, dt, field.total_area)?;
    metric.with_u(u)
}

/// Integrates the flow until `max|R - r| <= convergence_tol * |r|` or
/// `t >= t_max`.
pub fn run_flow(metric: &ConformalMetric, config: &FlowConfig) -> Result<FlowTrace, FlowError> {
    config.validate()?;
    let mut eval = Evaluator::new(metric);
    let mut field = eval.field(metric.u())?;
    let mut gersh = eval.gershgorin(&field);
    let window = CurvatureWindow::measure(&field);

    let chi = metric.mesh().euler_characteristic();
    let mut problems = Vec::new();
    if chi >= 0 {
        problems.push(format!("genus {} is below 2", metric.mesh().genus()));
    }
    if field.max >= 0.0 {
        problems.push(format!("initial curvature is not negative (max R = {})", field.max));
    }
    let admissible = problems.is_empty();
    if !admissible {
        let message = problems.join("; ");
        match config.admissibility {
            Admissibility::Strict => return Err(FlowError::Inadmissible(message)),
            Admissibility::WarnOnly => log::warn!("continuing with inadmissible metric: {message}"),
        }
    }

    let area = field.total_area;
    let solver = SpectralSolver::new();
    let mut trace = FlowTrace {
        initial: metric.clone(),
        config: config.clone(),
        initial_area: area,
        measured_alpha: window.alpha,
        measured_beta: window.beta,
        admissible,
        converged: false,
        rejected_steps: 0,
        steps: vec![StepStats::new(0, 0.0, 0.0, &field)],
        samples: Vec::new(),
        spectrum_failures: Vec::new(),
    };
    let snapshot = |u: &[f64], t: f64, step: usize, trace: &mut FlowTrace| {
        let result = metric
            .with_u(u.to_vec())
            .and_then(|m| assemble_operators(&m))
            .map_err(|e| e.to_string())
            .and_then(|ops| {
                solver
                    .smallest_eigenpairs(&ops.stiffness, &ops.mass, config.k, config.eig_tol, config.seed)
                    .map_err(|e| e.to_string())
            });
        match result {
            Ok(mut s) => {
                s.t = t;
                Some(s)
            }
            Err(message) => {
                log::warn!("spectrum at t = {t} failed: {message}");
                trace.spectrum_failures.push(SpectrumFailure { step, t, message });
                None
            }
        }
    };

    let mut u = metric.u().to_vec();
    let mut t = 0.0;
    let mut n = 0usize;
    let mut dt_prev = config.dt_init;
    let threshold = config.convergence_tol * field.mean.abs();
    loop {
        let done = field.max_deviation() <= threshold || t >= config.t_max;
        trace.converged = field.max_deviation() <= threshold;
        let spectral = n % config.spectrum_every == 0 || done;
        let stored = spectral || (config.sample_every > 0 && n % config.sample_every == 0);
        if stored {
            let spectrum = if spectral { snapshot(&u, t, n, &mut trace) } else { None };
            trace.samples.push(FlowSample { step: n, t, u: u.clone(), curvature: field.clone(), spectrum });
        }
        if done {
            break;
        }

        let mut dt = (2.0 * dt_prev)
            .min(config.dt_init)
            .min(config.safety / field.max_deviation())
            .min(config.safety * RK4_STABILITY / gersh);
        let k1 = eval.velocity(&field);
        let (next, next_field, next_gersh) = loop {
            if dt < config.dt_min {
                return Err(FlowError::StepTooSmall { t, dt_min: config.dt_min, u: Box::new(u) });
            }
            match eval.step(&u, &k1, dt, area) {
                Ok(out) => break out,
                Err(GeometryError::TriangleInequality { .. } | GeometryError::DegenerateTriangle { .. }) => {
                    trace.rejected_steps += 1;
                    dt *= 0.5;
                }
                Err(e) => return Err(e.into()),
            }
        };
        u = next;
        field = next_field;
        gersh = next_gersh;
        t += dt;
        n += 1;
        dt_prev = dt;
        trace.steps.push(StepStats::new(n, t, dt, &field));
        if ((field.total_area - area) / area).abs() > config.area_tolerance {
            log::warn!("area drift {} at t = {t}", (field.total_area - area) / area);
        }
    }
    Ok(trace)
}

/// A step where `R_max` rose or `R_min` fell by more than `1e-6 |r|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ContractionViolation {
    pub step: usize,
    pub t: f64,
    pub max_increase: f64,
    pub min_decrease: f64,
}

/// Steps after the first five where the curvature range widened.
pub fn contraction_violations(trace: &FlowTrace) -> Vec<ContractionViolation> {
    let slack = 1e-6 * trace.r().abs();
    trace
        .steps
        .windows(2)
        .skip(5)
        .filter_map(|w| {
            let max_increase = w[1].r_max - w[0].r_max;
            let min_decrease = w[0].r_min - w[1].r_min;
            (max_increase > slack || min_decrease > slack).then_some(ContractionViolation {
                step: w[1].step,
                t: w[1].t,
                max_increase,
                min_decrease,
            })
        })
        .collect()
}

/// Unnormalised flow time `t` and the area at `t` for normalised time `tau`:
/// `t = A0 / (4 pi chi) (1 - exp(-4 pi chi tau))` and `A = A0 - 4 pi chi t`.
pub fn rf_nrf_time_map(area0: f64, chi: i64, tau: f64) -> Result<(f64, f64), FlowError> {
    if chi >= 0 {
        return Err(FlowError::NonNegativeEuler(chi));
    }
    if !(area0.is_finite() && area0 > 0.0) {
        return Err(FlowError::InvalidArgument(format!("area {area0}")));
    }
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(FlowError::InvalidArgument(format!("tau {tau}")));
    }
    let k = 4.0 * PI * chi as f64;
    let t = -area0 / k * (-k * tau).exp_m1();
    Ok((t, area0 - k * t))
}

/// Derivative at `t[1]` of the parabola through three points.
pub fn central_derivative(t: [f64; 3], f: [f64; 3]) -> f64 {
    let (h1, h2) = (t[1] - t[0], t[2] - t[1]);
    -h2 / (h1 * (h1 + h2)) * f[0] + (h2 - h1) / (h1 * h2) * f[1] + h1 / (h2 * (h1 + h2)) * f[2]
}

/// `dR/dt - Delta R - R (R - r)` at an interior stored sample, with the
/// analyst's Laplacian `Delta = -M^{-1} L` and a three-point time
/// derivative over the neighbouring samples.
pub fn curvature_pde_residual(trace: &FlowTrace, sample_index: usize) -> Result<Vec<f64>, FlowError> {
    let len = trace.samples.len();
    if sample_index == 0 || sample_index + 1 >= len {
        return Err(FlowError::SampleOutOfRange { index: sample_index, len });
    }
    let [a, b, c] = [sample_index - 1, sample_index, sample_index + 1].map(|i| &trace.samples[i]);
    let ops = assemble_operators(&trace.metric_at(b))?;
    let field = &b.curvature;
    let lr = ops.stiffness.matvec(&field.scalar);
    Ok((0..field.scalar.len())
        .map(|i| {
            let dr = central_derivative(
                [a.t, b.t, c.t],
                [a.curvature.scalar[i], field.scalar[i], c.curvature.scalar[i]],
            );
            let r = field.scalar[i];
            dr + lr[i] / ops.mass[i] - r * (r - field.mean)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::mesh::{flat_torus, genus2_octagon, regular_tetrahedron};

    fn octagon(level: u32) -> ConformalMetric {
        let (mesh, lengths) = genus2_octagon(level);
        ConformalMetric::new(Arc::new(mesh), lengths).unwrap()
    }

    fn torus() -> ConformalMetric {
        let (mesh, lengths) = flat_torus(6, 6, 1.0, 1.0).unwrap();
        ConformalMetric::new(Arc::new(mesh), lengths).unwrap()
    }

    #[test]
    fn velocity_vanishes_at_constant_curvature() {
        for m in [torus(), {
            let (mesh, l) = regular_tetrahedron(1.3);
            ConformalMetric::new(Arc::new(mesh), l).unwrap()
        }] {
            let v = nrf_velocity(&m).unwrap();
            assert!(v.iter().all(|x| x.abs() < 1e-12), "{v:?}");
        }
    }

    #[test]
    fn velocity_sign_follows_curvature_excess() {
        let m = octagon(1);
        let k = m.measure_curvature().unwrap();
        let v = nrf_velocity(&m).unwrap();
        for (vi, ri) in v.iter().zip(&k.scalar) {
            assert_eq!(*vi > 0.0, *ri < k.mean);
        }
    }

    #[test]
    fn fixed_point_is_preserved() {
        let m = torus();
        let next = step(&m, 0.1).unwrap();
        for (a, b) in next.u().iter().zip(m.u()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn step_is_first_order_consistent() {
        let m = octagon(1);
        let v = nrf_velocity(&m).unwrap();
        let defect = |dt: f64| {
            let e: Vec<f64> = step(&m, dt)
                .unwrap()
                .u()
                .iter()
                .zip(&v)
                .map(|(u, v)| u - dt * v)
                .collect();
            // The area shift is uniform, so only the non-constant part is
            // compared.
            let mean = e.iter().sum::<f64>() / e.len() as f64;
            e.iter().map(|x| (x - mean).abs()).fold(0.0, f64::max)
        };
        let (a, b) = (defect(1e-4), defect(5e-5));
        assert!(a > 0.0 && (a / b - 4.0).abs() < 0.2, "{a} {b}");
    }

    #[test]
    fn one_step_reduces_curvature_spread() {
        let m = octagon(1);
        let before = m.measure_curvature().unwrap().max_deviation();
        let mut eval = Evaluator::new(&m);
        let field = eval.field(m.u()).unwrap();
        let dt = 0.5 * RK4_STABILITY / eval.gershgorin(&field);
        let after = step(&m, dt).unwrap().measure_curvature().unwrap().max_deviation();
        assert!(after < before, "{after} >= {before}");
    }

    #[test]
    fn step_preserves_area() {
        let m = octagon(1).with_area(1.0).unwrap();
        let next = step(&m, 1e-5).unwrap();
        assert!((next.total_area().unwrap() - 1.0).abs() < 1e-14);
    }

    fn small_config() -> FlowConfig {
        FlowConfig { k: 4, spectrum_every: 20, ..FlowConfig::default() }
    }

    #[test]
    fn octagon_flow_converges_to_gauss_bonnet_value() {
        let m = octagon(1).with_area(1.0).unwrap();
        let trace = run_flow(&m, &small_config()).unwrap();
        assert!(trace.converged);
        let limit = &trace.limit().curvature;
        let r = -8.0 * PI;
        assert!(limit.max_deviation() <= 1e-4 * r.abs());
        assert!(limit.scalar.iter().all(|x| ((x - r) / r).abs() < 1e-3));
        for s in &trace.steps {
            assert!(((s.area - 1.0) / 1.0).abs() < 1e-9);
            assert!(((s.r - r) / r).abs() < 1e-9);
        }
        assert!(trace.limit().spectrum.is_some());
        assert!(trace.steps.windows(2).all(|w| w[1].t > w[0].t));
        assert!(trace.samples.windows(2).all(|w| w[1].t > w[0].t));
        assert!(contraction_violations(&trace).is_empty());
    }

    #[test]
    fn converged_input_stops_immediately() {
        let m = octagon(0);
        let trace = run_flow(&m, &small_config()).unwrap();
        let again = run_flow(&trace.final_metric(), &small_config()).unwrap();
        assert!(again.converged);
        assert_eq!(again.samples.len(), 1);
        assert_eq!(again.steps.len(), 1);
    }

    #[test]
    fn inadmissible_input_is_rejected_unless_warned() {
        let m = torus();
        assert!(matches!(run_flow(&m, &small_config()), Err(FlowError::Inadmissible(_))));
        let config = FlowConfig {
            admissibility: Admissibility::WarnOnly,
            t_max: 0.03,
            sample_every: 1,
            ..small_config()
        };
        let trace = run_flow(&m, &config).unwrap();
        assert!(!trace.admissible);
        for i in 1..trace.samples.len() - 1 {
            let res = curvature_pde_residual(&trace, i).unwrap();
            assert!(res.iter().all(|x| x.abs() < 1e-9));
        }
        assert!(curvature_pde_residual(&trace, 0).is_err());
    }

    #[test]
    fn integrator_is_fourth_order() {
        let m = octagon(0);
        let run = |steps: usize| {
            let dt = 0.04 / steps as f64;
            (0..steps).fold(m.clone(), |m, _| step(&m, dt).unwrap()).into_u()
        };
        let (a, b, c) = (run(10), run(20), run(80));
        let err = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        let ratio = err(&a, &c) / err(&b, &c);
        assert!(ratio > 12.0, "error ratio {ratio}");
    }

    #[test]
    fn time_map() {
        assert_eq!(rf_nrf_time_map(1.0, -2, 0.0).unwrap(), (0.0, 1.0));
        let (t, area) = rf_nrf_time_map(1.0, -2, 2f64.ln() / (8.0 * PI)).unwrap();
        assert!((t - 1.0 / (8.0 * PI)).abs() < 1e-15);
        assert!((area - 2.0).abs() < 1e-14);
        assert!(matches!(rf_nrf_time_map(1.0, 0, 1.0), Err(FlowError::NonNegativeEuler(0))));
        assert!(rf_nrf_time_map(1.0, -2, -1.0).is_err());
    }

    #[test]
    fn central_derivative_is_exact_on_parabolas() {
        let f = |t: f64| 3.0 * t * t - 2.0 * t + 1.0;
        let t = [0.1, 0.13, 0.2];
        let d = central_derivative(t, t.map(f));
        assert!((d - (6.0 * 0.13 - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(FlowConfig::default().validate().is_ok());
        let bad = FlowConfig { dt_min: 1.0, ..FlowConfig::default() };
        assert!(bad.validate().is_err());
        let bad = FlowConfig { safety: 1.0, ..FlowConfig::default() };
        assert!(bad.validate().is_err());
        let parsed: Result<FlowConfig, _> = serde_json::from_str(r#"{"dt_init": 0.1, "bogus": 1}"#);
        assert!(parsed.is_err());
    }
}
