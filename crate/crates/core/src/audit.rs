//! Checks of the curvature envelopes, the maximum-curvature ODE, the
//! log-derivative corridor and the eigenvalue ratio bounds.
//!
//! Every check reports a margin that is negative exactly when the check
//! fails; margins already include the tolerance. The witness is the
//! (time, vertex or index) pair where the margin is smallest.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{contraction_violations, FlowTrace, StepStats};
use crate::geometry::{ConformalMetric, CurvatureWindow, GeometryError};
use crate::tracker::{
    branch_log_derivative, evolution_formula_residual, median, normalization_derivative_residual,
    track_branches, volume_form_residual, BranchSet, Scheme, TrackError,
};

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("curvature window alpha = {alpha}, beta = {beta} does not satisfy alpha < r = {r} < beta < 0")]
    InadmissibleWindow { alpha: f64, beta: f64, r: f64 },
    #[error("need at least {needed} samples, got {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("eigenvalue lists differ in length ({0} and {1})")]
    LengthMismatch(usize, usize),
    #[error("eigenvalue {index} is not positive ({value})")]
    NonPositive { index: usize, value: f64 },
    #[error("metrics live on different meshes")]
    MeshMismatch,
    #[error("hypotheses differ: {0}")]
    HypothesisMismatch(String),
    #[error("trace has no spectrum at {0}")]
    MissingSpectrum(&'static str),
    #[error("invalid audit configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    /// Discretisation constant of the curvature slack
    /// `c_disc * h^2 / A * |r|`.
    pub c_disc: f64,
    /// Additive slack on eigenvalue ratios.
    pub tol_ratio: f64,
    pub overlap_min: f64,
    /// Relative spectral gap below which a branch is flagged.
    pub gap_tol: f64,
    /// Nonzero branches covered by the corridor and evolution statistics.
    pub branches: usize,
    /// Sorted nonzero eigenvalues covered by the ratio checks.
    pub ratio_count: usize,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self { c_disc: 10.0, tol_ratio: 0.02, overlap_min: 0.5, gap_tol: 1e-3, branches: 5, ratio_count: 10 }
    }
}

impl AuditConfig {
    pub fn validate(&self) -> Result<(), AuditError> {
        for (name, v) in [("c_disc", self.c_disc), ("tol_ratio", self.tol_ratio), ("gap_tol", self.gap_tol)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(AuditError::InvalidConfig(format!("{name} = {v}")));
            }
        }
        if !(self.overlap_min > 0.0 && self.overlap_min <= 1.0) {
            return Err(AuditError::InvalidConfig(format!("overlap_min = {}", self.overlap_min)));
        }
        if self.branches == 0 || self.ratio_count == 0 {
            return Err(AuditError::InvalidConfig("branch and ratio counts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Witness {
    /// Absent for comparisons between spectra.
    pub t: Option<f64>,
    /// Vertex for curvature checks, step for the area check, eigenvalue
    /// index (1 = first nonzero) or branch for spectral checks.
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub inequality: String,
    pub satisfied: bool,
    pub worst_margin: f64,
    pub witness: Option<Witness>,
    pub tolerance_used: f64,
    pub evaluated: usize,
    pub skipped: usize,
    /// Lower and upper bound factors, for ratio checks.
    pub bounds: Option<[f64; 2]>,
}

impl Check {
    fn new(name: &str, inequality: &str, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            inequality: inequality.into(),
            satisfied: true,
            worst_margin: f64::INFINITY,
            witness: None,
            tolerance_used: tolerance,
            evaluated: 0,
            skipped: 0,
            bounds: None,
        }
    }

    fn record(&mut self, margin: f64, t: Option<f64>, index: usize) {
        self.evaluated += 1;
        // A NaN margin counts as the worst possible one.
        let worse = margin < self.worst_margin || (margin.is_nan() && !self.worst_margin.is_nan());
        if self.witness.is_none() || worse {
            self.worst_margin = margin;
            self.witness = Some(Witness { t, index });
        }
        if !(margin >= 0.0) {
            self.satisfied = false;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inputs {
    pub alpha: f64,
    pub beta: f64,
    pub r: f64,
    pub area: f64,
    pub mean_edge_length: f64,
    pub delta_hat: Option<f64>,
    pub c_disc: f64,
    pub tol_env: f64,
    pub tol_ode: f64,
    pub tol_ratio: f64,
    pub convergence_tol: f64,
    pub area_tolerance: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub converged: bool,
    pub steps: usize,
    pub final_time: f64,
    pub evolution_residual_median: Option<f64>,
    pub evolution_residual_max: Option<f64>,
    pub evolution_residual_count: usize,
    pub normalization_residual_median: Option<f64>,
    pub volume_form_error_median: Option<f64>,
    pub contraction_violations: usize,
    pub spectrum_failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub inputs: Inputs,
    pub checks: Vec<Check>,
    pub diagnostics: Option<Diagnostics>,
}

impl BoundReport {
    pub fn satisfied(&self) -> bool {
        self.checks.iter().all(|c| c.satisfied)
    }
}

/// `c_disc * h^2 / A * |r|` in curvature units.
pub fn envelope_tolerance(c_disc: f64, mean_edge_length: f64, area: f64, r: f64) -> f64 {
    c_disc * mean_edge_length * mean_edge_length / area * r.abs()
}

fn admissible(window: CurvatureWindow, r: f64) -> Result<(), AuditError> {
    if window.admits(r) {
        Ok(())
    } else {
        Err(AuditError::InadmissibleWindow { alpha: window.alpha, beta: window.beta, r })
    }
}

/// The two curvature envelopes and the ceiling `R <= beta`, evaluated at
/// the extreme vertices of every step. Each step's `r` is used.
pub fn envelope_check(
    steps: &[StepStats],
    window: CurvatureWindow,
    tol_env: f64,
) -> Result<Vec<Check>, AuditError> {
    let r0 = steps.first().ok_or(AuditError::TooFewSamples { needed: 1, found: 0 })?.r;
    admissible(window, r0)?;
    let CurvatureWindow { alpha, beta } = window;
    let mut lower = Check::new("envelope_lower", "r - R >= r exp(beta t)", tol_env);
    let mut upper = Check::new("envelope_upper", "r - R <= -alpha exp(r t)", tol_env);
    let mut ceiling = Check::new("curvature_ceiling", "R <= beta", tol_env);
    for s in steps {
        lower.record(s.r - s.r_max - s.r * (beta * s.t).exp() + tol_env, Some(s.t), s.argmax);
        upper.record(-alpha * (s.r * s.t).exp() - (s.r - s.r_min) + tol_env, Some(s.t), s.argmin);
        ceiling.record(beta - s.r_max + tol_env, Some(s.t), s.argmax);
    }
    Ok(vec![lower, upper, ceiling])
}

/// `max|R - r| <= tol |r|` at the last step.
pub fn convergence_check(steps: &[StepStats], tol: f64) -> Result<Check, AuditError> {
    let last = steps.last().ok_or(AuditError::TooFewSamples { needed: 1, found: 0 })?;
    let mut check = Check::new("convergence", "max|R - r| <= convergence_tol |r|", tol);
    let index = if last.r_max - last.r >= last.r - last.r_min { last.argmax } else { last.argmin };
    check.record(tol * last.r.abs() - last.max_deviation, Some(last.t), index);
    Ok(check)
}

/// `|A(t) - A(0)| <= tol A(0)` at every step.
pub fn area_drift_check(steps: &[StepStats], tol: f64) -> Result<Check, AuditError> {
    let a0 = steps.first().ok_or(AuditError::TooFewSamples { needed: 1, found: 0 })?.area;
    let mut check = Check::new("area_drift", "|A(t) - A(0)| <= area_tolerance A(0)", tol);
    for s in steps {
        check.record(tol - ((s.area - a0) / a0).abs(), Some(s.t), s.step);
    }
    Ok(check)
}

/// Forward differences of `R_max` against the trapezoidal average of
/// `R_max (R_max - r)` over each step.
pub fn rmax_ode_check(steps: &[StepStats], tol_ode: f64) -> Result<Check, AuditError> {
    if steps.len() < 3 {
        return Err(AuditError::TooFewSamples { needed: 3, found: steps.len() });
    }
    let mut check = Check::new("rmax_ode", "dR_max/dt <= R_max (R_max - r)", tol_ode);
    for w in steps.windows(2) {
        let slope = (w[1].r_max - w[0].r_max) / (w[1].t - w[0].t);
        let bound = 0.5 * (w[0].r_max * (w[0].r_max - w[0].r) + w[1].r_max * (w[1].r_max - w[1].r));
        check.record(bound + tol_ode - slope, Some(w[0].t), w[0].argmax);
    }
    Ok(check)
}

/// `alpha exp(r t) <= d log(lambda)/dt <= -r exp(beta t)` on unflagged
/// points of branches `1..=branches`. The tolerance at each point is
/// `tol_corr` plus the gap between the central and one-sided differences.
pub fn log_derivative_corridor_check(
    set: &BranchSet,
    branches: usize,
    window: CurvatureWindow,
    r: f64,
    tol_corr: f64,
) -> Result<Check, AuditError> {
    admissible(window, r)?;
    let mut check = Check::new("log_derivative_corridor", "alpha exp(r t) <= dlog(lambda)/dt <= -r exp(beta t)", tol_corr);
    let last = set.times.len() - 1;
    for b in 1..=branches.min(set.branches.len() - 1) {
        for i in 0..=last {
            let scheme = if i == 0 || i == last { Scheme::OneSided } else { Scheme::Central };
            let d = match branch_log_derivative(set, b, i, scheme) {
                Ok(d) => d,
                Err(TrackError::Crossing { .. }) => {
                    check.skipped += 1;
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let fd_error = match scheme {
                Scheme::Central => branch_log_derivative(set, b, i, Scheme::OneSided)
                    .map(|o| (o - d).abs())
                    .unwrap_or(0.0),
                Scheme::OneSided => 0.0,
            };
            let t = set.times[i];
            let tol = tol_corr + fd_error;
            let margin = (d - window.alpha * (r * t).exp()).min(-r * (window.beta * t).exp() - d) + tol;
            check.record(margin, Some(t), b);
        }
    }
    Ok(check)
}

fn positive(values: &[f64]) -> Result<(), AuditError> {
    match values.iter().position(|v| !(*v > 0.0)) {
        Some(i) => Err(AuditError::NonPositive { index: i + 1, value: values[i] }),
        None => Ok(()),
    }
}

fn ratio_check(
    name: &str,
    inequality: &str,
    num: &[f64],
    den: &[f64],
    bounds: [f64; 2],
    tol: f64,
) -> Result<Check, AuditError> {
    if num.len() != den.len() {
        return Err(AuditError::LengthMismatch(num.len(), den.len()));
    }
    positive(num)?;
    positive(den)?;
    let mut check = Check::new(name, inequality, tol);
    check.bounds = Some(bounds);
    for (i, (a, b)) in num.iter().zip(den).enumerate() {
        let q = a / b;
        check.record((q - bounds[0]).min(bounds[1] - q) + tol, None, i + 1);
    }
    Ok(check)
}

/// `exp(-alpha / r)` and `exp(r / beta)`.
pub fn ratio_bounds(window: CurvatureWindow, r: f64) -> [f64; 2] {
    [(-window.alpha / r).exp(), (r / window.beta).exp()]
}

/// `exp(-alpha/r) <= mu_i(end) / mu_i(start) <= exp(r/beta)` for matched
/// sorted nonzero eigenvalues.
pub fn ratio_bound_check(
    mu_start: &[f64],
    mu_end: &[f64],
    window: CurvatureWindow,
    r: f64,
    tol_ratio: f64,
) -> Result<Check, AuditError> {
    admissible(window, r)?;
    ratio_check(
        "ratio_bound",
        "exp(-alpha/r) <= mu_i(t)/mu_i(0) <= exp(r/beta)",
        mu_end,
        mu_start,
        ratio_bounds(window, r),
        tol_ratio,
    )
}

/// Largest edge-length ratio `q` between two metrics on the same mesh, and
/// `log q`.
pub fn distortion_upper_bound(m1: &ConformalMetric, m2: &ConformalMetric) -> Result<(f64, f64), AuditError> {
    if !std::sync::Arc::ptr_eq(m1.mesh(), m2.mesh()) && m1.mesh() != m2.mesh() {
        return Err(AuditError::MeshMismatch);
    }
    let (l1, l2) = (m1.current_lengths()?, m2.current_lengths()?);
    let q = l1.iter().zip(&l2).map(|(a, b)| (a / b).max(b / a)).fold(1.0, f64::max);
    Ok((q, q.ln()))
}

/// `exp(-4 delta) lambda_n(S2) <= lambda_n(S1) <= exp(4 delta) lambda_n(S2)`.
pub fn buser_comparison_check(spec1: &[f64], spec2: &[f64], delta: f64, tol_ratio: f64) -> Result<Check, AuditError> {
    if !(delta >= 0.0) {
        return Err(AuditError::InvalidConfig(format!("delta = {delta}")));
    }
    ratio_check(
        "buser_comparison",
        "exp(-4 delta) <= lambda_n(S1)/lambda_n(S2) <= exp(4 delta)",
        spec1,
        spec2,
        [(-4.0 * delta).exp(), (4.0 * delta).exp()],
        tol_ratio,
    )
}

/// Genus, area and sorted nonzero spectrum of one initial surface.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SurfaceSummary {
    pub genus: i64,
    pub area: f64,
    pub spectrum: Vec<f64>,
}

/// `exp(alpha/r + r/beta + 4 delta)`.
pub fn main_theorem_factor(window: CurvatureWindow, r: f64, delta: f64) -> f64 {
    (window.alpha / r + r / window.beta + 4.0 * delta).exp()
}

/// `lambda_n(M1) / lambda_n(M2)` within `exp(+-(alpha/r + r/beta + 4 delta))`.
pub fn main_theorem_check(
    m1: &SurfaceSummary,
    m2: &SurfaceSummary,
    window: CurvatureWindow,
    r: f64,
    delta: f64,
    tol_ratio: f64,
) -> Result<Check, AuditError> {
    if m1.genus != m2.genus {
        return Err(AuditError::HypothesisMismatch(format!("genus {} and {}", m1.genus, m2.genus)));
    }
    if ((m1.area - m2.area) / m1.area).abs() > 1e-9 {
        return Err(AuditError::HypothesisMismatch(format!("areas {} and {}", m1.area, m2.area)));
    }
    admissible(window, r)?;
    if !(delta >= 0.0) {
        return Err(AuditError::InvalidConfig(format!("delta = {delta}")));
    }
    let factor = main_theorem_factor(window, r, delta);
    ratio_check(
        "main_theorem",
        "exp(-(alpha/r + r/beta + 4 delta)) <= lambda_n(M1)/lambda_n(M2) <= exp(alpha/r + r/beta + 4 delta)",
        &m1.spectrum,
        &m2.spectrum,
        [1.0 / factor, factor],
        tol_ratio,
    )
}

/// The ratio bounds on both surfaces and the comparison of the limits
/// imply the bound between the initial surfaces. Evaluated without slack,
/// where the implication is exact.
#[allow(clippy::too_many_arguments)]
pub fn consistency_chain(
    start1: &[f64],
    end1: &[f64],
    start2: &[f64],
    end2: &[f64],
    window: CurvatureWindow,
    r: f64,
    delta: f64,
) -> Result<Check, AuditError> {
    let fi1 = ratio_bound_check(start1, end1, window, r, 0.0)?;
    let fi2 = ratio_bound_check(start2, end2, window, r, 0.0)?;
    let buser = buser_comparison_check(end1, end2, delta, 0.0)?;
    let m1 = SurfaceSummary { genus: 0, area: 1.0, spectrum: start1.to_vec() };
    let m2 = SurfaceSummary { genus: 0, area: 1.0, spectrum: start2.to_vec() };
    let main = main_theorem_check(&m1, &m2, window, r, delta, 0.0)?;
    let premises = fi1.satisfied && fi2.satisfied && buser.satisfied;
    let mut check = Check::new("consistency_chain", "ratio bounds and limit comparison imply the initial bound", 0.0);
    check.evaluated = 1;
    check.satisfied = !premises || main.satisfied;
    check.worst_margin = if check.satisfied { 0.0 } else { main.worst_margin };
    check.witness = main.witness;
    Ok(check)
}

/// First `count` sorted nonzero eigenvalues (the smallest one is dropped).
pub fn nonzero_spectrum(eigenvalues: &[f64], count: usize) -> Vec<f64> {
    let mut v = eigenvalues.to_vec();
    v.sort_by(f64::total_cmp);
    v.into_iter().skip(1).take(count).collect()
}

/// Slacks and window for auditing `trace`.
pub fn trace_inputs(trace: &FlowTrace, config: &AuditConfig, window: CurvatureWindow) -> Inputs {
    let r = trace.r();
    let h = trace.initial.mean_edge_length();
    let tol_env = envelope_tolerance(config.c_disc, h, trace.initial_area, r);
    Inputs {
        alpha: window.alpha,
        beta: window.beta,
        r,
        area: trace.initial_area,
        mean_edge_length: h,
        delta_hat: None,
        c_disc: config.c_disc,
        tol_env,
        tol_ode: tol_env * r.abs(),
        tol_ratio: config.tol_ratio,
        convergence_tol: trace.config.convergence_tol,
        area_tolerance: trace.config.area_tolerance,
    }
}

/// The single-trace checks on curvature statistics, tracked branches and
/// the first and last sorted nonzero spectra. Shared by in-memory audits
/// and audits of stored artifacts.
pub fn series_checks(
    steps: &[StepStats],
    branches: Option<&BranchSet>,
    mu_start: &[f64],
    mu_end: &[f64],
    inputs: &Inputs,
    config: &AuditConfig,
) -> Result<Vec<Check>, AuditError> {
    config.validate()?;
    let window = CurvatureWindow { alpha: inputs.alpha, beta: inputs.beta };
    let mut checks = vec![
        convergence_check(steps, inputs.convergence_tol)?,
        area_drift_check(steps, inputs.area_tolerance)?,
    ];
    checks.extend(envelope_check(steps, window, inputs.tol_env)?);
    checks.push(rmax_ode_check(steps, inputs.tol_ode)?);
    if let Some(set) = branches.filter(|s| s.times.len() >= 2) {
        checks.push(log_derivative_corridor_check(set, config.branches, window, inputs.r, inputs.tol_env)?);
    }
    checks.push(ratio_bound_check(mu_start, mu_end, window, inputs.r, inputs.tol_ratio)?);
    Ok(checks)
}

/// All single-trace checks plus residual statistics, against the window
/// measured at the start of the trace.
pub fn audit_trace(trace: &FlowTrace, config: &AuditConfig) -> Result<BoundReport, AuditError> {
    audit_trace_in_window(trace, config, trace.window())
}

/// As [`audit_trace`] with an explicit curvature window, which must contain
/// the one measured on the trace for the checks to be meaningful.
pub fn audit_trace_in_window(
    trace: &FlowTrace,
    config: &AuditConfig,
    window: CurvatureWindow,
) -> Result<BoundReport, AuditError> {
    config.validate()?;
    let inputs = trace_inputs(trace, config, window);
    let snapshots = trace.snapshots();
    let first = trace.samples[0].spectrum.as_ref().ok_or(AuditError::MissingSpectrum("t = 0"))?;
    let last = trace.limit().spectrum.as_ref().ok_or(AuditError::MissingSpectrum("the final time"))?;
    let mut diagnostics = Diagnostics {
        converged: trace.converged,
        steps: trace.steps.len() - 1,
        final_time: trace.limit().t,
        contraction_violations: contraction_violations(trace).len(),
        spectrum_failures: trace.spectrum_failures.len(),
        ..Diagnostics::default()
    };
    let set = if snapshots.len() >= 2 {
        Some(track_branches(&snapshots, config.overlap_min, config.gap_tol)?)
    } else {
        None
    };
    if let Some(set) = &set {
        let (mut evolution, mut normalization) = (Vec::new(), Vec::new());
        for b in 1..=config.branches.min(set.branches.len() - 1) {
            for i in 1..set.times.len().saturating_sub(1) {
                if let Ok(e) = evolution_formula_residual(trace, set, &snapshots, b, i) {
                    evolution.push(e.relative_residual);
                }
                if let Ok(e) = normalization_derivative_residual(trace, set, &snapshots, b, i) {
                    normalization.push(e.relative_residual);
                }
            }
        }
        diagnostics.evolution_residual_count = evolution.len();
        diagnostics.evolution_residual_max = evolution.iter().copied().reduce(f64::max);
        diagnostics.evolution_residual_median = median(evolution);
        diagnostics.normalization_residual_median = median(normalization);
    }
    let volume: Vec<f64> = (1..trace.samples.len().saturating_sub(1))
        .flat_map(|i| {
            let field = &trace.samples[i].curvature;
            volume_form_residual(trace, i)
                .unwrap_or_default()
                .into_iter()
                .enumerate()
                .map(move |(v, res)| (res / ((field.mean - field.scalar[v]) * field.dual_area[v])).abs())
        })
        .collect();
    diagnostics.volume_form_error_median = median(volume);

    let count = config.ratio_count.min(first.eigenvalues.len() - 1);
    let checks = series_checks(
        &trace.steps,
        set.as_ref(),
        &nonzero_spectrum(&first.eigenvalues, count),
        &nonzero_spectrum(&last.eigenvalues, count),
        &inputs,
        config,
    )?;
    Ok(BoundReport { inputs, checks, diagnostics: Some(diagnostics) })
}
