use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use nrf_core::audit::{
    audit_trace_in_window, buser_comparison_check, consistency_chain, distortion_upper_bound,
    main_theorem_check, main_theorem_factor, nonzero_spectrum, series_checks, AuditConfig,
    AuditError, BoundReport, Check, Inputs, SurfaceSummary,
};
use nrf_core::flow::{rf_nrf_time_map, run_flow, FlowTrace};
use nrf_core::geometry::{perturb_metric, ConformalMetric, CurvatureWindow};
use nrf_core::mesh::{genus2_octagon, load_mesh};
use serde::{Deserialize, Serialize};

use crate::artifacts::{
    branch_set_from_rows, branches_of, fmt, read_spectrum_csv, read_trace_csv, spectrum_rows,
    write_plot_data, write_report_json, write_spectrum_csv, write_trace_csv, PLOT_DIR, REPORT_JSON,
    SPECTRUM_CSV, TRACE_CSV,
};
use crate::config::{AreaTarget, Emit, ExperimentConfig, MeshSource, Perturbation};

pub const AUDIT_JSON: &str = "audit.json";
pub const GEN_JSON: &str = "gen.json";

/// Result of a command that evaluates checks.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub satisfied: bool,
    pub summary: String,
}

pub fn load_base(source: &MeshSource) -> anyhow::Result<ConformalMetric> {
    let (mesh, lengths) = match source {
        MeshSource::Generator { level } => genus2_octagon(*level),
        MeshSource::Off { path } => {
            let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
            load_mesh(std::io::BufReader::new(file))?
        }
    };
    Ok(ConformalMetric::new(Arc::new(mesh), lengths)?)
}

pub fn target_area(config: &ExperimentConfig, chi: i64, p: &Perturbation) -> f64 {
    p.area.unwrap_or(match config.area {
        AreaTarget::Unit => 1.0,
        AreaTarget::MinusTwoPiChi => -2.0 * std::f64::consts::PI * chi as f64,
    })
}

/// Base metric rescaled to the target area and perturbed, with its
/// measured curvature window.
pub fn initial_metric(
    config: &ExperimentConfig,
    base: &ConformalMetric,
    p: &Perturbation,
) -> anyhow::Result<(ConformalMetric, CurvatureWindow)> {
    let chi = base.mesh().euler_characteristic();
    let area = target_area(config, chi, p);
    if !(area > 0.0) {
        bail!("area target {area} is not positive for Euler characteristic {chi}");
    }
    Ok(perturb_metric(&base.with_area(area)?, p.amplitude, p.seed)?)
}

#[derive(Clone, Debug, Serialize)]
pub struct MeshSummary {
    pub vertices: usize,
    pub edges: usize,
    pub triangles: usize,
    pub euler_characteristic: i64,
    pub genus: i64,
    pub mean_edge_length: f64,
}

impl MeshSummary {
    fn of(metric: &ConformalMetric) -> Self {
        let m = metric.mesh();
        Self {
            vertices: m.vertex_count(),
            edges: m.edge_count(),
            triangles: m.triangle_count(),
            euler_characteristic: m.euler_characteristic(),
            genus: m.genus(),
            mean_edge_length: metric.mean_edge_length(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SurfaceStart {
    pub perturbation: Perturbation,
    pub area: f64,
    pub r: f64,
    pub window: CurvatureWindow,
    pub admissible: bool,
}

fn surface_start(p: &Perturbation, metric: &ConformalMetric, window: CurvatureWindow) -> anyhow::Result<SurfaceStart> {
    let field = metric.measure_curvature()?;
    Ok(SurfaceStart {
        perturbation: *p,
        area: field.total_area,
        r: field.mean,
        window,
        admissible: window.admits(field.mean),
    })
}

#[derive(Serialize)]
struct GenReport<'a> {
    command: &'static str,
    config: &'a ExperimentConfig,
    mesh: MeshSummary,
    surfaces: Vec<SurfaceStart>,
}

/// Builds the initial surfaces and records their topology and windows.
pub fn cmd_gen(config: &ExperimentConfig, out: &Path) -> anyhow::Result<Outcome> {
    let base = load_base(&config.mesh)?;
    let mut surfaces = Vec::new();
    for p in &config.perturbations {
        let (m, window) = initial_metric(config, &base, p)?;
        surfaces.push(surface_start(p, &m, window)?);
    }
    let report = GenReport { command: "gen", config, mesh: MeshSummary::of(&base), surfaces };
    fs::create_dir_all(out)?;
    write_report_json(&out.join(GEN_JSON), &report)?;
    let mut summary = format!(
        "mesh: V = {}, E = {}, F = {}, chi = {}, genus = {}\n",
        report.mesh.vertices, report.mesh.edges, report.mesh.triangles, report.mesh.euler_characteristic, report.mesh.genus
    );
    for (i, s) in report.surfaces.iter().enumerate() {
        summary.push_str(&format!(
            "surface {}: area = {}, r = {}, alpha = {}, beta = {}, admissible = {}\n",
            i + 1,
            fmt(s.area),
            fmt(s.r),
            fmt(s.window.alpha),
            fmt(s.window.beta),
            s.admissible
        ));
    }
    Ok(Outcome { satisfied: true, summary })
}

#[derive(Clone, Debug, Serialize)]
pub struct FlowSummary {
    pub converged: bool,
    pub steps: usize,
    pub rejected_steps: usize,
    pub final_time: f64,
    pub final_max_deviation: f64,
    pub max_area_drift: f64,
}

impl FlowSummary {
    fn of(trace: &FlowTrace) -> Self {
        let last = trace.steps.last().expect("a trace has an initial step");
        Self {
            converged: trace.converged,
            steps: trace.steps.len() - 1,
            rejected_steps: trace.rejected_steps,
            final_time: last.t,
            final_max_deviation: last.max_deviation,
            max_area_drift: trace
                .steps
                .iter()
                .map(|s| ((s.area - trace.initial_area) / trace.initial_area).abs())
                .fold(0.0, f64::max),
        }
    }
}

#[derive(Serialize)]
struct FlowReport<'a> {
    command: &'static str,
    satisfied: bool,
    config: &'a ExperimentConfig,
    mesh: MeshSummary,
    start: SurfaceStart,
    flow: FlowSummary,
    report: BoundReport,
}

fn write_trace_artifacts(dir: &Path, trace: &FlowTrace, audit: &AuditConfig, emit: &Emit) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    if emit.trace_csv {
        write_trace_csv(&dir.join(TRACE_CSV), &trace.steps)?;
    }
    if emit.spectrum_csv || emit.plot_data {
        let set = branches_of(trace, audit.overlap_min, audit.gap_tol)?;
        let rows = spectrum_rows(trace, set.as_ref());
        if emit.spectrum_csv {
            write_spectrum_csv(&dir.join(SPECTRUM_CSV), &rows)?;
        }
        if emit.plot_data {
            write_plot_data(&dir.join(PLOT_DIR), &trace.steps, &rows)?;
        }
    }
    Ok(())
}

fn verdict_lines(summary: &mut String, prefix: &str, checks: &[Check]) {
    for c in checks {
        summary.push_str(&format!(
            "{prefix}{:<26} {}  worst margin {}\n",
            c.name,
            if c.satisfied { "PASS" } else { "FAIL" },
            fmt(c.worst_margin)
        ));
    }
}

/// One flow from the first perturbation, audited against its own window.
pub fn cmd_flow(config: &ExperimentConfig, out: &Path) -> anyhow::Result<Outcome> {
    let base = load_base(&config.mesh)?;
    let p = config.perturbations[0];
    let (metric, window) = initial_metric(config, &base, &p)?;
    let start = surface_start(&p, &metric, window)?;
    let trace = run_flow(&metric, &config.flow)?;
    let report = audit_trace_in_window(&trace, &config.audit, window)?;
    let satisfied = report.satisfied();
    write_trace_artifacts(out, &trace, &config.audit, &config.emit)?;
    let mut summary = format!(
        "flow: {} steps to t = {}, converged = {}\n",
        trace.steps.len() - 1,
        fmt(trace.limit().t),
        trace.converged
    );
    verdict_lines(&mut summary, "", &report.checks);
    if config.emit.report_json {
        let doc = FlowReport {
            command: "flow",
            satisfied,
            config,
            mesh: MeshSummary::of(&metric),
            start,
            flow: FlowSummary::of(&trace),
            report,
        };
        write_report_json(&out.join(REPORT_JSON), &doc)?;
    }
    Ok(Outcome { satisfied, summary })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Comparison {
    pub window: CurvatureWindow,
    pub r: f64,
    pub area: f64,
    pub q_hat: f64,
    pub delta_hat: f64,
    pub bound_factor: f64,
    pub spectra_start: [Vec<f64>; 2],
    pub spectra_end: [Vec<f64>; 2],
}

#[derive(Serialize)]
struct PairReport<'a> {
    command: &'static str,
    satisfied: bool,
    config: &'a ExperimentConfig,
    mesh: MeshSummary,
    starts: [SurfaceStart; 2],
    flows: [FlowSummary; 2],
    comparison: Comparison,
    comparison_checks: Vec<Check>,
    surfaces: [BoundReport; 2],
}

pub fn surface_dir(out: &Path, i: usize) -> PathBuf {
    out.join(format!("surface_{}", i + 1))
}

fn comparison_checks(c: &Comparison, genus: i64, tol_ratio: f64) -> Result<Vec<Check>, AuditError> {
    let summary = |i: usize| SurfaceSummary { genus, area: c.area, spectrum: c.spectra_start[i].clone() };
    Ok(vec![
        buser_comparison_check(&c.spectra_end[0], &c.spectra_end[1], c.delta_hat, tol_ratio)?,
        main_theorem_check(&summary(0), &summary(1), c.window, c.r, c.delta_hat, tol_ratio)?,
        consistency_chain(
            &c.spectra_start[0],
            &c.spectra_end[0],
            &c.spectra_start[1],
            &c.spectra_end[1],
            c.window,
            c.r,
            c.delta_hat,
        )?,
    ])
}

fn sorted_endpoints(trace: &FlowTrace, count: usize) -> anyhow::Result<(Vec<f64>, Vec<f64>)> {
    let snaps = trace.snapshots();
    let (first, last) = match (snaps.first(), trace.limit().spectrum.as_ref()) {
        (Some(f), Some(l)) if f.t == 0.0 => (f, l),
        _ => bail!("trace lacks a spectrum at its start or end"),
    };
    let count = count.min(first.eigenvalues.len() - 1);
    Ok((nonzero_spectrum(&first.eigenvalues, count), nonzero_spectrum(&last.eigenvalues, count)))
}

/// Two perturbed surfaces flowed concurrently, then compared through their
/// limits.
pub fn cmd_pair(config: &ExperimentConfig, out: &Path) -> anyhow::Result<Outcome> {
    if config.perturbations.len() != 2 {
        bail!("the pair pipeline needs exactly two perturbations, got {}", config.perturbations.len());
    }
    let base = load_base(&config.mesh)?;
    let chi = base.mesh().euler_characteristic();
    let [p1, p2] = [config.perturbations[0], config.perturbations[1]];
    let (a1, a2) = (target_area(config, chi, &p1), target_area(config, chi, &p2));
    if ((a1 - a2) / a1).abs() > 1e-9 {
        return Err(AuditError::HypothesisMismatch(format!("areas {a1} and {a2}")).into());
    }
    let (m1, w1) = initial_metric(config, &base, &p1)?;
    let (m2, w2) = initial_metric(config, &base, &p2)?;
    let window = w1.union(w2);
    let starts = [surface_start(&p1, &m1, w1)?, surface_start(&p2, &m2, w2)?];
    let r = starts[0].r;
    if !window.admits(r) {
        return Err(AuditError::InadmissibleWindow { alpha: window.alpha, beta: window.beta, r }.into());
    }

    let (t1, t2) = rayon::join(|| run_flow(&m1, &config.flow), || run_flow(&m2, &config.flow));
    let traces = [t1?, t2?];
    let reports = [
        audit_trace_in_window(&traces[0], &config.audit, window)?,
        audit_trace_in_window(&traces[1], &config.audit, window)?,
    ];
    let (q_hat, delta_hat) = distortion_upper_bound(&traces[0].final_metric(), &traces[1].final_metric())?;
    let (s1, e1) = sorted_endpoints(&traces[0], config.audit.ratio_count)?;
    let (s2, e2) = sorted_endpoints(&traces[1], config.audit.ratio_count)?;
    let comparison = Comparison {
        window,
        r,
        area: a1,
        q_hat,
        delta_hat,
        bound_factor: main_theorem_factor(window, r, delta_hat),
        spectra_start: [s1, s2],
        spectra_end: [e1, e2],
    };
    let genus = base.mesh().genus();
    let checks = comparison_checks(&comparison, genus, config.audit.tol_ratio)?;
    let satisfied = reports.iter().all(BoundReport::satisfied) && checks.iter().all(|c| c.satisfied);

    for (i, trace) in traces.iter().enumerate() {
        write_trace_artifacts(&surface_dir(out, i), trace, &config.audit, &config.emit)?;
    }
    let mut summary = format!(
        "pair: alpha = {}, beta = {}, r = {}, delta_hat = {}, bound factor = {}\n",
        fmt(window.alpha),
        fmt(window.beta),
        fmt(r),
        fmt(delta_hat),
        fmt(comparison.bound_factor)
    );
    for (i, rep) in reports.iter().enumerate() {
        verdict_lines(&mut summary, &format!("surface {}: ", i + 1), &rep.checks);
    }
    verdict_lines(&mut summary, "pair: ", &checks);
    if config.emit.report_json {
        let doc = PairReport {
            command: "pair",
            satisfied,
            config,
            mesh: MeshSummary::of(&m1),
            starts,
            flows: [FlowSummary::of(&traces[0]), FlowSummary::of(&traces[1])],
            comparison,
            comparison_checks: checks,
            surfaces: reports,
        };
        write_report_json(&out.join(REPORT_JSON), &doc)?;
    }
    Ok(Outcome { satisfied, summary })
}

/// `tau t area` rows of the reparametrisation between the unnormalised and
/// normalised flows.
pub fn cmd_timemap(area0: f64, chi: i64, taus: &[f64]) -> anyhow::Result<String> {
    let mut table = String::from("tau t area\n");
    for &tau in taus {
        let (t, area) = rf_nrf_time_map(area0, chi, tau)?;
        table.push_str(&format!("{} {} {}\n", fmt(tau), fmt(t), fmt(area)));
    }
    Ok(table)
}

#[derive(Deserialize)]
struct StoredReport {
    command: String,
    config: ExperimentConfig,
    #[serde(default)]
    report: Option<StoredBounds>,
    #[serde(default)]
    surfaces: Option<[StoredBounds; 2]>,
    #[serde(default)]
    comparison: Option<Comparison>,
    #[serde(default)]
    comparison_checks: Option<serde_json::Value>,
    #[serde(default)]
    mesh: Option<StoredMesh>,
}

#[derive(Deserialize)]
struct StoredBounds {
    inputs: Inputs,
    checks: serde_json::Value,
}

#[derive(Deserialize)]
struct StoredMesh {
    genus: i64,
}

#[derive(Serialize)]
struct AuditRerun {
    command: &'static str,
    source: String,
    satisfied: bool,
    matches_stored: bool,
    surfaces: Vec<Vec<Check>>,
    comparison_checks: Vec<Check>,
}

fn rerun_surface(dir: &Path, stored: &StoredBounds, audit: &AuditConfig) -> anyhow::Result<(Vec<Check>, bool)> {
    let steps = read_trace_csv(&dir.join(TRACE_CSV))?;
    let rows = read_spectrum_csv(&dir.join(SPECTRUM_CSV))?;
    let (first, last) = match (rows.first(), rows.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => bail!("{} has no rows", dir.join(SPECTRUM_CSV).display()),
    };
    let count = audit.ratio_count.min(first.sorted.len() - 1);
    let set = (rows.len() >= 2).then(|| branch_set_from_rows(&rows));
    let checks = series_checks(
        &steps,
        set.as_ref(),
        &first.sorted[1..=count],
        &last.sorted[1..=count],
        &stored.inputs,
        audit,
    )?;
    let same = serde_json::to_value(&checks)? == stored.checks;
    Ok((checks, same))
}

/// Re-evaluates every check from the CSV artifacts and the inputs recorded
/// in the report of a previous `flow` or `pair` run in `dir`.
pub fn cmd_audit(dir: &Path, out: &Path) -> anyhow::Result<Outcome> {
    let path = dir.join(REPORT_JSON);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let stored: StoredReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let audit = &stored.config.audit;
    let mut surfaces = Vec::new();
    let mut matches = true;
    let mut comparison_checks = Vec::new();
    match (stored.command.as_str(), &stored.report, &stored.surfaces) {
        ("flow", Some(report), _) => {
            let (checks, same) = rerun_surface(dir, report, audit)?;
            surfaces.push(checks);
            matches &= same;
        }
        ("pair", _, Some(reports)) => {
            for (i, report) in reports.iter().enumerate() {
                let (checks, same) = rerun_surface(&surface_dir(dir, i), report, audit)?;
                surfaces.push(checks);
                matches &= same;
            }
            let comparison = stored.comparison.as_ref().context("pair report lacks the comparison")?;
            let genus = stored.mesh.as_ref().context("pair report lacks the mesh summary")?.genus;
            comparison_checks = self::comparison_checks(comparison, genus, audit.tol_ratio)?;
            matches &= Some(serde_json::to_value(&comparison_checks)?) == stored.comparison_checks;
        }
        (other, _, _) => bail!("{} is not a flow or pair report (command {other:?})", path.display()),
    }
    let satisfied = surfaces.iter().flatten().chain(&comparison_checks).all(|c| c.satisfied);
    let mut summary = String::new();
    for (i, checks) in surfaces.iter().enumerate() {
        verdict_lines(&mut summary, &format!("surface {}: ", i + 1), checks);
    }
    verdict_lines(&mut summary, "pair: ", &comparison_checks);
    summary.push_str(&format!("matches stored report: {matches}\n"));
    let doc = AuditRerun {
        command: "audit",
        source: dir.display().to_string(),
        satisfied,
        matches_stored: matches,
        surfaces,
        comparison_checks,
    };
    fs::create_dir_all(out)?;
    write_report_json(&out.join(AUDIT_JSON), &doc)?;
    Ok(Outcome { satisfied, summary })
}
