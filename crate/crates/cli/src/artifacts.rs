//! CSV, JSON and plot-text artifacts. Floats are written with 17
//! significant digits so that every value reads back bit-exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context};
use nrf_core::flow::{FlowTrace, StepStats};
use nrf_core::tracker::{track_branches, Branch, BranchSet};
use serde::Serialize;

pub const TRACE_CSV: &str = "trace.csv";
pub const SPECTRUM_CSV: &str = "spectrum.csv";
pub const REPORT_JSON: &str = "report.json";
pub const PLOT_DIR: &str = "plot";

const TRACE_HEADER: [&str; 10] =
    ["step", "t", "dt", "area", "r", "R_min", "R_max", "max_abs_R_minus_r", "argmin", "argmax"];

pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_f64(s: &str, what: &str) -> anyhow::Result<f64> {
    s.trim().parse().with_context(|| format!("invalid {what} value {s:?}"))
}

fn parse_usize(s: &str, what: &str) -> anyhow::Result<usize> {
    s.trim().parse().with_context(|| format!("invalid {what} value {s:?}"))
}

pub fn write_trace_csv(path: &Path, steps: &[StepStats]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(TRACE_HEADER)?;
    for s in steps {
        w.write_record([
            s.step.to_string(),
            fmt(s.t),
            fmt(s.dt),
            fmt(s.area),
            fmt(s.r),
            fmt(s.r_min),
            fmt(s.r_max),
            fmt(s.max_deviation),
            s.argmin.to_string(),
            s.argmax.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv(path: &Path) -> anyhow::Result<Vec<StepStats>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    if r.headers()?.iter().ne(TRACE_HEADER) {
        bail!("{} does not have the trace header", path.display());
    }
    let mut steps = Vec::new();
    for record in r.records() {
        let rec = record?;
        let f = |i: usize| parse_f64(&rec[i], TRACE_HEADER[i]);
        steps.push(StepStats {
            step: parse_usize(&rec[0], "step")?,
            t: f(1)?,
            dt: f(2)?,
            area: f(3)?,
            r: f(4)?,
            r_min: f(5)?,
            r_max: f(6)?,
            max_deviation: f(7)?,
            argmin: parse_usize(&rec[8], "argmin")?,
            argmax: parse_usize(&rec[9], "argmax")?,
        });
    }
    Ok(steps)
}

/// One spectral snapshot: eigenvalues in branch order with crossing flags,
/// and in ascending order.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumRow {
    pub step: usize,
    pub t: f64,
    pub branch: Vec<f64>,
    pub flagged: Vec<bool>,
    pub sorted: Vec<f64>,
}

pub fn spectrum_rows(trace: &FlowTrace, set: Option<&BranchSet>) -> Vec<SpectrumRow> {
    trace
        .samples
        .iter()
        .filter_map(|s| s.spectrum.as_ref().map(|snap| (s.step, snap)))
        .enumerate()
        .map(|(i, (step, snap))| {
            let mut sorted = snap.eigenvalues.clone();
            sorted.sort_by(f64::total_cmp);
            let (branch, flagged) = match set {
                Some(set) => (
                    set.branches.iter().map(|b| b.values[i]).collect(),
                    set.branches.iter().map(|b| b.flagged[i]).collect(),
                ),
                None => (sorted.clone(), vec![false; sorted.len()]),
            };
            SpectrumRow { step, t: snap.t, branch, flagged, sorted }
        })
        .collect()
}

/// Tracks the branches of a trace, or `None` with fewer than two spectra.
pub fn branches_of(trace: &FlowTrace, overlap_min: f64, gap_tol: f64) -> anyhow::Result<Option<BranchSet>> {
    let snaps = trace.snapshots();
    if snaps.len() < 2 {
        return Ok(None);
    }
    Ok(Some(track_branches(&snaps, overlap_min, gap_tol)?))
}

fn spectrum_header(k: usize) -> Vec<String> {
    let mut h = vec!["step".to_string(), "t".to_string()];
    h.extend((0..k).map(|i| format!("branch_{i}")));
    h.extend((0..k).map(|i| format!("flagged_{i}")));
    h.extend((0..k).map(|i| format!("sorted_{i}")));
    h
}

pub fn write_spectrum_csv(path: &Path, rows: &[SpectrumRow]) -> anyhow::Result<()> {
    let k = rows.first().map_or(0, |r| r.sorted.len());
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(spectrum_header(k))?;
    for row in rows {
        let mut rec = vec![row.step.to_string(), fmt(row.t)];
        rec.extend(row.branch.iter().map(|&x| fmt(x)));
        rec.extend(row.flagged.iter().map(|&f| u8::from(f).to_string()));
        rec.extend(row.sorted.iter().map(|&x| fmt(x)));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_spectrum_csv(path: &Path) -> anyhow::Result<Vec<SpectrumRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let width = r.headers()?.len();
    if width < 2 || (width - 2) % 3 != 0 || r.headers()?.iter().ne(spectrum_header((width - 2) / 3)) {
        bail!("{} does not have the spectrum header", path.display());
    }
    let k = (width - 2) / 3;
    let mut rows = Vec::new();
    for record in r.records() {
        let rec = record?;
        let values = |from: usize| -> anyhow::Result<Vec<f64>> {
            (from..from + k).map(|i| parse_f64(&rec[i], "eigenvalue")).collect()
        };
        let flagged = (2 + k..2 + 2 * k)
            .map(|i| match &rec[i] {
                "0" => Ok(false),
                "1" => Ok(true),
                other => bail!("invalid flag {other:?}"),
            })
            .collect::<anyhow::Result<_>>()?;
        rows.push(SpectrumRow {
            step: parse_usize(&rec[0], "step")?,
            t: parse_f64(&rec[1], "t")?,
            branch: values(2)?,
            flagged,
            sorted: values(2 + 2 * k)?,
        });
    }
    Ok(rows)
}

/// Rebuilds branch values and flags from stored rows. Eigenvectors are not
/// stored, so columns, signs and overlaps are placeholders.
pub fn branch_set_from_rows(rows: &[SpectrumRow]) -> BranchSet {
    let k = rows.first().map_or(0, |r| r.branch.len());
    let branches = (0..k)
        .map(|b| Branch {
            values: rows.iter().map(|r| r.branch[b]).collect(),
            columns: vec![b; rows.len()],
            signs: vec![1.0; rows.len()],
            overlaps: vec![1.0; rows.len()],
            flagged: rows.iter().map(|r| r.flagged[b]).collect(),
        })
        .collect();
    BranchSet {
        times: rows.iter().map(|r| r.t).collect(),
        branches,
        relabeled: rows.iter().map(|r| r.sorted[1..].to_vec()).collect(),
    }
}

fn write_columns(path: &Path, points: impl Iterator<Item = (f64, f64)>) -> anyhow::Result<()> {
    let mut out = String::new();
    for (x, y) in points {
        out.push_str(&fmt(x));
        out.push(' ');
        out.push_str(&fmt(y));
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// Two-column `t value` files: curvature extremes, deviation and one file
/// per branch.
pub fn write_plot_data(dir: &Path, steps: &[StepStats], rows: &[SpectrumRow]) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    write_columns(&dir.join("r_min.txt"), steps.iter().map(|s| (s.t, s.r_min)))?;
    write_columns(&dir.join("r_max.txt"), steps.iter().map(|s| (s.t, s.r_max)))?;
    write_columns(&dir.join("max_deviation.txt"), steps.iter().map(|s| (s.t, s.max_deviation)))?;
    let k = rows.first().map_or(0, |r| r.branch.len());
    for b in 0..k {
        write_columns(&dir.join(format!("lambda_{b}.txt")), rows.iter().map(|r| (r.t, r.branch[b])))?;
    }
    Ok(())
}

/// Pretty JSON with `generated_at_unix` on its own line directly after the
/// opening brace; everything else is a deterministic function of `value`.
pub fn write_report_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let body = serde_json::to_string_pretty(value)?;
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let rest = body.strip_prefix('{').context("report must be a JSON object")?;
    let sep = if rest.trim() == "}" { "" } else { "," };
    let mut file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write!(file, "{{\n  \"generated_at_unix\": {stamp}{sep}{rest}\n")?;
    Ok(())
}

/// Report text with the timestamp line removed.
pub fn strip_timestamp(report: &str) -> String {
    report
        .lines()
        .filter(|l| !l.trim_start().starts_with("\"generated_at_unix\""))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(i: usize) -> StepStats {
        let x = (i as f64 + 0.1).sqrt();
        StepStats {
            step: i,
            t: x / 7.0,
            dt: 1.0 / 3.0,
            area: 1.0 + 1e-15 * x,
            r: -8.0 * std::f64::consts::PI,
            r_min: -30.0 - x,
            r_max: -20.0 + 1e-300 * x,
            argmin: i * 3,
            argmax: i + 1,
            max_deviation: std::f64::consts::E * x,
        }
    }

    #[test]
    fn trace_csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(TRACE_CSV);
        let steps: Vec<StepStats> = (0..50).map(stats).collect();
        write_trace_csv(&path, &steps).unwrap();
        assert_eq!(read_trace_csv(&path).unwrap(), steps);
    }

    #[test]
    fn spectrum_csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(SPECTRUM_CSV);
        let rows: Vec<SpectrumRow> = (0..4)
            .map(|i| SpectrumRow {
                step: 10 * i,
                t: i as f64 / 3.0,
                branch: vec![1e-17, 2.0 + i as f64, 1.0 / 7.0],
                flagged: vec![false, i == 2, false],
                sorted: vec![1e-17, 1.0 / 7.0, 2.0 + i as f64],
            })
            .collect();
        write_spectrum_csv(&path, &rows).unwrap();
        let back = read_spectrum_csv(&path).unwrap();
        assert_eq!(back, rows);
        let set = branch_set_from_rows(&back);
        assert_eq!(set.branches[1].flagged, vec![false, false, true, false]);
        assert_eq!(set.relabeled[0], vec![1.0 / 7.0, 2.0]);
    }

    #[test]
    fn wrong_headers_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(read_trace_csv(&path).is_err());
        assert!(read_spectrum_csv(&path).is_err());
    }

    #[test]
    fn timestamp_sits_on_its_own_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(REPORT_JSON);
        write_report_json(&path, &serde_json::json!({"a": 1, "b": [1.5]})).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["a"], 1);
        assert!(value["generated_at_unix"].is_u64());
        let stripped = strip_timestamp(&text);
        assert!(!stripped.contains("generated_at"));
        assert_eq!(stripped.lines().nth(1).unwrap().trim(), "\"a\": 1,");
        write_report_json(&path, &serde_json::json!({})).unwrap();
        let empty: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        assert!(empty["generated_at_unix"].is_u64());
    }

    #[test]
    fn plot_files_have_two_columns() {
        let dir = tempfile::tempdir().unwrap();
        let steps: Vec<StepStats> = (0..3).map(stats).collect();
        let rows = vec![SpectrumRow { step: 0, t: 0.0, branch: vec![0.0, 3.0], flagged: vec![false; 2], sorted: vec![0.0, 3.0] }];
        write_plot_data(dir.path(), &steps, &rows).unwrap();
        let text = fs::read_to_string(dir.path().join("lambda_1.txt")).unwrap();
        assert_eq!(text, format!("{} {}\n", fmt(0.0), fmt(3.0)));
        assert_eq!(fs::read_to_string(dir.path().join("r_max.txt")).unwrap().lines().count(), 3);
    }
}
