use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn nrf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nrf")).current_dir(dir).arg("--quiet").args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) {
    fs::write(dir.join("config.json"), body).unwrap();
}

fn level_one(dir: &Path) {
    write_config(dir, r#"{"version": 1, "mesh": {"generator": {"level": 1}}, "flow": {"spectrum_every": 20}}"#);
}

fn error_kind(out: &Output) -> String {
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: Value = serde_json::from_slice(&out.stderr).unwrap();
    doc["error"]["kind"].as_str().unwrap().to_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn flow_artifacts_survive_an_audit() {
    let dir = tempfile::tempdir().unwrap();
    level_one(dir.path());
    let out = nrf(dir.path(), &["--config", "config.json", "--out", "run", "flow"]);
    assert_eq!(out.status.code(), Some(0));
    let run = dir.path().join("run");
    for name in ["trace.csv", "spectrum.csv", "report.json", "plot/r_max.txt", "plot/lambda_1.txt"] {
        assert!(run.join(name).is_file(), "{name}");
    }
    let report = json(&run.join("report.json"));
    assert_eq!(report["command"], "flow");
    assert_eq!(report["satisfied"], true);

    let out = nrf(dir.path(), &["audit", "run"]);
    assert_eq!(out.status.code(), Some(0));
    let audit = json(&run.join("audit.json"));
    assert_eq!(audit["matches_stored"], true);
    assert_eq!(audit["satisfied"], true);
}

#[test]
fn audit_flags_a_tampered_trace() {
    let dir = tempfile::tempdir().unwrap();
    level_one(dir.path());
    assert_eq!(nrf(dir.path(), &["--config", "config.json", "--out", "run", "flow"]).status.code(), Some(0));
    let path = dir.path().join("run/trace.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    let row = lines.len() / 2;
    let mut fields: Vec<&str> = lines[row].split(',').collect();
    fields[6] = "1.0";
    lines[row] = fields.join(",");
    fs::write(&path, lines.join("\n") + "\n").unwrap();

    let out = nrf(dir.path(), &["audit", "run", "--out", "audited"]);
    assert_eq!(out.status.code(), Some(1));
    let audit = json(&dir.path().join("audited/audit.json"));
    assert_eq!(audit["matches_stored"], false);
    let ceiling = audit["surfaces"][0].as_array().unwrap().iter().find(|c| c["name"] == "curvature_ceiling").unwrap();
    assert_eq!(ceiling["satisfied"], false);
    assert!(ceiling["worst_margin"].as_f64().unwrap() < 0.0);
}

#[test]
fn pair_writes_both_surfaces() {
    let dir = tempfile::tempdir().unwrap();
    level_one(dir.path());
    let out = nrf(dir.path(), &["--config", "config.json", "--out", "pair", "--seed", "7", "pair"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&dir.path().join("pair/report.json"));
    assert_eq!(report["surfaces"].as_array().unwrap().len(), 2);
    assert!(report["comparison"]["delta_hat"].as_f64().unwrap() >= 0.0);
    let names: Vec<&str> =
        report["comparison_checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["buser_comparison", "main_theorem", "consistency_chain"]);
    assert!(dir.path().join("pair/surface_2/spectrum.csv").is_file());
    assert_eq!(nrf(dir.path(), &["audit", "pair"]).status.code(), Some(0));
}

#[test]
fn gen_reports_topology() {
    let dir = tempfile::tempdir().unwrap();
    let out = nrf(dir.path(), &["--out", "gen", "gen", "--level", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let doc = json(&dir.path().join("gen/gen.json"));
    assert_eq!(doc["command"], "gen");
    assert_eq!(doc["mesh"]["vertices"], 118);
    assert_eq!(doc["mesh"]["euler_characteristic"], -2);
}

#[test]
fn timemap_prints_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_nrf"))
        .args(["timemap", "--area0", "1", "--chi", "-2", "0", "0.5"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<f64>> =
        text.lines().skip(1).map(|l| l.split_whitespace().map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows[0], [0.0, 0.0, 1.0]);
    assert!((rows[1][2] - (4.0 * std::f64::consts::PI).exp()).abs() < 1e-9 * rows[1][2]);
    assert_eq!(error_kind(&nrf(dir.path(), &["timemap", "--area0", "1", "--chi", "0", "0.1"])), "inadmissible");
}

#[test]
fn errors_are_json_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), r#"{"version": 1, "bogus": 1}"#);
    assert_eq!(error_kind(&nrf(dir.path(), &["--config", "config.json", "flow"])), "config");

    write_config(
        dir.path(),
        r#"{"version": 1, "mesh": {"generator": {"level": 1}}, "perturbations": [{"amplitude": 1.0, "seed": 1}]}"#,
    );
    assert_eq!(error_kind(&nrf(dir.path(), &["--config", "config.json", "flow"])), "inadmissible");

    write_config(
        dir.path(),
        r#"{"version": 1, "mesh": {"generator": {"level": 1}},
            "perturbations": [{"amplitude": 0.05, "seed": 1}, {"amplitude": -0.05, "seed": 1, "area": 2.0}]}"#,
    );
    assert_eq!(error_kind(&nrf(dir.path(), &["--config", "config.json", "pair"])), "hypothesis_mismatch");

    assert_eq!(error_kind(&nrf(dir.path(), &["audit", "missing"])), "io");
}
