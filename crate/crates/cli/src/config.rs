use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use nrf_core::audit::AuditConfig;
use nrf_core::flow::FlowConfig;
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MeshSource {
    /// Subdivided hyperbolic octagon.
    Generator { level: u32 },
    /// ASCII OFF file; relative paths resolve against the config file.
    Off { path: PathBuf },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AreaTarget {
    #[default]
    Unit,
    /// `-2 pi chi`, where the average curvature is `-2`.
    MinusTwoPiChi,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    pub amplitude: f64,
    pub seed: u64,
    /// Overrides the area target for this surface.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Emit {
    pub trace_csv: bool,
    pub spectrum_csv: bool,
    pub report_json: bool,
    pub plot_data: bool,
}

impl Default for Emit {
    fn default() -> Self {
        Self { trace_csv: true, spectrum_csv: true, report_json: true, plot_data: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default = "default_mesh")]
    pub mesh: MeshSource,
    #[serde(default)]
    pub area: AreaTarget,
    /// The first entry drives `flow`; `pair` needs two.
    #[serde(default = "default_perturbations")]
    pub perturbations: Vec<Perturbation>,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub emit: Emit,
}

fn default_mesh() -> MeshSource {
    MeshSource::Generator { level: 3 }
}

fn default_perturbations() -> Vec<Perturbation> {
    vec![
        Perturbation { amplitude: 0.05, seed: 1, area: None },
        Perturbation { amplitude: -0.05, seed: 1, area: None },
    ]
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            mesh: default_mesh(),
            area: AreaTarget::default(),
            perturbations: default_perturbations(),
            flow: FlowConfig::default(),
            audit: AuditConfig::default(),
            out: None,
            emit: Emit::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let config: Self = serde_json::from_str(text).context("invalid configuration")?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut config = Self::from_json(&text)?;
        if let MeshSource::Off { path: off } = &mut config.mesh {
            if off.is_relative() {
                if let Some(dir) = path.parent() {
                    *off = dir.join(&*off);
                }
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.version != CONFIG_VERSION {
            bail!("unsupported configuration version {} (expected {CONFIG_VERSION})", self.version);
        }
        if self.perturbations.is_empty() {
            bail!("at least one perturbation is required");
        }
        for p in &self.perturbations {
            if !p.amplitude.is_finite() {
                bail!("perturbation amplitude must be finite");
            }
            if let Some(a) = p.area {
                if !(a.is_finite() && a > 0.0) {
                    bail!("perturbation area must be positive, got {a}");
                }
            }
        }
        self.flow.validate()?;
        self.audit.validate()?;
        Ok(())
    }

    /// Replaces every perturbation seed and the eigensolver seed.
    pub fn reseed(&mut self, seed: u64) {
        for p in &mut self.perturbations {
            p.seed = seed;
        }
        self.flow.seed = seed;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = ExperimentConfig::from_json(r#"{"version": 1}"#).unwrap();
        assert_eq!(c, ExperimentConfig::default());
    }

    #[test]
    fn round_trip() {
        let c = ExperimentConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ExperimentConfig::from_json(r#"{}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"version": 2}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"version": 1, "colour": "red"}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"version": 1, "flow": {"dt": 1}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"version": 1, "mesh": {"generator": {"level": 1}, "off": {"path": "a"}}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"version": 1, "perturbations": []}"#).is_err());
    }

    #[test]
    fn off_source_and_area_override() {
        let c = ExperimentConfig::from_json(
            r#"{"version": 1, "mesh": {"off": {"path": "m.off"}}, "area": "minus_two_pi_chi",
                "perturbations": [{"amplitude": 0.1, "seed": 3, "area": 2.0}]}"#,
        )
        .unwrap();
        assert_eq!(c.mesh, MeshSource::Off { path: "m.off".into() });
        assert_eq!(c.area, AreaTarget::MinusTwoPiChi);
        assert_eq!(c.perturbations[0].area, Some(2.0));
    }

    #[test]
    fn reseed_touches_every_seed() {
        let mut c = ExperimentConfig::default();
        c.reseed(9);
        assert!(c.perturbations.iter().all(|p| p.seed == 9));
        assert_eq!(c.flow.seed, 9);
    }
}
