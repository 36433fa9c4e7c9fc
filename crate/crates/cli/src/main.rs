use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use nrf_cli::commands::{cmd_audit, cmd_flow, cmd_gen, cmd_pair, cmd_timemap, Outcome};
use nrf_cli::config::{ExperimentConfig, MeshSource};

/// Thread count for the worker pool; defaults to the number of logical CPUs.
const THREADS_VAR: &str = "NRF_THREADS";

#[derive(Parser)]
#[command(name = "nrf", version, about = "Normalized Ricci flow with Laplace spectrum audits")]
struct Cli {
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the configuration).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for every perturbation and the eigensolver.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print nothing but errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the initial surfaces and report topology and curvature windows.
    Gen {
        /// Subdivision level of the generated octagon surface.
        #[arg(long)]
        level: Option<u32>,
    },
    /// Run one flow and audit it.
    Flow,
    /// Run two perturbed flows and compare their spectra.
    Pair,
    /// Tabulate the time change between the unnormalised and normalised flows.
    Timemap {
        #[arg(long)]
        area0: f64,
        #[arg(long, allow_hyphen_values = true)]
        chi: i64,
        /// Normalised flow times.
        #[arg(required = true, allow_hyphen_values = true)]
        tau: Vec<f64>,
    },
    /// Re-run the checks on the artifacts of a previous flow or pair run.
    Audit {
        /// Directory holding report.json and the CSV artifacts.
        dir: PathBuf,
    },
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    use nrf_core::audit::AuditError;
    use nrf_core::flow::FlowError;
    use nrf_core::geometry::GeometryError;
    use nrf_core::mesh::MeshError;
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<AuditError>() {
            return match err {
                AuditError::HypothesisMismatch(_) => "hypothesis_mismatch",
                AuditError::InadmissibleWindow { .. } => "inadmissible",
                _ => "audit",
            };
        }
        if let Some(err) = cause.downcast_ref::<FlowError>() {
            return match err {
                FlowError::Inadmissible(_) | FlowError::NonNegativeEuler(_) => "inadmissible",
                FlowError::StepTooSmall { .. } => "step_too_small",
                FlowError::InvalidConfig(_) => "config",
                _ => "flow",
            };
        }
        if let Some(err) = cause.downcast_ref::<GeometryError>() {
            return match err {
                GeometryError::NonNegativeCurvature { .. } => "inadmissible",
                _ => "geometry",
            };
        }
        if cause.is::<MeshError>() {
            return "mesh";
        }
        if cause.is::<serde_json::Error>() {
            return "config";
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "error"
}

fn configure(cli: &Cli) -> anyhow::Result<(ExperimentConfig, PathBuf)> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.reseed(seed);
    }
    if let Command::Gen { level: Some(level) } = cli.command {
        config.mesh = MeshSource::Generator { level };
    }
    let out = cli.out.clone().or_else(|| config.out.clone()).unwrap_or_else(|| PathBuf::from("nrf-out"));
    Ok((config, out))
}

fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    if let Ok(value) = std::env::var(THREADS_VAR) {
        let threads: usize = value.parse().with_context(|| format!("{THREADS_VAR}={value:?} is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    match &cli.command {
        Command::Timemap { area0, chi, tau } => {
            Ok(Outcome { satisfied: true, summary: cmd_timemap(*area0, *chi, tau)? })
        }
        Command::Audit { dir } => {
            let out = cli.out.clone().unwrap_or_else(|| dir.clone());
            cmd_audit(dir, &out)
        }
        command => {
            let (config, out) = configure(cli)?;
            log::info!("writing artifacts to {}", out.display());
            match command {
                Command::Gen { .. } => cmd_gen(&config, &out),
                Command::Flow => cmd_flow(&config, &out),
                Command::Pair => cmd_pair(&config, &out),
                _ => unreachable!(),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(outcome) => {
            if !cli.quiet {
                print!("{}", outcome.summary);
            }
            if outcome.satisfied {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            let doc = serde_json::json!({
                "error": { "kind": error_kind(&e), "message": format!("{e:#}") }
            });
            eprintln!("{doc}");
            ExitCode::from(2)
        }
    }
}
