//! Scenario runner: configuration, planning, rollouts and artifact files.

pub mod artifacts;
pub mod config;
pub mod plots;

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use quadform::coordinator::{plan_fleet, CoordinatorError, FleetPlan};
use quadform::model::NoiseSpec;
use quadform::sim::{rollout, RolloutReport, SimError};

use crate::artifacts::{agent_labels, read_plans, read_points, Manifest, SolveRecord, TrialRecordEntry};
use crate::config::{ConfigError, Scenario, ScenarioConfig, DEFAULT_CONFIG_TOML};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_IO: i32 = 3;

const DEFAULT_OUT_DIR: &str = "out";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{0}")]
    Artifact(String),
    #[error("planning failed: {0}")]
    Plan(#[source] CoordinatorError),
    #[error("rollout failed: {0}")]
    Simulate(#[source] SimError),
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => EXIT_VALIDATION,
            Self::Io { .. } | Self::Artifact(_) => EXIT_IO,
            Self::Plan(CoordinatorError::Solve { .. }) | Self::Simulate(SimError::Replan { .. }) => EXIT_NOT_CONVERGED,
            Self::Plan(_) | Self::Simulate(_) => EXIT_VALIDATION,
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub noise_sigma: Option<f64>,
    pub sweeps: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, config: &mut ScenarioConfig) {
        if let Some(s) = self.seed {
            config.seed = Some(s);
        }
        if let Some(t) = self.trials {
            config.trials = t;
        }
        if let Some(s) = self.noise_sigma {
            config.noise_sigma = s;
        }
        if let Some(s) = self.sweeps {
            config.sweeps = s;
        }
    }
}

/// Parses and validates the config at `path` (shipped defaults when absent).
pub fn load_scenario(path: Option<&Path>, overrides: &Overrides) -> Result<Scenario, CliError> {
    let source = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?,
        None => DEFAULT_CONFIG_TOML.to_string(),
    };
    let mut config = ScenarioConfig::from_toml(&source)?;
    overrides.apply(&mut config);
    Ok(config.build().map_err(|e| e.anchored(&source))?)
}

pub fn output_dir(scenario: &Scenario, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf)
        .or_else(|| scenario.config.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub converged: bool,
    pub manifest: Manifest,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.converged {
            EXIT_OK
        } else {
            EXIT_NOT_CONVERGED
        }
    }
}

fn solve_records(fleet: &FleetPlan) -> Vec<SolveRecord> {
    let labels = agent_labels(&fleet.spec);
    fleet
        .per_agent_reports
        .iter()
        .enumerate()
        .map(|(i, r)| SolveRecord::from_report(i, &labels[i], r))
        .collect()
}

fn manifest(
    scenario: &Scenario,
    command: &str,
    solves: Vec<SolveRecord>,
    penalty_history: Vec<f64>,
    trials: Vec<TrialRecordEntry>,
) -> Manifest {
    Manifest {
        format_version: artifacts::MANIFEST_VERSION,
        command: command.to_string(),
        seed: scenario.seed,
        converged: solves.iter().all(|s| s.converged) && trials.iter().all(|t| t.converged),
        sweeps: scenario.config.sweeps,
        penalty_history,
        config: scenario.config.clone(),
        solves,
        trials,
    }
}

/// Solves the fleet and writes the plans.
pub fn plan_command(scenario: &Scenario, out: &Path) -> Result<Outcome, CliError> {
    let fleet = plan(scenario)?;
    artifacts::write_plans(out, &fleet)?;
    finish(
        out,
        manifest(
            scenario,
            "plan",
            solve_records(&fleet),
            fleet.penalty_history.clone(),
            Vec::new(),
        ),
    )
}

/// Rolls out plans previously written to `out`.
pub fn simulate_command(scenario: &Scenario, out: &Path) -> Result<Outcome, CliError> {
    let spec = scenario.spec().clone();
    let plans = read_plans(out, &spec)?;
    let (_, reference) = read_points(&out.join("reference.csv"))?;
    if reference != scenario.problem.reference.positions {
        return Err(CliError::Artifact(format!(
            "{}: stored plans were made for a different reference",
            out.display()
        )));
    }
    let prior = Manifest::read(out).ok();
    let (solves, penalty_history) = prior.map(|m| (m.solves, m.penalty_history)).unwrap_or_default();
    let fleet = FleetPlan {
        plans,
        sweep_count: scenario.config.sweeps,
        per_agent_reports: Vec::new(),
        leader_index: spec.leader_index(),
        spec,
        reference,
        penalty_history: penalty_history.clone(),
    };
    let trials = simulate(scenario, &fleet, out)?;
    finish(out, manifest(scenario, "simulate", solves, penalty_history, trials))
}

/// Plans, rolls out and writes everything.
pub fn run_command(scenario: &Scenario, out: &Path) -> Result<Outcome, CliError> {
    let fleet = plan(scenario)?;
    artifacts::write_plans(out, &fleet)?;
    let trials = simulate(scenario, &fleet, out)?;
    finish(
        out,
        manifest(
            scenario,
            "run",
            solve_records(&fleet),
            fleet.penalty_history.clone(),
            trials,
        ),
    )
}

fn finish(out: &Path, manifest: Manifest) -> Result<Outcome, CliError> {
    manifest.write(out)?;
    Ok(Outcome {
        converged: manifest.converged,
        manifest,
    })
}

pub fn plan(scenario: &Scenario) -> Result<FleetPlan, CliError> {
    log::info!("planning {} agents", scenario.spec().agent_count());
    let fleet = plan_fleet(&scenario.problem).map_err(CliError::Plan)?;
    for (i, r) in fleet.per_agent_reports.iter().enumerate() {
        log::info!(
            "agent {i}: converged {}, {} iterations, objective {:.6e}",
            r.converged,
            r.iterations,
            r.final_objective
        );
    }
    Ok(fleet)
}

/// Nominal (silent) and noisy rollouts of `fleet`.
pub fn rollouts(scenario: &Scenario, fleet: &FleetPlan) -> Result<(RolloutReport, RolloutReport), CliError> {
    let mut nominal_cfg = scenario.rollout_config(NoiseSpec::silent())?;
    nominal_cfg.trial_count = 1;
    let nominal = rollout(fleet, &scenario.model, &nominal_cfg).map_err(CliError::Simulate)?;
    log::info!(
        "rolling out {} trials at sigma {}",
        scenario.config.trials,
        scenario.config.noise_sigma
    );
    let noisy =
        rollout(fleet, &scenario.model, &scenario.rollout_config(scenario.noise())?).map_err(CliError::Simulate)?;
    Ok((nominal, noisy))
}

fn simulate(scenario: &Scenario, fleet: &FleetPlan, out: &Path) -> Result<Vec<TrialRecordEntry>, CliError> {
    let (nominal, noisy) = rollouts(scenario, fleet)?;
    artifacts::write_rollouts(out, scenario.spec(), &nominal, &noisy)?;
    let noise = scenario.noise();
    Ok(noisy
        .trials
        .iter()
        .enumerate()
        .map(|(k, t)| TrialRecordEntry {
            index: k,
            noise_seed: noise.substream(k as u64).seed,
            converged: t.converged,
            leader_rmse: t.leader_rmse,
        })
        .collect())
}
