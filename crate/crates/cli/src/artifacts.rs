//! Artifact files: headered comma-separated tables and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use quadform::coordinator::FleetPlan;
use quadform::formation::{FormationSpec, Point};
use quadform::model::{AgentState, ControlInput};
use quadform::ocp::TrajectoryPlan;
use quadform::sim::RolloutReport;
use quadform::solver::SolveReport;

use crate::config::ScenarioConfig;
use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const MANIFEST_VERSION: u32 = 1;
pub const STATE_COLUMNS: [&str; 7] = ["t", "y", "y_dot", "z", "z_dot", "phi", "phi_dot"];
pub const CONTROL_COLUMNS: [&str; 3] = ["t", "u1", "u2"];

/// `leader`, then `f1`, `f2`, ... in index order.
pub fn agent_labels(spec: &FormationSpec) -> Vec<String> {
    let mut next = 0;
    (0..spec.agent_count())
        .map(|i| {
            if spec.is_leader(i) {
                "leader".to_string()
            } else {
                next += 1;
                format!("f{next}")
            }
        })
        .collect()
}

/// In-memory table; cells are written with `Display`, which round-trips `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self {
            header: header.iter().map(|h| h.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<T: ToString>(&mut self, row: &[T]) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row.iter().map(ToString::to_string).collect());
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        write_text(path, &self.render())
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut lines = text.lines();
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| CliError::Artifact(format!("{}: empty file", path.display())))?
            .split(',')
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (i, l) in lines.enumerate() {
            let row: Vec<String> = l.split(',').map(str::to_string).collect();
            if row.len() != header.len() {
                return Err(CliError::Artifact(format!(
                    "{}:{}: expected {} columns, found {}",
                    path.display(),
                    i + 2,
                    header.len(),
                    row.len()
                )));
            }
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    /// Column-checked numeric view.
    pub fn numbers(&self, path: &Path, expected: &[&str]) -> Result<Vec<Vec<f64>>, CliError> {
        if self.header != expected {
            return Err(CliError::Artifact(format!(
                "{}: expected columns {}, found {}",
                path.display(),
                expected.join(","),
                self.header.join(",")
            )));
        }
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.iter()
                    .map(|c| {
                        c.parse::<f64>().map_err(|_| {
                            CliError::Artifact(format!("{}:{}: cannot parse `{c}`", path.display(), i + 2))
                        })
                    })
                    .collect()
            })
            .collect()
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn state_row(t: f64, s: &AgentState) -> [f64; 7] {
    [t, s.y, s.y_dot, s.z, s.z_dot, s.phi, s.phi_dot]
}

pub fn states_table(times: &[f64], states: &[AgentState]) -> Table {
    let mut t = Table::new(&STATE_COLUMNS);
    for (time, s) in times.iter().zip(states) {
        t.push(&state_row(*time, s));
    }
    t
}

pub fn controls_table(times: &[f64], controls: &[ControlInput]) -> Table {
    let mut t = Table::new(&CONTROL_COLUMNS);
    for (time, u) in times.iter().zip(controls) {
        t.push(&[*time, u.u1, u.u2]);
    }
    t
}

pub fn plan_path(dir: &Path, label: &str) -> PathBuf {
    dir.join(format!("plan_{label}.csv"))
}

pub fn controls_path(dir: &Path, label: &str) -> PathBuf {
    dir.join(format!("controls_{label}.csv"))
}

pub fn write_plans(dir: &Path, fleet: &FleetPlan) -> Result<(), CliError> {
    let labels = agent_labels(&fleet.spec);
    for (plan, label) in fleet.plans.iter().zip(&labels) {
        states_table(&plan.times, &plan.states).write(&plan_path(dir, label))?;
        controls_table(&plan.times, &plan.controls).write(&controls_path(dir, label))?;
    }
    let mut reference = Table::new(&["t", "y", "z"]);
    for (t, p) in fleet.times().iter().zip(&fleet.reference) {
        reference.push(&[*t, p.x, p.y]);
    }
    reference.write(&dir.join("reference.csv"))
}

/// Plans written by [`write_plans`], one per agent label.
pub fn read_plans(dir: &Path, spec: &FormationSpec) -> Result<Vec<TrajectoryPlan>, CliError> {
    agent_labels(spec)
        .iter()
        .map(|label| {
            let sp = plan_path(dir, label);
            let cp = controls_path(dir, label);
            let states = Table::read(&sp)?.numbers(&sp, &STATE_COLUMNS)?;
            let controls = Table::read(&cp)?.numbers(&cp, &CONTROL_COLUMNS)?;
            if states.len() != controls.len() {
                return Err(CliError::Artifact(format!(
                    "{} and {} differ in length",
                    sp.display(),
                    cp.display()
                )));
            }
            Ok(TrajectoryPlan {
                times: states.iter().map(|r| r[0]).collect(),
                states: states
                    .iter()
                    .map(|r| AgentState {
                        y: r[1],
                        y_dot: r[2],
                        z: r[3],
                        z_dot: r[4],
                        phi: r[5],
                        phi_dot: r[6],
                    })
                    .collect(),
                controls: controls.iter().map(|r| ControlInput::new(r[1], r[2])).collect(),
            })
        })
        .collect()
}

pub fn read_points(path: &Path) -> Result<(Vec<f64>, Vec<Point>), CliError> {
    let rows = Table::read(path)?.numbers(path, &["t", "y", "z"])?;
    Ok((
        rows.iter().map(|r| r[0]).collect(),
        rows.iter().map(|r| Point::new(r[1], r[2])).collect(),
    ))
}

/// Removes trial files left by an earlier run with more trials.
fn clear_trials(dir: &Path) -> Result<(), CliError> {
    let Ok(entries) = fs::read_dir(dir) else {
        return Ok(());
    };
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        let stale = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with("trial_") && n.ends_with(".csv"));
        if stale {
            fs::remove_file(&path).map_err(|e| CliError::io(&path, e))?;
        }
    }
    Ok(())
}

fn pair_label(labels: &[String], first: usize, second: usize) -> String {
    format!("{}-{}", labels[first], labels[second])
}

/// Simulated trajectories, errors and RMSE tables for a nominal and a noisy
/// rollout of the same fleet.
pub fn write_rollouts(
    dir: &Path,
    spec: &FormationSpec,
    nominal: &RolloutReport,
    noisy: &RolloutReport,
) -> Result<(), CliError> {
    let labels = agent_labels(spec);
    let times = &nominal.times;
    for (agent, label) in labels.iter().enumerate() {
        states_table(times, &nominal.trials[0].histories[agent]).write(&dir.join(format!("nominal_{label}.csv")))?;
    }
    let mut columns: Vec<String> = STATE_COLUMNS.iter().map(|c| c.to_string()).collect();
    columns.extend(["u1".to_string(), "u2".to_string()]);
    clear_trials(&dir.join("trials"))?;
    for (k, trial) in noisy.trials.iter().enumerate() {
        for (agent, label) in labels.iter().enumerate() {
            let mut t = Table::new(&columns);
            for ((time, s), u) in times.iter().zip(&trial.histories[agent]).zip(&trial.controls[agent]) {
                let mut row = state_row(*time, s).to_vec();
                row.extend([u.u1, u.u2]);
                t.push(&row);
            }
            t.write(&dir.join("trials").join(format!("trial_{k:03}_{label}.csv")))?;
        }
    }

    let mut errors = Table::new(&["t", "nominal", "with_noise"]);
    for (k, t) in times.iter().enumerate() {
        errors.push(&[*t, nominal.error_series[k], noisy.error_series[k]]);
    }
    errors.write(&dir.join("error_series.csv"))?;

    let mut summary = Table::new(&["agent", "nominal", "with_noise"]);
    summary.push(&[
        "Leader".to_string(),
        nominal.leader_tracking_rmse.to_string(),
        noisy.leader_tracking_rmse.to_string(),
    ]);
    let leader = spec.leader_index();
    for f in spec.followers() {
        let find = |r: &RolloutReport| {
            r.pair_rmse
                .iter()
                .find(|p| (p.first, p.second) == (leader.min(f), leader.max(f)))
                .map(|p| p.rmse)
                .unwrap_or(f64::NAN)
        };
        summary.push(&[labels[f].clone(), find(nominal).to_string(), find(noisy).to_string()]);
    }
    summary.write(&dir.join("rmse_summary.csv"))?;

    let mut pairs = Table::new(&["pair", "desired_distance", "nominal", "with_noise"]);
    for (a, b) in nominal.pair_rmse.iter().zip(&noisy.pair_rmse) {
        let d = spec.desired_distance(a.first, a.second).unwrap_or(f64::NAN);
        pairs.push(&[
            pair_label(&labels, a.first, a.second),
            d.to_string(),
            a.rmse.to_string(),
            b.rmse.to_string(),
        ]);
    }
    pairs.write(&dir.join("pair_rmse.csv"))?;

    let mut header = vec!["trial".to_string(), "leader".to_string()];
    header.extend(noisy.pair_rmse.iter().map(|p| pair_label(&labels, p.first, p.second)));
    let mut per_trial = Table::new(&header);
    for (k, trial) in noisy.trials.iter().enumerate() {
        let mut row = vec![k.to_string(), trial.leader_rmse.to_string()];
        row.extend(trial.pair_rmse.iter().map(|p| p.rmse.to_string()));
        per_trial.push(&row);
    }
    per_trial.write(&dir.join("trial_rmse.csv"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveRecord {
    pub agent: usize,
    pub label: String,
    pub converged: bool,
    pub iterations: usize,
    pub penalty_rounds: usize,
    pub final_objective: f64,
    pub final_gradient_norm: f64,
    pub max_defect: f64,
    pub stalled: bool,
}

impl SolveRecord {
    pub fn from_report(agent: usize, label: &str, r: &SolveReport) -> Self {
        Self {
            agent,
            label: label.to_string(),
            converged: r.converged,
            iterations: r.iterations,
            penalty_rounds: r.penalty_rounds,
            final_objective: r.final_objective,
            final_gradient_norm: r.final_gradient_norm,
            max_defect: r.max_defect,
            stalled: r.stalled,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecordEntry {
    pub index: usize,
    /// Seed of the trial's noise stream; agent streams derive from it.
    pub noise_seed: u64,
    pub converged: bool,
    pub leader_rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub command: String,
    pub seed: u64,
    /// All recorded solves and trials converged.
    pub converged: bool,
    pub sweeps: usize,
    pub penalty_history: Vec<f64>,
    pub config: ScenarioConfig,
    #[serde(default)]
    pub solves: Vec<SolveRecord>,
    #[serde(default)]
    pub trials: Vec<TrialRecordEntry>,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let text = toml::to_string(self).map_err(|e| CliError::Artifact(format!("manifest: {e}")))?;
        write_text(&dir.join(MANIFEST_FILE), &text)
    }

    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Artifact(format!("{}: {e}", path.display())))
    }
}
