//! Columnar plot data derived from the files of a finished run.

use std::path::{Path, PathBuf};

use quadform::FormationSpec;

use crate::artifacts::{agent_labels, controls_path, plan_path, read_points, Table, CONTROL_COLUMNS, STATE_COLUMNS};
use crate::CliError;

pub const PLOT_DIR: &str = "plots";
/// Nodes between two formation snapshots.
pub const SNAPSHOT_STRIDE: usize = 10;

fn require(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Artifact(format!("missing run artifact {}", path.display())))
    }
}

/// Writes plot tables into `<dir>/plots` and returns their paths.
pub fn emit_plot_data(dir: &Path, spec: &FormationSpec) -> Result<Vec<PathBuf>, CliError> {
    let labels = agent_labels(spec);
    let plots = dir.join(PLOT_DIR);
    let mut written = Vec::new();
    let mut emit = |name: String, table: &Table| -> Result<(), CliError> {
        let path = plots.join(name);
        table.write(&path)?;
        written.push(path);
        Ok(())
    };

    let reference_path = dir.join("reference.csv");
    let error_path = dir.join("error_series.csv");
    for p in [&reference_path, &error_path] {
        require(p)?;
    }

    let mut states = Vec::with_capacity(labels.len());
    for label in &labels {
        let sp = plan_path(dir, label);
        let cp = controls_path(dir, label);
        require(&sp)?;
        require(&cp)?;
        let s = Table::read(&sp)?;
        s.numbers(&sp, &STATE_COLUMNS)?;
        emit(format!("states_{label}.csv"), &s)?;
        let c = Table::read(&cp)?;
        c.numbers(&cp, &CONTROL_COLUMNS)?;
        emit(format!("controls_{label}.csv"), &c)?;
        states.push(s.numbers(&sp, &STATE_COLUMNS)?);
    }

    let (times, reference) = read_points(&reference_path)?;
    let leader = &states[spec.leader_index()];
    if leader.len() != times.len() {
        return Err(CliError::Artifact(format!(
            "{} and the leader plan differ in length",
            reference_path.display()
        )));
    }
    let mut tracking = Table::new(&["t", "y", "z", "y_ref", "z_ref"]);
    for ((t, row), r) in times.iter().zip(leader).zip(&reference) {
        tracking.push(&[*t, row[1], row[3], r.x, r.y]);
    }
    emit("leader_tracking.csv".into(), &tracking)?;

    let errors = Table::read(&error_path)?;
    errors.numbers(&error_path, &["t", "nominal", "with_noise"])?;
    emit("leader_error.csv".into(), &errors)?;

    let mut snapshots = Table::new(&["t", "agent", "y", "z"]);
    let mut edges = Table::new(&["t", "first", "second", "y_first", "z_first", "y_second", "z_second"]);
    let last = times.len().saturating_sub(1);
    let nodes = (0..times.len())
        .step_by(SNAPSHOT_STRIDE)
        .chain((last % SNAPSHOT_STRIDE != 0).then_some(last));
    for k in nodes {
        let t = times[k].to_string();
        for (agent, label) in labels.iter().enumerate() {
            let row = &states[agent][k];
            snapshots.push(&[t.clone(), label.clone(), row[1].to_string(), row[3].to_string()]);
        }
        for ((a, b), _) in spec.pairs() {
            let (p, q) = (&states[a][k], &states[b][k]);
            edges.push(&[
                t.clone(),
                labels[a].clone(),
                labels[b].clone(),
                p[1].to_string(),
                p[3].to_string(),
                q[1].to_string(),
                q[3].to_string(),
            ]);
        }
    }
    emit("formation_snapshots.csv".into(), &snapshots)?;
    emit("formation_edges.csv".into(), &edges)?;
    Ok(written)
}
