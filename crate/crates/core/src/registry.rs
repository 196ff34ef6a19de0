//! Name lookup for the interchangeable strategies.

use std::sync::Arc;

use thiserror::Error;

use crate::coordinator::{CouplingSchedule, GaussSeidel, Jacobi};
use crate::formation::Point;
use crate::ocp::{LinearPenalty, PenaltyForm, SquaredPenalty};
use crate::reference::{Hold, ReferenceParams, ReferenceTrajectory, Sinusoid};
use crate::sim::{ControlHold, FirstOrderHold, ZeroOrderHold};
use crate::solver::StepMetric;

pub const PENALTY_FORMS: &[&str] = &["squared", "linear"];
pub const COUPLING_SCHEDULES: &[&str] = &["gauss-seidel", "jacobi"];
pub const REFERENCE_TRAJECTORIES: &[&str] = &["sinusoid", "hold"];
pub const CONTROL_HOLDS: &[&str] = &["first-order", "zero-order"];
pub const STEP_METRICS: &[&str] = StepMetric::NAMES;
/// Trial modes need the fleet problem, so they are built by the caller.
pub const TRIAL_MODES: &[&str] = &["replan", "open-loop"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown {family} `{name}`; expected one of: {}", .known.join(", "))]
pub struct UnknownStrategy {
    pub family: &'static str,
    pub name: String,
    pub known: &'static [&'static str],
}

fn unknown(family: &'static str, name: &str, known: &'static [&'static str]) -> UnknownStrategy {
    UnknownStrategy {
        family,
        name: name.to_string(),
        known,
    }
}

pub fn penalty_form(name: &str) -> Result<Arc<dyn PenaltyForm>, UnknownStrategy> {
    match name {
        "squared" => Ok(Arc::new(SquaredPenalty)),
        "linear" => Ok(Arc::new(LinearPenalty)),
        _ => Err(unknown("penalty form", name, PENALTY_FORMS)),
    }
}

pub fn coupling_schedule(name: &str) -> Result<Arc<dyn CouplingSchedule>, UnknownStrategy> {
    match name {
        "gauss-seidel" => Ok(Arc::new(GaussSeidel)),
        "jacobi" => Ok(Arc::new(Jacobi)),
        _ => Err(unknown("coupling schedule", name, COUPLING_SCHEDULES)),
    }
}

/// `hold` stays at the start of the sinusoid, `(start_y, base_altitude)`.
pub fn reference_trajectory(
    name: &str,
    params: &ReferenceParams,
    horizon: f64,
) -> Result<Arc<dyn ReferenceTrajectory>, UnknownStrategy> {
    match name {
        "sinusoid" => Ok(Arc::new(Sinusoid::from_params(params, horizon))),
        "hold" => Ok(Arc::new(Hold {
            point: Point::new(params.start_y, params.base_altitude),
        })),
        _ => Err(unknown("reference trajectory", name, REFERENCE_TRAJECTORIES)),
    }
}

pub fn control_hold(name: &str) -> Result<Arc<dyn ControlHold>, UnknownStrategy> {
    match name {
        "first-order" => Ok(Arc::new(FirstOrderHold)),
        "zero-order" => Ok(Arc::new(ZeroOrderHold)),
        _ => Err(unknown("control hold", name, CONTROL_HOLDS)),
    }
}

pub fn step_metric(name: &str) -> Result<StepMetric, UnknownStrategy> {
    StepMetric::from_name(name).ok_or_else(|| unknown("step metric", name, STEP_METRICS))
}

pub fn check_trial_mode(name: &str) -> Result<(), UnknownStrategy> {
    if TRIAL_MODES.contains(&name) {
        Ok(())
    } else {
        Err(unknown("trial mode", name, TRIAL_MODES))
    }
}
