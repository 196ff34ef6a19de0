//! Leader-follower orchestration.
//!
//! The leader solves its tracking problem alone and broadcasts the planned
//! positions. Followers then solve formation problems against the leader plan
//! and each other's latest plans, repeated for a number of sweeps.

use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formation::{FormationError, FormationSpec, Point};
use crate::model::{idx, AgentState, ControlInput, StateSpaceModel, StateVector};
use crate::ocp::{
    CostWeights, Layout, OcpError, OcpProblem, PenaltyForm, PenaltyTerm, SquaredPenalty, TrajectoryPlan, Transcription,
};
use crate::reference::ReferenceTrajectory;
use crate::solver::{solve, SolveError, SolveReport, SolverConfig};

pub const MESSAGE_FORMAT: &str = "quadform-leader-state";
pub const MESSAGE_VERSION: u32 = 1;
const SWEEP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CoordinatorError {
    #[error(transparent)]
    Formation(#[from] FormationError),
    #[error(transparent)]
    Problem(#[from] OcpError),
    #[error("agent {agent}: {source}")]
    Solve {
        agent: usize,
        #[source]
        source: SolveError,
    },
    #[error(transparent)]
    Message(#[from] MessageError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MessageError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("message truncated after {rows} of {expected} rows")]
    Truncated { rows: usize, expected: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AgentRole {
    pub index: usize,
    pub is_leader: bool,
}

impl AgentRole {
    pub fn of(spec: &FormationSpec, index: usize) -> Self {
        Self {
            index,
            is_leader: spec.is_leader(index),
        }
    }
}

/// What the terminal cost pulls the final state towards.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminalTarget {
    /// Reference state at the horizon, shifted by the formation offset.
    #[default]
    Reference,
    /// The zero state.
    Origin,
}

/// Order in which follower problems see each other's plans during a sweep.
pub trait CouplingSchedule: Debug + Send + Sync {
    fn name(&self) -> &'static str;

    /// Runs one sweep. `solve_one(agent, partners)` returns the new plan of
    /// `agent` given the current partner plans.
    fn sweep(
        &self,
        followers: &[usize],
        plans: &mut [TrajectoryPlan],
        solve_one: &mut SolveOne<'_>,
    ) -> Result<(), CoordinatorError>;
}

/// Replans one follower given the current plans of every agent.
pub type SolveOne<'a> = dyn FnMut(usize, &[TrajectoryPlan]) -> Result<TrajectoryPlan, CoordinatorError> + 'a;

/// Followers in index order, each using the latest partner plans.
#[derive(Clone, Copy, Debug, Default)]
pub struct GaussSeidel;

impl CouplingSchedule for GaussSeidel {
    fn name(&self) -> &'static str {
        "gauss-seidel"
    }

    fn sweep(
        &self,
        followers: &[usize],
        plans: &mut [TrajectoryPlan],
        solve_one: &mut SolveOne<'_>,
    ) -> Result<(), CoordinatorError> {
        for &f in followers {
            plans[f] = solve_one(f, plans)?;
        }
        Ok(())
    }
}

/// Every follower uses the partner plans from the previous sweep.
#[derive(Clone, Copy, Debug, Default)]
pub struct Jacobi;

impl CouplingSchedule for Jacobi {
    fn name(&self) -> &'static str {
        "jacobi"
    }

    fn sweep(
        &self,
        followers: &[usize],
        plans: &mut [TrajectoryPlan],
        solve_one: &mut SolveOne<'_>,
    ) -> Result<(), CoordinatorError> {
        let snapshot = plans.to_vec();
        for &f in followers {
            plans[f] = solve_one(f, &snapshot)?;
        }
        Ok(())
    }
}

/// Reference positions and states on the plan grid.
#[derive(Clone, Debug, PartialEq)]
pub struct LeaderReference {
    pub positions: Vec<Point>,
    pub states: Vec<StateVector>,
}

impl LeaderReference {
    pub fn sample(reference: &dyn ReferenceTrajectory, layout: &Layout) -> Self {
        let times = layout.times();
        Self {
            positions: reference.sample(&times),
            states: times.iter().map(|t| reference.state(*t)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn terminal_state(&self) -> StateVector {
        self.states.last().copied().unwrap_or_else(StateVector::zeros)
    }
}

/// Leader on the reference start, followers at their slots with the same
/// velocity.
pub fn initial_states_in_formation(spec: &FormationSpec, leader_state: &StateVector) -> Vec<AgentState> {
    (0..spec.agent_count())
        .map(|i| AgentState::from_vector(&shift_position(leader_state, spec.offset(i))))
        .collect()
}

fn shift_position(x: &StateVector, delta: Point) -> StateVector {
    let mut out = *x;
    out[idx::Y] += delta.x;
    out[idx::Z] += delta.y;
    out
}

#[derive(Clone, Debug)]
pub struct FleetSettings {
    pub model: StateSpaceModel,
    pub horizon: f64,
    pub node_count: usize,
    pub leader_weights: CostWeights,
    pub follower_weights: CostWeights,
    /// Formation penalty weight.
    pub penalty_weight: f64,
    pub u1_bound: f64,
    pub u2_bound: f64,
    pub solver: SolverConfig,
    pub sweeps: usize,
    pub penalty_form: Arc<dyn PenaltyForm>,
    pub coupling: Arc<dyn CouplingSchedule>,
    pub terminal_target: TerminalTarget,
}

impl FleetSettings {
    pub fn new(model: StateSpaceModel) -> Self {
        let u1_bound = model.params.default_u1_bound();
        let u2_bound = model.params.default_u2_bound();
        Self {
            model,
            horizon: 10.0,
            node_count: 101,
            leader_weights: CostWeights::leader(),
            follower_weights: CostWeights::follower(),
            penalty_weight: 1.0,
            u1_bound,
            u2_bound,
            solver: SolverConfig::default(),
            sweeps: 2,
            penalty_form: Arc::new(SquaredPenalty),
            coupling: Arc::new(GaussSeidel),
            terminal_target: TerminalTarget::Reference,
        }
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.node_count, self.horizon)
    }
}

#[derive(Clone, Debug)]
pub struct FleetProblem {
    pub spec: FormationSpec,
    pub reference: LeaderReference,
    pub initial_states: Vec<AgentState>,
    pub settings: FleetSettings,
}

impl FleetProblem {
    /// Fleet starting in formation on the reference.
    pub fn in_formation(spec: FormationSpec, reference: &dyn ReferenceTrajectory, settings: FleetSettings) -> Self {
        let reference = LeaderReference::sample(reference, &settings.layout());
        let initial_states = initial_states_in_formation(&spec, &reference.states[0]);
        Self {
            spec,
            reference,
            initial_states,
            settings,
        }
    }

    pub fn validate(&self) -> Result<(), CoordinatorError> {
        self.spec.check_consistency()?;
        let n = self.spec.agent_count();
        if self.initial_states.len() != n {
            return Err(OcpError::DimensionMismatch {
                what: "initial states",
                expected: n,
                got: self.initial_states.len(),
            }
            .into());
        }
        if self.settings.sweeps == 0 {
            return Err(CoordinatorError::Invalid("sweeps must be at least 1".into()));
        }
        if !(self.settings.penalty_weight.is_finite() && self.settings.penalty_weight > 0.0) {
            return Err(CoordinatorError::Invalid(format!(
                "penalty weight must be positive, got {}",
                self.settings.penalty_weight
            )));
        }
        if self.reference.len() != self.settings.node_count || self.reference.states.len() != self.settings.node_count {
            return Err(OcpError::DimensionMismatch {
                what: "leader reference",
                expected: self.settings.node_count,
                got: self.reference.len(),
            }
            .into());
        }
        if !self.settings.leader_weights.tracks() {
            return Err(CoordinatorError::Invalid(
                "leader tracking weight must be positive definite".into(),
            ));
        }
        if self.settings.follower_weights.tracks() {
            return Err(CoordinatorError::Invalid(
                "follower tracking weight must be zero".into(),
            ));
        }
        self.settings
            .solver
            .validate()
            .map_err(|source| CoordinatorError::Solve { agent: 0, source })?;
        for i in 0..n {
            self.agent_problem(i, None, &[])?.validate()?;
        }
        Ok(())
    }

    fn terminal_target(&self, agent: usize) -> StateVector {
        match self.settings.terminal_target {
            TerminalTarget::Origin => StateVector::zeros(),
            TerminalTarget::Reference => shift_position(&self.reference.terminal_state(), self.spec.offset(agent)),
        }
    }

    /// Problem of `agent`; followers get penalty terms against `partners`.
    fn agent_problem(
        &self,
        agent: usize,
        disturbance: Option<&Vec<StateVector>>,
        partners: &[(usize, Vec<Point>)],
    ) -> Result<OcpProblem, CoordinatorError> {
        let s = &self.settings;
        let leader = self.spec.is_leader(agent);
        let weights = if leader {
            s.leader_weights.clone()
        } else {
            s.follower_weights.clone()
        };
        let mut p = OcpProblem::new(
            s.model.clone(),
            self.initial_states[agent],
            s.horizon,
            s.node_count,
            weights,
        )
        .with_bounds(s.u1_bound, s.u2_bound)
        .with_penalty_form(Arc::clone(&s.penalty_form))
        .with_terminal_target(self.terminal_target(agent));
        if leader {
            p = p.with_reference(self.reference.positions.clone());
        }
        if let Some(w) = disturbance {
            p = p.with_disturbance(w.clone());
        }
        for (partner, trajectory) in partners {
            let d = self.spec.desired_distance(agent, *partner).ok_or_else(|| {
                CoordinatorError::Invalid(format!("no desired distance between {agent} and {partner}"))
            })?;
            p = p.with_penalty(PenaltyTerm {
                partner: *partner,
                partner_trajectory: trajectory.clone(),
                desired_distance: d,
                weight: s.penalty_weight,
            });
        }
        Ok(p)
    }
}

#[derive(Clone, Debug)]
pub struct FleetPlan {
    pub plans: Vec<TrajectoryPlan>,
    pub sweep_count: usize,
    /// Report of each agent's latest solve.
    pub per_agent_reports: Vec<SolveReport>,
    pub leader_index: usize,
    pub spec: FormationSpec,
    pub reference: Vec<Point>,
    /// Total follower penalty cost after each sweep.
    pub penalty_history: Vec<f64>,
}

impl FleetPlan {
    pub fn converged(&self) -> bool {
        self.per_agent_reports.iter().all(|r| r.converged)
    }

    pub fn times(&self) -> &[f64] {
        &self.plans[self.leader_index].times
    }

    pub fn roles(&self) -> Vec<AgentRole> {
        (0..self.plans.len()).map(|i| AgentRole::of(&self.spec, i)).collect()
    }
}

pub fn plan_fleet(problem: &FleetProblem) -> Result<FleetPlan, CoordinatorError> {
    plan_fleet_inner(problem, None)
}

/// Plans with a known disturbance realization per agent (one entry per
/// interval) folded into each agent's dynamics.
pub fn plan_fleet_disturbed(
    problem: &FleetProblem,
    disturbances: &[Vec<StateVector>],
) -> Result<FleetPlan, CoordinatorError> {
    if disturbances.len() != problem.spec.agent_count() {
        return Err(OcpError::DimensionMismatch {
            what: "disturbances",
            expected: problem.spec.agent_count(),
            got: disturbances.len(),
        }
        .into());
    }
    plan_fleet_inner(problem, Some(disturbances))
}

fn plan_fleet_inner(
    problem: &FleetProblem,
    disturbances: Option<&[Vec<StateVector>]>,
) -> Result<FleetPlan, CoordinatorError> {
    problem.validate()?;
    let spec = &problem.spec;
    let settings = &problem.settings;
    let layout = settings.layout();
    let leader = spec.leader_index();
    let hover = ControlInput::hover(&settings.model.params);
    let disturbance_of = |agent: usize| disturbances.map(|d| &d[agent]);

    let leader_problem = problem.agent_problem(leader, disturbance_of(leader), &[])?;
    let mut guess = TrajectoryPlan::constant(&layout, problem.initial_states[leader], hover);
    for (s, x) in guess.states.iter_mut().zip(&problem.reference.states) {
        *s = AgentState::from_vector(x);
    }
    let leader_report = solve(&leader_problem, &settings.solver, &guess)
        .map_err(|source| CoordinatorError::Solve { agent: leader, source })?;
    if !leader_report.converged {
        log::warn!("leader {leader} did not converge");
    }

    let message = broadcast_message(&leader_report.plan, AgentRole::of(spec, leader));
    let received = decode_message(&message)?;

    let mut plans: Vec<TrajectoryPlan> = (0..spec.agent_count())
        .map(|i| {
            if i == leader {
                leader_report.plan.clone()
            } else {
                leader_report.plan.translated(spec.offset(i))
            }
        })
        .collect();
    let mut reports: Vec<Option<SolveReport>> = vec![None; spec.agent_count()];
    reports[leader] = Some(leader_report);
    let followers: Vec<usize> = spec.followers().collect();

    let partners_of = |agent: usize, current: &[TrajectoryPlan]| -> Vec<(usize, Vec<Point>)> {
        spec.partners(agent)
            .into_iter()
            .map(|(j, _)| {
                let traj = if j == leader {
                    received.positions.clone()
                } else {
                    current[j].positions()
                };
                (j, traj)
            })
            .collect()
    };

    let mut penalty_history = Vec::with_capacity(settings.sweeps);
    for sweep in 0..settings.sweeps {
        let mut solve_one = |agent: usize, current: &[TrajectoryPlan]| -> Result<TrajectoryPlan, CoordinatorError> {
            let p = problem.agent_problem(agent, disturbance_of(agent), &partners_of(agent, current))?;
            let r = solve(&p, &settings.solver, &current[agent])
                .map_err(|source| CoordinatorError::Solve { agent, source })?;
            if !r.converged {
                log::warn!("follower {agent} did not converge in sweep {sweep}");
            }
            let plan = r.plan.clone();
            reports[agent] = Some(r);
            Ok(plan)
        };
        settings.coupling.sweep(&followers, &mut plans, &mut solve_one)?;

        let mut total = 0.0;
        for &f in &followers {
            let p = problem.agent_problem(f, disturbance_of(f), &partners_of(f, &plans))?;
            total += Transcription::new(&p)?.penalty_cost(&plans[f].to_flat());
        }
        if let Some(prev) = penalty_history.last() {
            if total > prev + SWEEP_TOLERANCE {
                log::info!("follower penalty rose from {prev:.3e} to {total:.3e} in sweep {sweep}");
            }
        }
        penalty_history.push(total);
    }

    Ok(FleetPlan {
        plans,
        sweep_count: settings.sweeps,
        per_agent_reports: reports.into_iter().map(|r| r.expect("every agent solved")).collect(),
        leader_index: leader,
        spec: spec.clone(),
        reference: problem.reference.positions.clone(),
        penalty_history,
    })
}

/// Decoded leader-state message.
#[derive(Clone, Debug, PartialEq)]
pub struct LeaderMessage {
    pub role: AgentRole,
    pub times: Vec<f64>,
    pub positions: Vec<Point>,
}

/// Text encoding of a plan's positions.
///
/// ```text
/// quadform-leader-state 1
/// agent 0
/// role leader
/// nodes 3
/// t y z
/// 0 0 1
/// ...
/// end
/// ```
///
/// Numbers use the shortest representation that parses back to the same
/// `f64`, so decoding is lossless.
pub fn broadcast_message(plan: &TrajectoryPlan, agent: AgentRole) -> String {
    let mut out = String::new();
    out.push_str(&format!("{MESSAGE_FORMAT} {MESSAGE_VERSION}\n"));
    out.push_str(&format!("agent {}\n", agent.index));
    out.push_str(&format!(
        "role {}\n",
        if agent.is_leader { "leader" } else { "follower" }
    ));
    out.push_str(&format!("nodes {}\n", plan.len()));
    out.push_str("t y z\n");
    for (t, s) in plan.times.iter().zip(&plan.states) {
        out.push_str(&format!("{t} {} {}\n", s.y, s.z));
    }
    out.push_str("end\n");
    out
}

/// Next line as `key value`, returning the line number and the value.
fn header_field<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    key: &str,
) -> Result<(usize, &'a str), MessageError> {
    let (line, l) = lines.next().ok_or(MessageError::Truncated { rows: 0, expected: 0 })?;
    let value = l
        .strip_prefix(key)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| MessageError::Malformed {
            line,
            reason: format!("expected `{key} ...`"),
        })?;
    Ok((line, value))
}

pub fn decode_message(text: &str) -> Result<LeaderMessage, MessageError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut header = |key: &str| header_field(&mut lines, key);
    let (line, version) = header(MESSAGE_FORMAT)?;
    if version != MESSAGE_VERSION.to_string() {
        return Err(MessageError::Malformed {
            line,
            reason: format!("unsupported version {version}"),
        });
    }
    let (line, agent) = header("agent")?;
    let index = parse_field::<usize>(agent, line)?;
    let (line, role) = header("role")?;
    let is_leader = match role {
        "leader" => true,
        "follower" => false,
        other => {
            return Err(MessageError::Malformed {
                line,
                reason: format!("unknown role `{other}`"),
            })
        }
    };
    let (line, nodes) = header("nodes")?;
    let expected = parse_field::<usize>(nodes, line)?;

    match lines.next() {
        Some((_, "t y z")) => {}
        Some((line, _)) => {
            return Err(MessageError::Malformed {
                line,
                reason: "expected column header `t y z`".into(),
            })
        }
        None => return Err(MessageError::Truncated { rows: 0, expected }),
    }
    let mut times = Vec::with_capacity(expected);
    let mut positions = Vec::with_capacity(expected);
    loop {
        let Some((line, l)) = lines.next() else {
            return Err(MessageError::Truncated {
                rows: times.len(),
                expected,
            });
        };
        if l == "end" {
            break;
        }
        let fields: Vec<&str> = l.split(' ').collect();
        if fields.len() != 3 {
            return Err(MessageError::Malformed {
                line,
                reason: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        times.push(parse_field::<f64>(fields[0], line)?);
        positions.push(Point::new(parse_field(fields[1], line)?, parse_field(fields[2], line)?));
    }
    if times.len() != expected {
        return Err(MessageError::Truncated {
            rows: times.len(),
            expected,
        });
    }
    if let Some((line, _)) = lines.next() {
        return Err(MessageError::Malformed {
            line,
            reason: "trailing content after `end`".into(),
        });
    }
    Ok(LeaderMessage {
        role: AgentRole { index, is_leader },
        times,
        positions,
    })
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize) -> Result<T, MessageError> {
    s.parse().map_err(|_| MessageError::Malformed {
        line,
        reason: format!("cannot parse `{s}`"),
    })
}
