//! Monte-Carlo rollouts of fleet plans through the disturbed dynamics, and
//! the tracking and formation error metrics.

use std::borrow::Cow;
use std::fmt::Debug;
use std::sync::Arc;

use thiserror::Error;

use crate::coordinator::{plan_fleet_disturbed, CoordinatorError, FleetPlan, FleetProblem};
use crate::formation::{FormationSpec, Point};
use crate::model::{AgentState, ControlInput, ControlVector, ModelError, NoiseSpec, StateSpaceModel, StateVector};

const GRID_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("plan grid spacing {got} does not match rollout step {expected}")]
    GridMismatch { expected: f64, got: f64 },
    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid rollout configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("trial {trial}: {source}")]
    Replan {
        trial: usize,
        #[source]
        source: CoordinatorError,
    },
}

/// Control signal between two consecutive nodes.
pub trait ControlHold: Debug + Send + Sync {
    fn name(&self) -> &'static str;
    /// Input at offset `s` in `[0, dt]` into the interval.
    fn input_at(&self, start: &ControlVector, end: &ControlVector, dt: f64, s: f64) -> ControlVector;
}

/// Linear interpolation between nodes, matching the collocation model.
#[derive(Clone, Copy, Debug, Default)]
pub struct FirstOrderHold;

impl ControlHold for FirstOrderHold {
    fn name(&self) -> &'static str {
        "first-order"
    }

    fn input_at(&self, start: &ControlVector, end: &ControlVector, dt: f64, s: f64) -> ControlVector {
        let a = s / dt;
        start * (1.0 - a) + end * a
    }
}

/// Node input held over the whole interval.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroOrderHold;

impl ControlHold for ZeroOrderHold {
    fn name(&self) -> &'static str {
        "zero-order"
    }

    fn input_at(&self, start: &ControlVector, _end: &ControlVector, _dt: f64, _s: f64) -> ControlVector {
        *start
    }
}

/// Which plan a trial replays, given the trial's disturbance realization.
pub trait TrialMode: Debug + Send + Sync {
    fn name(&self) -> &'static str;
    fn trial_plan<'a>(
        &self,
        trial: usize,
        nominal: &'a FleetPlan,
        disturbances: &[Vec<StateVector>],
    ) -> Result<Cow<'a, FleetPlan>, SimError>;
}

/// Nominal controls replayed without feedback.
#[derive(Clone, Copy, Debug, Default)]
pub struct OpenLoop;

impl TrialMode for OpenLoop {
    fn name(&self) -> &'static str {
        "open-loop"
    }

    fn trial_plan<'a>(
        &self,
        _trial: usize,
        nominal: &'a FleetPlan,
        _disturbances: &[Vec<StateVector>],
    ) -> Result<Cow<'a, FleetPlan>, SimError> {
        Ok(Cow::Borrowed(nominal))
    }
}

/// Fleet re-planned with the trial's disturbance realization in the model.
#[derive(Clone, Debug)]
pub struct Replan {
    pub problem: FleetProblem,
}

impl TrialMode for Replan {
    fn name(&self) -> &'static str {
        "replan"
    }

    fn trial_plan<'a>(
        &self,
        trial: usize,
        _nominal: &'a FleetPlan,
        disturbances: &[Vec<StateVector>],
    ) -> Result<Cow<'a, FleetPlan>, SimError> {
        plan_fleet_disturbed(&self.problem, disturbances)
            .map(Cow::Owned)
            .map_err(|source| SimError::Replan { trial, source })
    }
}

#[derive(Clone, Debug)]
pub struct RolloutConfig {
    pub noise: NoiseSpec,
    pub trial_count: usize,
    pub dt: f64,
    pub hold: Arc<dyn ControlHold>,
    pub mode: Arc<dyn TrialMode>,
}

impl RolloutConfig {
    pub fn new(noise: NoiseSpec, trial_count: usize, dt: f64) -> Self {
        Self {
            noise,
            trial_count,
            dt,
            hold: Arc::new(FirstOrderHold),
            mode: Arc::new(OpenLoop),
        }
    }

    pub fn with_hold(mut self, hold: Arc<dyn ControlHold>) -> Self {
        self.hold = hold;
        self
    }

    pub fn with_mode(mut self, mode: Arc<dyn TrialMode>) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.noise.validate()?;
        if self.trial_count == 0 {
            return Err(SimError::InvalidConfig("trial_count must be at least 1".into()));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(SimError::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairRmse {
    pub first: usize,
    pub second: usize,
    pub rmse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    /// Simulated states per agent, one per node.
    pub histories: Vec<Vec<AgentState>>,
    /// Controls applied per agent, one per node.
    pub controls: Vec<Vec<ControlInput>>,
    pub leader_rmse: f64,
    pub pair_rmse: Vec<PairRmse>,
    /// Leader position error norm per node.
    pub leader_error: Vec<f64>,
    /// Whether every solve behind this trial's plan converged.
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutReport {
    pub times: Vec<f64>,
    pub trials: Vec<TrialRecord>,
    /// Mean over trials.
    pub leader_tracking_rmse: f64,
    /// Mean over trials, per specified pair.
    pub pair_rmse: Vec<PairRmse>,
    /// Mean over trials of the leader error norm per node.
    pub error_series: Vec<f64>,
}

impl RolloutReport {
    pub fn leader_rmse_per_trial(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.leader_rmse).collect()
    }
}

pub fn rollout(fleet: &FleetPlan, model: &StateSpaceModel, config: &RolloutConfig) -> Result<RolloutReport, SimError> {
    config.validate()?;
    let times = fleet.times().to_vec();
    let n = times.len();
    for w in times.windows(2) {
        let h = w[1] - w[0];
        if (h - config.dt).abs() > GRID_TOLERANCE {
            return Err(SimError::GridMismatch {
                expected: config.dt,
                got: h,
            });
        }
    }
    for plan in &fleet.plans {
        if plan.len() != n {
            return Err(SimError::LengthMismatch {
                what: "agent plan",
                expected: n,
                got: plan.len(),
            });
        }
    }

    let agents = fleet.plans.len();
    let mut trials = Vec::with_capacity(config.trial_count);
    for trial in 0..config.trial_count {
        let stream = config.noise.substream(trial as u64);
        let disturbances: Vec<Vec<StateVector>> = (0..agents)
            .map(|a| stream.substream(a as u64).sequence(n - 1))
            .collect();
        let plan = if config.noise.is_silent() {
            Cow::Borrowed(fleet)
        } else {
            config.mode.trial_plan(trial, fleet, &disturbances)?
        };
        let mut histories = Vec::with_capacity(agents);
        let mut controls = Vec::with_capacity(agents);
        for (agent, p) in plan.plans.iter().enumerate() {
            histories.push(simulate(model, p.states[0], &p.controls, &disturbances[agent], config)?);
            controls.push(p.controls.clone());
        }
        let positions: Vec<Vec<Point>> = histories
            .iter()
            .map(|h| h.iter().map(AgentState::position).collect())
            .collect();
        let leader_error = positions[fleet.leader_index]
            .iter()
            .zip(&fleet.reference)
            .map(|(a, b)| (a - b).norm())
            .collect();
        trials.push(TrialRecord {
            leader_rmse: tracking_rmse(&positions[fleet.leader_index], &fleet.reference)?,
            pair_rmse: formation_rmse(&positions, &fleet.spec)?,
            leader_error,
            converged: plan.converged(),
            histories,
            controls,
        });
    }

    let count = trials.len() as f64;
    let leader_tracking_rmse = trials.iter().map(|t| t.leader_rmse).sum::<f64>() / count;
    let pair_rmse = trials[0]
        .pair_rmse
        .iter()
        .enumerate()
        .map(|(k, p)| PairRmse {
            rmse: trials.iter().map(|t| t.pair_rmse[k].rmse).sum::<f64>() / count,
            ..*p
        })
        .collect();
    let error_series = (0..n)
        .map(|k| trials.iter().map(|t| t.leader_error[k]).sum::<f64>() / count)
        .collect();
    Ok(RolloutReport {
        times,
        trials,
        leader_tracking_rmse,
        pair_rmse,
        error_series,
    })
}

fn simulate(
    model: &StateSpaceModel,
    start: AgentState,
    controls: &[ControlInput],
    disturbance: &[StateVector],
    config: &RolloutConfig,
) -> Result<Vec<AgentState>, SimError> {
    let mut x = start.to_vector();
    let mut out = Vec::with_capacity(controls.len());
    out.push(start);
    for (k, w) in controls.windows(2).enumerate() {
        let (u0, u1) = (w[0].to_vector(), w[1].to_vector());
        x = model.step_rk4_varying(
            &x,
            |s| config.hold.input_at(&u0, &u1, config.dt, s),
            &disturbance[k],
            config.dt,
        )?;
        out.push(AgentState::from_vector(&x));
    }
    Ok(out)
}

/// `sqrt(mean_k |history_k − reference_k|²)`.
pub fn tracking_rmse(history: &[Point], reference: &[Point]) -> Result<f64, SimError> {
    if history.len() != reference.len() {
        return Err(SimError::LengthMismatch {
            what: "reference",
            expected: history.len(),
            got: reference.len(),
        });
    }
    if history.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = history.iter().zip(reference).map(|(a, b)| (a - b).norm_squared()).sum();
    Ok((sum / history.len() as f64).sqrt())
}

/// Per specified pair, `sqrt(mean_k (|p_i − p_j| − d_ij)²)`.
pub fn formation_rmse(histories: &[Vec<Point>], spec: &FormationSpec) -> Result<Vec<PairRmse>, SimError> {
    if histories.len() != spec.agent_count() {
        return Err(SimError::LengthMismatch {
            what: "agent histories",
            expected: spec.agent_count(),
            got: histories.len(),
        });
    }
    let n = histories.first().map_or(0, Vec::len);
    if let Some(h) = histories.iter().find(|h| h.len() != n) {
        return Err(SimError::LengthMismatch {
            what: "agent history",
            expected: n,
            got: h.len(),
        });
    }
    Ok(spec
        .pairs()
        .map(|((i, j), d)| {
            let sum: f64 = histories[i]
                .iter()
                .zip(&histories[j])
                .map(|(a, b)| ((a - b).norm() - d).powi(2))
                .sum();
            PairRmse {
                first: i,
                second: j,
                rmse: if n == 0 { 0.0 } else { (sum / n as f64).sqrt() },
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coordinator::{plan_fleet, FleetSettings};
    use crate::formation::{apply_transform, triangular_spec, PlanarTransform};
    use crate::model::QuadParams;
    use crate::ocp::{Layout, TrajectoryPlan};
    use crate::reference::Hold;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn tracking_rmse_examples() {
        let r: Vec<Point> = (0..10).map(|k| Point::new(k as f64, 1.0)).collect();
        assert_eq!(tracking_rmse(&r, &r).unwrap(), 0.0);
        let shifted: Vec<Point> = r.iter().map(|p| p + Point::new(0.1, 0.0)).collect();
        assert_relative_eq!(tracking_rmse(&shifted, &r).unwrap(), 0.1, epsilon = 1e-15);
        let alternating: Vec<Point> = r
            .iter()
            .enumerate()
            .map(|(k, p)| p + Point::new(if k % 2 == 0 { 0.1 } else { -0.1 }, 0.0))
            .collect();
        assert_relative_eq!(tracking_rmse(&alternating, &r).unwrap(), 0.1, epsilon = 1e-15);
        assert!(tracking_rmse(&r[..3], &r).is_err());
    }

    #[test]
    fn formation_rmse_examples() {
        let spec = triangular_spec(0.5, 0.5).unwrap();
        let exact: Vec<Vec<Point>> = spec
            .nominal_positions(Point::new(0.0, 1.0))
            .iter()
            .map(|p| vec![*p; 5])
            .collect();
        for p in formation_rmse(&exact, &spec).unwrap() {
            assert!(p.rmse < 1e-15);
        }
        // follower 1 pushed radially away from the leader
        let mut moved = exact.clone();
        let dir = spec.offset(1) / spec.offset(1).norm();
        for p in &mut moved[1] {
            *p += 0.05 * dir;
        }
        let r = formation_rmse(&moved, &spec).unwrap();
        let lf = r.iter().find(|p| (p.first, p.second) == (0, 1)).unwrap();
        assert_relative_eq!(lf.rmse, 0.05, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn rmse_aggregates_over_segments(
            errs in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2..20),
        ) {
            let n = errs.len() / 2;
            let refs: Vec<Point> = (0..2 * n).map(|k| Point::new(k as f64, 0.0)).collect();
            let hist: Vec<Point> = refs.iter().zip(&errs).map(|(r, e)| r + Point::new(e.0, e.1)).collect();
            let a = tracking_rmse(&hist[..n], &refs[..n]).unwrap();
            let b = tracking_rmse(&hist[n..], &refs[n..]).unwrap();
            let whole = tracking_rmse(&hist, &refs).unwrap();
            prop_assert!((whole - ((a * a + b * b) / 2.0).sqrt()).abs() <= 1e-12);
        }

        #[test]
        fn metrics_invariant_under_isometry(
            angle in -3.2f64..3.2,
            tx in -10.0f64..10.0,
            ty in -10.0f64..10.0,
            jitter in prop::collection::vec((-0.2f64..0.2, -0.2f64..0.2), 12),
        ) {
            let spec = triangular_spec(0.5, 0.5).unwrap();
            let histories: Vec<Vec<Point>> = (0..3)
                .map(|i| (0..4).map(|k| spec.offset(i) + Point::new(0.1 * k as f64, 1.0) + Point::new(jitter[i * 4 + k].0, jitter[i * 4 + k].1)).collect())
                .collect();
            let reference: Vec<Point> = (0..4).map(|k| Point::new(0.1 * k as f64, 1.0)).collect();
            let t = PlanarTransform::new(angle, Point::new(tx, ty));
            let moved: Vec<Vec<Point>> = histories.iter().map(|h| apply_transform(&t, h)).collect();
            let a = tracking_rmse(&histories[0], &reference).unwrap();
            let b = tracking_rmse(&moved[0], &apply_transform(&t, &reference)).unwrap();
            prop_assert!((a - b).abs() <= 1e-9);
            for (p, q) in formation_rmse(&histories, &spec).unwrap().iter().zip(formation_rmse(&moved, &spec).unwrap()) {
                prop_assert!((p.rmse - q.rmse).abs() <= 1e-9);
            }
        }
    }

    fn hover_fleet() -> (FleetPlan, StateSpaceModel) {
        let model = StateSpaceModel::new(QuadParams::crazyflie()).unwrap();
        let mut settings = FleetSettings::new(model.clone());
        settings.horizon = 2.0;
        settings.node_count = 21;
        let problem = FleetProblem::in_formation(
            triangular_spec(0.5, 0.5).unwrap(),
            &Hold {
                point: Point::new(0.0, 1.0),
            },
            settings,
        );
        (plan_fleet(&problem).unwrap(), model)
    }

    #[test]
    fn silent_hover_rollout_is_constant() {
        let model = StateSpaceModel::new(QuadParams::crazyflie()).unwrap();
        let layout = Layout::new(21, 2.0);
        let x0 = AgentState::hover_at(0.3, 1.0);
        let plan = TrajectoryPlan::constant(&layout, x0, ControlInput::hover(&model.params));
        let (mut fleet, _) = hover_fleet();
        fleet.plans = vec![plan.clone(), plan.translated(Point::new(-0.25, -0.5)), plan];
        let cfg = RolloutConfig::new(NoiseSpec::silent(), 2, 0.1);
        let report = rollout(&fleet, &model, &cfg).unwrap();
        for s in &report.trials[1].histories[0] {
            assert!((s.to_vector() - x0.to_vector()).amax() <= 1e-12);
        }
        assert_eq!(report.trials[0], report.trials[1]);
    }

    #[test]
    fn silent_rollout_ignores_seed() {
        let (fleet, model) = hover_fleet();
        let a = rollout(
            &fleet,
            &model,
            &RolloutConfig::new(NoiseSpec::new(0.0, 0.0, 1).unwrap(), 1, 0.1),
        )
        .unwrap();
        let b = rollout(
            &fleet,
            &model,
            &RolloutConfig::new(NoiseSpec::new(0.0, 0.0, 99).unwrap(), 1, 0.1),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noisy_rollout_is_reproducible() {
        let (fleet, model) = hover_fleet();
        let cfg = RolloutConfig::new(NoiseSpec::new(0.0, 0.2, 7).unwrap(), 3, 0.1);
        let a = rollout(&fleet, &model, &cfg).unwrap();
        let b = rollout(&fleet, &model, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.trials[0].histories, a.trials[1].histories);
    }

    #[test]
    fn grid_mismatch_rejected() {
        let (fleet, model) = hover_fleet();
        let cfg = RolloutConfig::new(NoiseSpec::silent(), 1, 0.05);
        assert!(matches!(
            rollout(&fleet, &model, &cfg),
            Err(SimError::GridMismatch { .. })
        ));
    }

    #[test]
    fn holds() {
        let a = ControlVector::new(1.0, 2.0);
        let b = ControlVector::new(3.0, 4.0);
        assert_eq!(FirstOrderHold.input_at(&a, &b, 0.1, 0.05), ControlVector::new(2.0, 3.0));
        assert_eq!(ZeroOrderHold.input_at(&a, &b, 0.1, 0.05), a);
    }
}
