use quadform::coordinator::{
    broadcast_message, decode_message, plan_fleet, AgentRole, FleetProblem, FleetSettings, MessageError,
};
use quadform::formation::triangular_spec;
use quadform::ocp::Layout;
use quadform::reference::{ReferenceParams, Sinusoid};
use quadform::{AgentState, ControlInput, Point, QuadParams, SolverConfig, StateSpaceModel, TrajectoryPlan};

const GOLDEN: &str = include_str!("data/leader_message.txt");

fn golden_plan() -> TrajectoryPlan {
    let mut plan = TrajectoryPlan::constant(&Layout::new(3, 1.0), AgentState::default(), ControlInput::new(0.0, 0.0));
    for (s, (y, z)) in plan.states.iter_mut().zip([(0.0, 1.0), (0.05, 1.25), (0.1, 1.5)]) {
        s.y = y;
        s.z = z;
    }
    plan
}

#[test]
fn leader_message_matches_golden_file() {
    let role = AgentRole {
        index: 0,
        is_leader: true,
    };
    assert_eq!(broadcast_message(&golden_plan(), role), GOLDEN);

    let decoded = decode_message(GOLDEN).unwrap();
    assert_eq!(decoded.role, role);
    assert_eq!(decoded.times, vec![0.0, 0.5, 1.0]);
    assert_eq!(
        decoded.positions,
        vec![Point::new(0.0, 1.0), Point::new(0.05, 1.25), Point::new(0.1, 1.5)]
    );
}

#[test]
fn golden_message_rejects_edits() {
    let extra = GOLDEN.replace("nodes 3", "nodes 4");
    assert!(matches!(
        decode_message(&extra),
        Err(MessageError::Truncated { rows: 3, expected: 4 })
    ));
    let version = GOLDEN.replace("state 1", "state 2");
    assert!(matches!(
        decode_message(&version),
        Err(MessageError::Malformed { line: 1, .. })
    ));
    let trailing = format!("{GOLDEN}0 0 0\n");
    assert!(matches!(
        decode_message(&trailing),
        Err(MessageError::Malformed { line: 10, .. })
    ));
}

/// At the default 1e-6 tolerances each follower solve leaves the penalty
/// uncertain by a few 1e-9, about its drift between sweeps, so the check
/// runs tighter.
#[test]
fn formation_penalty_does_not_grow_across_sweeps() {
    let model = StateSpaceModel::new(QuadParams::crazyflie()).unwrap();
    let mut settings = FleetSettings::new(model);
    settings.sweeps = 4;
    settings.solver = SolverConfig {
        gradient_tolerance: 1e-8,
        defect_tolerance: 1e-8,
        ..SolverConfig::default()
    };
    let reference = Sinusoid::from_params(&ReferenceParams::default(), settings.horizon);
    let spec = triangular_spec(0.5, 0.5).unwrap();
    let fleet = plan_fleet(&FleetProblem::in_formation(spec, &reference, settings)).unwrap();
    assert!(fleet.converged());
    let h = &fleet.penalty_history;
    assert_eq!(h.len(), 4);
    for w in h.windows(2) {
        assert!(w[1] <= w[0] + 1e-9, "{h:?}");
    }
}
