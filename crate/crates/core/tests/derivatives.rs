use std::sync::Arc;

use proptest::prelude::*;

use quadform::model::{AgentState, ControlInput, QuadParams, StateSpaceModel, StateVector};
use quadform::ocp::{
    defect_constraints, defect_jacobian, objective, objective_gradient, CostWeights, LinearPenalty, OcpProblem,
    PenaltyTerm, TrajectoryPlan,
};
use quadform::Point;

const NODES: usize = 12;
const STEP: f64 = 1e-6;

fn model() -> StateSpaceModel {
    StateSpaceModel::new(QuadParams::crazyflie()).unwrap()
}

fn plan_from(p: &OcpProblem, z: &[f64]) -> TrajectoryPlan {
    TrajectoryPlan::from_flat(&p.layout(), z).unwrap()
}

/// Central differences of `f` in every coordinate of `z`.
fn central<F: Fn(&[f64]) -> Vec<f64>>(z: &[f64], f: F) -> Vec<Vec<f64>> {
    (0..z.len())
        .map(|i| {
            let mut plus = z.to_vec();
            let mut minus = z.to_vec();
            plus[i] += STEP;
            minus[i] -= STEP;
            f(&plus)
                .iter()
                .zip(f(&minus))
                .map(|(a, b)| (a - b) / (2.0 * STEP))
                .collect()
        })
        .collect()
}

fn leader(x0: AgentState, reference: Vec<Point>) -> OcpProblem {
    let target = StateVector::from_column_slice(&[reference[NODES - 1].x, 0.0, reference[NODES - 1].y, 0.0, 0.0, 0.0]);
    OcpProblem::new(model(), x0, 1.1, NODES, CostWeights::leader())
        .with_reference(reference)
        .with_terminal_target(target)
}

fn follower(x0: AgentState, partners: Vec<Vec<Point>>, linear: bool) -> OcpProblem {
    let mut p = OcpProblem::new(model(), x0, 1.1, NODES, CostWeights::follower());
    for (k, traj) in partners.into_iter().enumerate() {
        p = p.with_penalty(PenaltyTerm {
            partner: k,
            partner_trajectory: traj,
            desired_distance: 0.5,
            weight: 1.0,
        });
    }
    if linear {
        p = p.with_penalty_form(Arc::new(LinearPenalty));
    }
    p
}

fn points() -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec((-1.0..1.0f64, 0.0..2.0f64), NODES)
        .prop_map(|v| v.into_iter().map(|(y, z)| Point::new(y, z)).collect())
}

fn plan_for(p: &OcpProblem, values: &[f64]) -> TrajectoryPlan {
    let mut plan = TrajectoryPlan::constant(&p.layout(), p.initial_state, ControlInput::hover(&p.model.params));
    for (k, (s, u)) in plan.states.iter_mut().zip(plan.controls.iter_mut()).enumerate().skip(1) {
        let v = &values[8 * k..8 * k + 8];
        *s = AgentState::from_vector(&StateVector::from_column_slice(&v[..6]));
        u.u1 = v[6] * p.u1_bound;
        u.u2 = v[7] * p.u2_bound;
    }
    plan
}

fn check_gradient(p: &OcpProblem, plan: &TrajectoryPlan) -> Result<(), TestCaseError> {
    let g = objective_gradient(p, plan).unwrap();
    let fd = central(&plan.to_flat(), |z| vec![objective(p, &plan_from(p, z)).unwrap()]);
    let num: f64 = fd.iter().zip(&g).map(|(d, a)| (d[0] - a).powi(2)).sum::<f64>().sqrt();
    let den: f64 = fd.iter().map(|d| d[0] * d[0]).sum::<f64>().sqrt().max(1e-12);
    prop_assert!(num / den <= 1e-6, "relative gradient error {}", num / den);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn leader_gradient_matches_central_differences(
        reference in points(),
        values in prop::collection::vec(-1.0..1.0f64, 8 * NODES),
    ) {
        let x0 = AgentState::hover_at(reference[0].x, reference[0].y);
        let p = leader(x0, reference);
        check_gradient(&p, &plan_for(&p, &values))?;
    }

    #[test]
    fn follower_gradient_matches_central_differences(
        a in points(),
        b in points(),
        values in prop::collection::vec(-1.0..1.0f64, 8 * NODES),
        linear in any::<bool>(),
    ) {
        let p = follower(AgentState::hover_at(0.3, 0.6), vec![a, b], linear);
        let plan = plan_for(&p, &values);
        // The penalty is undefined for coincident agents.
        let closest = p
            .penalties
            .iter()
            .flat_map(|t| t.partner_trajectory.iter().zip(&plan.states).map(|(q, s)| (s.position() - q).norm()))
            .fold(f64::INFINITY, f64::min);
        prop_assume!(closest > 0.05);
        check_gradient(&p, &plan)?;
    }

    #[test]
    fn defect_jacobian_matches_central_differences(
        values in prop::collection::vec(-1.0..1.0f64, 8 * NODES),
    ) {
        let p = follower(AgentState::hover_at(0.0, 1.0), Vec::new(), false);
        let plan = plan_for(&p, &values);
        let dense = defect_jacobian(&p, &plan).unwrap().to_dense();
        let fd = central(&plan.to_flat(), |z| defect_constraints(&p, &plan_from(&p, z)).unwrap());
        let mut worst: f64 = 0.0;
        for (col, d) in fd.iter().enumerate() {
            for (row, v) in d.iter().enumerate() {
                worst = worst.max((v - dense[(row, col)]).abs());
            }
        }
        prop_assert!(worst <= 1e-6, "max jacobian error {worst}");
    }
}
