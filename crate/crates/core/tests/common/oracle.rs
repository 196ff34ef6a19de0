//! Dense reference solution of convex leader problems.

use quadform::nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use quadform::formation::Point;
use quadform::model::{AgentState, ControlInput, QuadParams, StateMatrix, StateSpaceModel, StateVector};
use quadform::ocp::{CostWeights, OcpProblem, TrajectoryPlan};
use quadform::solver::SolverConfig;

pub const DT: f64 = 0.1;

/// Leader problem with random weights and a random sinusoid, starting
/// near the reference.
pub fn random_leader(rng: &mut ChaCha8Rng, nodes: usize) -> OcpProblem {
    let model = StateSpaceModel::new(QuadParams::crazyflie()).unwrap();
    let horizon = (nodes - 1) as f64 * DT;
    let speed = rng.random_range(0.05..0.15);
    let amplitude = rng.random_range(0.1..0.3);
    let omega = std::f64::consts::TAU / horizon * rng.random_range(0.5..1.0);
    let base = rng.random_range(0.8..1.2);
    let x0 = AgentState {
        y: rng.random_range(-0.05..0.05),
        y_dot: rng.random_range(-0.05..0.05),
        z: base + rng.random_range(-0.05..0.05),
        z_dot: rng.random_range(-0.05..0.05),
        phi: 0.0,
        phi_dot: 0.0,
    };
    let mut diag = |n: usize| DVector::from_fn(n, |_, _| rng.random_range(0.5..2.0));
    let r = diag(2);
    let q = diag(2);
    let p = diag(6);
    // Torque is weighted in units of its bound so that the unconstrained
    // optimum stays inside the box.
    let u2_scale = model.params.default_u2_bound();
    let weights = CostWeights {
        control: Matrix2::from_diagonal(&Vector2::new(r[0], r[1] / (u2_scale * u2_scale))),
        tracking: Matrix2::from_diagonal(&Vector2::new(q[0], q[1])),
        terminal: StateMatrix::from_diagonal(&StateVector::from_column_slice(p.as_slice())),
    };
    let reference: Vec<Point> = (0..nodes)
        .map(|k| {
            let t = k as f64 * DT;
            Point::new(speed * t, base + amplitude * (omega * t).sin())
        })
        .collect();
    let last = reference[nodes - 1];
    let target = StateVector::from_column_slice(&[last.x, 0.0, last.y, 0.0, 0.0, 0.0]);
    OcpProblem::new(model, x0, horizon, nodes, weights)
        .with_reference(reference)
        .with_terminal_target(target)
}

/// Next random instance whose unconstrained optimum stays strictly inside
/// the control bounds, with that optimum's objective.
pub fn inactive_instance(rng: &mut ChaCha8Rng, nodes: usize) -> (OcpProblem, f64) {
    loop {
        let p = random_leader(rng, nodes);
        let (objective, z) = dense_optimum(&p);
        let inside =
            (0..nodes).all(|k| z[8 * k + 6].abs() < 0.99 * p.u1_bound && z[8 * k + 7].abs() < 0.99 * p.u2_bound);
        if inside {
            return (p, objective);
        }
    }
}

/// Minimum of the transcribed problem by solving the equality-constrained
/// KKT system densely.
pub fn dense_optimum(p: &OcpProblem) -> (f64, DVector<f64>) {
    let n_nodes = p.node_count;
    let n = 8 * n_nodes;
    let m = 6 * (n_nodes - 1) + 6;
    let mut h_mat = DMatrix::<f64>::zeros(n, n);
    let mut h = DVector::<f64>::zeros(n);
    let mut c0 = 0.0;
    let reference = p.reference_trajectory.as_ref().unwrap();
    for (k, point) in reference.iter().enumerate() {
        let q = if k == 0 || k + 1 == n_nodes { 0.5 * DT } else { DT };
        let o = 8 * k;
        for i in 0..2 {
            h_mat[(o + 6 + i, o + 6 + i)] += 2.0 * q * p.weights.control[(i, i)];
        }
        let r = [point.x, point.y];
        for (i, pos) in [0, 2].into_iter().enumerate() {
            let w = p.weights.tracking[(i, i)];
            h_mat[(o + pos, o + pos)] += 2.0 * q * w;
            h[o + pos] -= 2.0 * q * w * r[i];
            c0 += q * w * r[i] * r[i];
        }
    }
    let o = 8 * (n_nodes - 1);
    for i in 0..6 {
        let w = p.weights.terminal[(i, i)];
        let t = p.terminal_target[i];
        h_mat[(o + i, o + i)] += 2.0 * w;
        h[o + i] -= 2.0 * w * t;
        c0 += w * t * t;
    }

    let a = p.model.a_matrix;
    let b = p.model.b_matrix;
    let mut e = DMatrix::<f64>::zeros(m, n);
    let mut rhs = DVector::<f64>::zeros(m);
    for k in 0..n_nodes - 1 {
        let row = 6 * k;
        let (ok, on) = (8 * k, 8 * (k + 1));
        for i in 0..6 {
            for j in 0..6 {
                let id = if i == j { 1.0 } else { 0.0 };
                e[(row + i, on + j)] = id - 0.5 * DT * a[(i, j)];
                e[(row + i, ok + j)] = -id - 0.5 * DT * a[(i, j)];
            }
            for j in 0..2 {
                e[(row + i, ok + 6 + j)] = -0.5 * DT * b[(i, j)];
                e[(row + i, on + 6 + j)] = -0.5 * DT * b[(i, j)];
            }
            rhs[row + i] = DT * p.model.gravity_vector[i];
        }
    }
    let x0 = p.initial_state.to_vector();
    for i in 0..6 {
        e[(m - 6 + i, i)] = 1.0;
        rhs[m - 6 + i] = x0[i];
    }

    let mut kkt = DMatrix::<f64>::zeros(n + m, n + m);
    kkt.view_mut((0, 0), (n, n)).copy_from(&h_mat);
    kkt.view_mut((0, n), (n, m)).copy_from(&e.transpose());
    kkt.view_mut((n, 0), (m, n)).copy_from(&e);
    let mut b_vec = DVector::<f64>::zeros(n + m);
    b_vec.rows_mut(0, n).copy_from(&(-&h));
    b_vec.rows_mut(n, m).copy_from(&rhs);
    let sol = kkt.lu().solve(&b_vec).expect("KKT system is nonsingular");
    let z = sol.rows(0, n).into_owned();
    (0.5 * z.dot(&(&h_mat * &z)) + h.dot(&z) + c0, z)
}

pub fn hover_guess(p: &OcpProblem) -> TrajectoryPlan {
    let x0 = p.initial_state;
    TrajectoryPlan::constant(
        &p.layout(),
        AgentState::hover_at(x0.y, x0.z),
        ControlInput::hover(&p.model.params),
    )
}

/// Residual defects of size `tol` shift the objective by roughly `ν'c`, up to
/// 1e-5 relative at the default 1e-6, so the comparison runs tighter.
pub fn tight() -> SolverConfig {
    SolverConfig {
        gradient_tolerance: 1e-8,
        defect_tolerance: 1e-8,
        ..SolverConfig::default()
    }
}
