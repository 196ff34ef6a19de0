//! Trapezoidal direct transcription of one agent's finite-horizon problem.
//!
//! Decision vector layout: node-major, 8 entries per node,
//! `[y, y_dot, z, z_dot, phi, phi_dot, u1, u2]`. The first six entries
//! (the initial state) are pinned.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, Matrix2, SMatrix, SVector};
use thiserror::Error;

use crate::formation::Point;
use crate::model::{
    idx, AgentState, ControlInput, ControlVector, StateMatrix, StateSpaceModel, StateVector, CONTROL_DIM, STATE_DIM,
};

pub const VARS_PER_NODE: usize = STATE_DIM + CONTROL_DIM;
/// Separation below which the distance penalty has no usable gradient.
pub const COINCIDENCE_THRESHOLD: f64 = 1e-9;

type NodeVector = SVector<f64, VARS_PER_NODE>;
pub type DefectBlock = SMatrix<f64, STATE_DIM, VARS_PER_NODE>;
/// Hessian block coupling the variables of one node.
pub type NodeMatrix = SMatrix<f64, VARS_PER_NODE, VARS_PER_NODE>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OcpError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("agents coincide at node {node} (separation {separation:e} to partner {partner}); distance penalty gradient undefined")]
    DegenerateGeometry {
        node: usize,
        partner: usize,
        separation: f64,
    },
}

/// How a distance violation `d_desired − ‖Γ_i − Γ_j‖` is charged.
pub trait PenaltyForm: Debug + Send + Sync {
    fn name(&self) -> &'static str;
    fn value(&self, violation: f64) -> f64;
    fn slope(&self, violation: f64) -> f64;
    /// Second derivative in the violation; used only for preconditioning.
    fn curvature(&self) -> f64;
}

/// `v^2`. Well posed; the default.
#[derive(Clone, Copy, Debug, Default)]
pub struct SquaredPenalty;

impl PenaltyForm for SquaredPenalty {
    fn name(&self) -> &'static str {
        "squared"
    }
    fn value(&self, violation: f64) -> f64 {
        violation * violation
    }
    fn slope(&self, violation: f64) -> f64 {
        2.0 * violation
    }
    fn curvature(&self) -> f64 {
        2.0
    }
}

/// `v`, the literal multiplier form. Unbounded below in the separation.
#[derive(Clone, Copy, Debug, Default)]
pub struct LinearPenalty;

impl PenaltyForm for LinearPenalty {
    fn name(&self) -> &'static str {
        "linear"
    }
    fn value(&self, violation: f64) -> f64 {
        violation
    }
    fn slope(&self, _violation: f64) -> f64 {
        1.0
    }
    fn curvature(&self) -> f64 {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostWeights {
    /// R, symmetric positive definite.
    pub control: Matrix2<f64>,
    /// Q, symmetric; positive definite for the leader, zero for followers.
    pub tracking: Matrix2<f64>,
    /// P, symmetric positive definite.
    pub terminal: StateMatrix,
}

impl CostWeights {
    pub fn leader() -> Self {
        Self {
            control: Matrix2::identity(),
            tracking: Matrix2::identity(),
            terminal: StateMatrix::identity(),
        }
    }

    pub fn follower() -> Self {
        Self {
            tracking: Matrix2::zeros(),
            ..Self::leader()
        }
    }

    pub fn tracks(&self) -> bool {
        self.tracking != Matrix2::zeros()
    }

    pub fn validate(&self) -> Result<(), OcpError> {
        fn symmetric<const N: usize>(m: &SMatrix<f64, N, N>) -> bool {
            m.iter().all(|v| v.is_finite()) && (m - m.transpose()).amax() <= 1e-12 * m.amax().max(1.0)
        }
        if !symmetric(&self.control) || self.control.cholesky().is_none() {
            return Err(OcpError::Invalid(
                "control weight R must be symmetric positive definite".into(),
            ));
        }
        if !symmetric(&self.terminal) || self.terminal.cholesky().is_none() {
            return Err(OcpError::Invalid(
                "terminal weight P must be symmetric positive definite".into(),
            ));
        }
        if !symmetric(&self.tracking) || (self.tracks() && self.tracking.cholesky().is_none()) {
            return Err(OcpError::Invalid(
                "tracking weight Q must be symmetric and either positive definite or zero".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PenaltyTerm {
    /// Index of the partner agent, for diagnostics.
    pub partner: usize,
    pub partner_trajectory: Vec<Point>,
    pub desired_distance: f64,
    pub weight: f64,
}

#[derive(Clone, Debug)]
pub struct OcpProblem {
    pub model: StateSpaceModel,
    pub initial_state: AgentState,
    pub horizon: f64,
    pub node_count: usize,
    /// Γ^r per node; required when the tracking weight is non-zero.
    pub reference_trajectory: Option<Vec<Point>>,
    pub weights: CostWeights,
    pub penalties: Vec<PenaltyTerm>,
    pub penalty_form: Arc<dyn PenaltyForm>,
    pub u1_bound: f64,
    pub u2_bound: f64,
    /// The terminal cost is `(x(T) − target)' P (x(T) − target)`.
    pub terminal_target: StateVector,
    /// Known disturbance `w_k` per interval (length `node_count − 1`).
    pub disturbance: Option<Vec<StateVector>>,
}

impl OcpProblem {
    pub fn new(
        model: StateSpaceModel,
        initial_state: AgentState,
        horizon: f64,
        node_count: usize,
        weights: CostWeights,
    ) -> Self {
        let u1_bound = model.params.default_u1_bound();
        let u2_bound = model.params.default_u2_bound();
        Self {
            model,
            initial_state,
            horizon,
            node_count,
            reference_trajectory: None,
            weights,
            penalties: Vec::new(),
            penalty_form: Arc::new(SquaredPenalty),
            u1_bound,
            u2_bound,
            terminal_target: StateVector::zeros(),
            disturbance: None,
        }
    }

    pub fn with_reference(mut self, reference: Vec<Point>) -> Self {
        self.reference_trajectory = Some(reference);
        self
    }

    pub fn with_penalty(mut self, term: PenaltyTerm) -> Self {
        self.penalties.push(term);
        self
    }

    pub fn with_penalty_form(mut self, form: Arc<dyn PenaltyForm>) -> Self {
        self.penalty_form = form;
        self
    }

    pub fn with_bounds(mut self, u1_bound: f64, u2_bound: f64) -> Self {
        self.u1_bound = u1_bound;
        self.u2_bound = u2_bound;
        self
    }

    pub fn with_terminal_target(mut self, target: StateVector) -> Self {
        self.terminal_target = target;
        self
    }

    pub fn with_disturbance(mut self, disturbance: Vec<StateVector>) -> Self {
        self.disturbance = Some(disturbance);
        self
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.node_count, self.horizon)
    }

    pub fn validate(&self) -> Result<(), OcpError> {
        if self.node_count < 2 {
            return Err(OcpError::Invalid(format!(
                "node_count must be >= 2, got {}",
                self.node_count
            )));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(OcpError::Invalid(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        for (name, b) in [("u1_bound", self.u1_bound), ("u2_bound", self.u2_bound)] {
            if !(b.is_finite() && b > 0.0) {
                return Err(OcpError::Invalid(format!("{name} must be positive, got {b}")));
            }
        }
        if !self.initial_state.is_finite() {
            return Err(OcpError::Invalid("initial state is not finite".into()));
        }
        self.weights.validate()?;
        if self.weights.tracks() {
            match &self.reference_trajectory {
                None => {
                    return Err(OcpError::Invalid(
                        "tracking weight set without a reference trajectory".into(),
                    ))
                }
                Some(r) if r.len() != self.node_count => {
                    return Err(OcpError::DimensionMismatch {
                        what: "reference trajectory",
                        expected: self.node_count,
                        got: r.len(),
                    })
                }
                _ => {}
            }
        }
        for term in &self.penalties {
            if term.partner_trajectory.len() != self.node_count {
                return Err(OcpError::DimensionMismatch {
                    what: "partner trajectory",
                    expected: self.node_count,
                    got: term.partner_trajectory.len(),
                });
            }
            if !(term.weight.is_finite() && term.weight >= 0.0) {
                return Err(OcpError::Invalid(format!(
                    "penalty weight must be >= 0, got {}",
                    term.weight
                )));
            }
            if !(term.desired_distance.is_finite() && term.desired_distance > 0.0) {
                return Err(OcpError::Invalid("desired distance must be positive".into()));
            }
        }
        if let Some(w) = &self.disturbance {
            if w.len() != self.node_count - 1 {
                return Err(OcpError::DimensionMismatch {
                    what: "disturbance sequence",
                    expected: self.node_count - 1,
                    got: w.len(),
                });
            }
        }
        Ok(())
    }
}

/// Flat decision-vector indexing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Layout {
    pub node_count: usize,
    pub horizon: f64,
}

impl Layout {
    pub fn new(node_count: usize, horizon: f64) -> Self {
        Self { node_count, horizon }
    }

    pub fn dt(&self) -> f64 {
        self.horizon / (self.node_count - 1) as f64
    }

    pub fn dimension(&self) -> usize {
        self.node_count * VARS_PER_NODE
    }

    pub fn node_offset(&self, node: usize) -> usize {
        node * VARS_PER_NODE
    }

    pub fn state_index(&self, node: usize, component: usize) -> usize {
        node * VARS_PER_NODE + component
    }

    pub fn control_index(&self, node: usize, component: usize) -> usize {
        node * VARS_PER_NODE + STATE_DIM + component
    }

    /// Indices fixed to the initial state.
    pub fn pinned(&self) -> std::ops::Range<usize> {
        0..STATE_DIM
    }

    pub fn is_pinned(&self, index: usize) -> bool {
        index < STATE_DIM
    }

    pub fn times(&self) -> Vec<f64> {
        let dt = self.dt();
        (0..self.node_count)
            .map(|k| {
                if k + 1 == self.node_count {
                    self.horizon
                } else {
                    k as f64 * dt
                }
            })
            .collect()
    }

    /// Trapezoidal quadrature weights.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        let dt = self.dt();
        (0..self.node_count)
            .map(|k| {
                if k == 0 || k + 1 == self.node_count {
                    0.5 * dt
                } else {
                    dt
                }
            })
            .collect()
    }
}

pub fn transcribe(problem: &OcpProblem) -> Layout {
    problem.layout()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryPlan {
    pub times: Vec<f64>,
    pub states: Vec<AgentState>,
    pub controls: Vec<ControlInput>,
}

impl TrajectoryPlan {
    pub fn from_flat(layout: &Layout, z: &[f64]) -> Result<Self, OcpError> {
        check_len("decision vector", layout.dimension(), z.len())?;
        let mut states = Vec::with_capacity(layout.node_count);
        let mut controls = Vec::with_capacity(layout.node_count);
        for chunk in z.chunks_exact(VARS_PER_NODE) {
            states.push(AgentState::from_vector(&StateVector::from_column_slice(
                &chunk[..STATE_DIM],
            )));
            controls.push(ControlInput::new(chunk[STATE_DIM], chunk[STATE_DIM + 1]));
        }
        Ok(Self {
            times: layout.times(),
            states,
            controls,
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.len() * VARS_PER_NODE);
        for (s, u) in self.states.iter().zip(&self.controls) {
            z.extend(s.to_vector().iter());
            z.push(u.u1);
            z.push(u.u2);
        }
        z
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn positions(&self) -> Vec<Point> {
        self.states.iter().map(AgentState::position).collect()
    }

    /// Constant state and input at every node.
    pub fn constant(layout: &Layout, state: AgentState, input: ControlInput) -> Self {
        Self {
            times: layout.times(),
            states: vec![state; layout.node_count],
            controls: vec![input; layout.node_count],
        }
    }

    /// States linearly interpolated from `start` to `end`, controls constant.
    pub fn interpolated(layout: &Layout, start: &StateVector, end: &StateVector, input: ControlInput) -> Self {
        let n = layout.node_count;
        let states = (0..n)
            .map(|k| {
                let a = k as f64 / (n - 1) as f64;
                AgentState::from_vector(&(start * (1.0 - a) + end * a))
            })
            .collect();
        Self {
            times: layout.times(),
            states,
            controls: vec![input; n],
        }
    }

    /// Same plan with positions shifted by `delta`.
    pub fn translated(&self, delta: Point) -> Self {
        let mut out = self.clone();
        for s in &mut out.states {
            s.y += delta.x;
            s.z += delta.y;
        }
        out
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), OcpError> {
    if expected != got {
        return Err(OcpError::DimensionMismatch { what, expected, got });
    }
    Ok(())
}

fn node(z: &[f64], k: usize) -> NodeVector {
    NodeVector::from_column_slice(&z[k * VARS_PER_NODE..(k + 1) * VARS_PER_NODE])
}

/// Precomputed per-problem quantities shared by every evaluation.
#[derive(Clone, Debug)]
pub struct Transcription<'a> {
    pub problem: &'a OcpProblem,
    pub layout: Layout,
    pub jacobian: DefectJacobian,
    quadrature: Vec<f64>,
    /// Constant part of each interval's defect.
    offsets: Vec<StateVector>,
}

impl<'a> Transcription<'a> {
    pub fn new(problem: &'a OcpProblem) -> Result<Self, OcpError> {
        problem.validate()?;
        let layout = problem.layout();
        let dt = layout.dt();
        let jacobian = DefectJacobian::new(&problem.model, &layout);
        let gravity = problem.model.gravity_vector;
        let offsets = (0..layout.node_count - 1)
            .map(|k| {
                let w = problem
                    .disturbance
                    .as_ref()
                    .map(|d| problem.model.noise_gain * d[k])
                    .unwrap_or_else(StateVector::zeros);
                -(gravity + w) * dt
            })
            .collect();
        Ok(Self {
            problem,
            layout,
            jacobian,
            quadrature: layout.quadrature_weights(),
            offsets,
        })
    }

    pub fn dimension(&self) -> usize {
        self.layout.dimension()
    }

    pub fn defect_count(&self) -> usize {
        (self.layout.node_count - 1) * STATE_DIM
    }

    /// Running, terminal and penalty cost.
    pub fn objective(&self, z: &[f64]) -> f64 {
        self.running_and_terminal(z) + self.penalty_cost(z)
    }

    fn running_and_terminal(&self, z: &[f64]) -> f64 {
        let p = self.problem;
        let w = &p.weights;
        let tracks = w.tracks();
        let mut cost = 0.0;
        for k in 0..self.layout.node_count {
            let v = node(z, k);
            let u = ControlVector::new(v[STATE_DIM], v[STATE_DIM + 1]);
            let mut running = u.dot(&(w.control * u));
            if tracks {
                let reference = p.reference_trajectory.as_ref().expect("validated")[k];
                let e = Point::new(v[idx::Y], v[idx::Z]) - reference;
                running += e.dot(&(w.tracking * e));
            }
            cost += self.quadrature[k] * running;
        }
        let last = node(z, self.layout.node_count - 1);
        let e = last.fixed_rows::<STATE_DIM>(0) - p.terminal_target;
        cost + e.dot(&(w.terminal * e))
    }

    /// Distance-penalty part of the objective alone.
    pub fn penalty_cost(&self, z: &[f64]) -> f64 {
        let p = self.problem;
        let dt = self.layout.dt();
        let mut cost = 0.0;
        for term in p.penalties.iter().filter(|t| t.weight != 0.0) {
            for (k, partner) in term.partner_trajectory.iter().enumerate() {
                let o = k * VARS_PER_NODE;
                let sep = (Point::new(z[o + idx::Y], z[o + idx::Z]) - partner).norm();
                cost += term.weight * dt * p.penalty_form.value(term.desired_distance - sep);
            }
        }
        cost
    }

    /// Writes the objective gradient into `out`.
    pub fn gradient_into(&self, z: &[f64], out: &mut [f64]) -> Result<(), OcpError> {
        let p = self.problem;
        let w = &p.weights;
        let tracks = w.tracks();
        out.iter_mut().for_each(|g| *g = 0.0);
        for k in 0..self.layout.node_count {
            let o = k * VARS_PER_NODE;
            let q = self.quadrature[k];
            let u = ControlVector::new(z[o + STATE_DIM], z[o + STATE_DIM + 1]);
            let gu = (w.control + w.control.transpose()) * u * q;
            out[o + STATE_DIM] += gu[0];
            out[o + STATE_DIM + 1] += gu[1];
            if tracks {
                let reference = p.reference_trajectory.as_ref().expect("validated")[k];
                let e = Point::new(z[o + idx::Y], z[o + idx::Z]) - reference;
                let ge = (w.tracking + w.tracking.transpose()) * e * q;
                out[o + idx::Y] += ge[0];
                out[o + idx::Z] += ge[1];
            }
        }
        let o = self.layout.node_offset(self.layout.node_count - 1);
        let e = StateVector::from_column_slice(&z[o..o + STATE_DIM]) - p.terminal_target;
        let ge = (w.terminal + w.terminal.transpose()) * e;
        for i in 0..STATE_DIM {
            out[o + i] += ge[i];
        }

        let dt = self.layout.dt();
        for term in p.penalties.iter().filter(|t| t.weight != 0.0) {
            for (k, partner) in term.partner_trajectory.iter().enumerate() {
                let o = k * VARS_PER_NODE;
                let diff = Point::new(z[o + idx::Y], z[o + idx::Z]) - partner;
                let sep = diff.norm();
                if sep < COINCIDENCE_THRESHOLD {
                    return Err(OcpError::DegenerateGeometry {
                        node: k,
                        partner: term.partner,
                        separation: sep,
                    });
                }
                let slope = p.penalty_form.slope(term.desired_distance - sep);
                let g = diff * (-term.weight * dt * slope / sep);
                out[o + idx::Y] += g.x;
                out[o + idx::Z] += g.y;
            }
        }
        Ok(())
    }

    pub fn gradient(&self, z: &[f64]) -> Result<Vec<f64>, OcpError> {
        let mut g = vec![0.0; z.len()];
        self.gradient_into(z, &mut g)?;
        Ok(g)
    }

    pub fn defects_into(&self, z: &[f64], out: &mut [f64]) {
        let j = &self.jacobian;
        for k in 0..self.layout.node_count - 1 {
            let c = j.left * node(z, k) + j.right * node(z, k + 1) + self.offsets[k];
            out[k * STATE_DIM..(k + 1) * STATE_DIM].copy_from_slice(c.as_slice());
        }
    }

    pub fn defects(&self, z: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; self.defect_count()];
        self.defects_into(z, &mut c);
        c
    }

    /// Per-node blocks of the objective Hessian; the objective has no
    /// cross-node terms. Distance penalties contribute their Gauss-Newton
    /// part, curvature along the current separation only, so every block is
    /// positive semidefinite.
    pub fn objective_hessian_blocks(&self, z: &[f64]) -> Vec<NodeMatrix> {
        let p = self.problem;
        let w = &p.weights;
        let control = w.control + w.control.transpose();
        let tracking = w.tracking + w.tracking.transpose();
        let dt = self.layout.dt();
        let pos = [idx::Y, idx::Z];
        let mut blocks = vec![NodeMatrix::zeros(); self.layout.node_count];
        for (k, b) in blocks.iter_mut().enumerate() {
            let q = self.quadrature[k];
            b.fixed_view_mut::<CONTROL_DIM, CONTROL_DIM>(STATE_DIM, STATE_DIM)
                .copy_from(&(control * q));
            for (a, &i) in pos.iter().enumerate() {
                for (c, &j) in pos.iter().enumerate() {
                    b[(i, j)] += q * tracking[(a, c)];
                }
            }
        }
        let last = blocks.last_mut().expect("node_count >= 2");
        let terminal = w.terminal + w.terminal.transpose();
        let mut corner = last.fixed_view_mut::<STATE_DIM, STATE_DIM>(0, 0);
        corner += terminal;

        let curvature = p.penalty_form.curvature();
        for term in p.penalties.iter().filter(|t| t.weight != 0.0) {
            let scale = term.weight * dt * curvature;
            for (k, partner) in term.partner_trajectory.iter().enumerate() {
                let o = k * VARS_PER_NODE;
                let diff = Point::new(z[o + idx::Y], z[o + idx::Z]) - partner;
                let sep = diff.norm();
                let outer = if sep < COINCIDENCE_THRESHOLD {
                    Matrix2::identity() * 0.5
                } else {
                    let n = diff / sep;
                    n * n.transpose()
                };
                for (a, &i) in pos.iter().enumerate() {
                    for (c, &j) in pos.iter().enumerate() {
                        blocks[k][(i, j)] += scale * outer[(a, c)];
                    }
                }
            }
        }
        blocks
    }

    /// Diagonal of the objective Hessian, with the distance penalty replaced
    /// by its curvature along the separation direction.
    pub fn objective_hessian_diagonal(&self) -> Vec<f64> {
        let p = self.problem;
        let w = &p.weights;
        let mut d = vec![0.0; self.dimension()];
        let dt = self.layout.dt();
        let penalty_curv: f64 = p
            .penalties
            .iter()
            .map(|t| t.weight * dt * p.penalty_form.curvature())
            .sum();
        for k in 0..self.layout.node_count {
            let o = k * VARS_PER_NODE;
            let q = self.quadrature[k];
            d[o + STATE_DIM] += 2.0 * q * w.control[(0, 0)];
            d[o + STATE_DIM + 1] += 2.0 * q * w.control[(1, 1)];
            d[o + idx::Y] += 2.0 * q * w.tracking[(0, 0)] + penalty_curv;
            d[o + idx::Z] += 2.0 * q * w.tracking[(1, 1)] + penalty_curv;
        }
        let o = self.layout.node_offset(self.layout.node_count - 1);
        for i in 0..STATE_DIM {
            d[o + i] += 2.0 * w.terminal[(i, i)];
        }
        d
    }
}

/// Jacobian of the trapezoidal defects. LTI dynamics make it constant and
/// block-bidiagonal: interval `k` touches only nodes `k` and `k + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct DefectJacobian {
    pub node_count: usize,
    /// `∂c_k / ∂(x_k, u_k) = [−I − dt/2 A, −dt/2 B]`
    pub left: DefectBlock,
    /// `∂c_k / ∂(x_{k+1}, u_{k+1}) = [I − dt/2 A, −dt/2 B]`
    pub right: DefectBlock,
}

impl DefectJacobian {
    pub fn new(model: &StateSpaceModel, layout: &Layout) -> Self {
        let h = 0.5 * layout.dt();
        let mut left = DefectBlock::zeros();
        let mut right = DefectBlock::zeros();
        let a = model.a_matrix * h;
        let b = model.b_matrix * h;
        left.fixed_view_mut::<STATE_DIM, STATE_DIM>(0, 0)
            .copy_from(&(-StateMatrix::identity() - a));
        right
            .fixed_view_mut::<STATE_DIM, STATE_DIM>(0, 0)
            .copy_from(&(StateMatrix::identity() - a));
        left.fixed_view_mut::<STATE_DIM, CONTROL_DIM>(0, STATE_DIM)
            .copy_from(&(-b));
        right
            .fixed_view_mut::<STATE_DIM, CONTROL_DIM>(0, STATE_DIM)
            .copy_from(&(-b));
        Self {
            node_count: layout.node_count,
            left,
            right,
        }
    }

    pub fn rows(&self) -> usize {
        (self.node_count - 1) * STATE_DIM
    }

    pub fn cols(&self) -> usize {
        self.node_count * VARS_PER_NODE
    }

    /// Entry `(row, col)`; zero outside the two adjacent node blocks.
    pub fn entry(&self, row: usize, col: usize) -> f64 {
        let interval = row / STATE_DIM;
        let r = row % STATE_DIM;
        let node = col / VARS_PER_NODE;
        let c = col % VARS_PER_NODE;
        if node == interval {
            self.left[(r, c)]
        } else if node == interval + 1 {
            self.right[(r, c)]
        } else {
            0.0
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows(), self.cols());
        for k in 0..self.node_count - 1 {
            m.fixed_view_mut::<STATE_DIM, VARS_PER_NODE>(k * STATE_DIM, k * VARS_PER_NODE)
                .copy_from(&self.left);
            m.fixed_view_mut::<STATE_DIM, VARS_PER_NODE>(k * STATE_DIM, (k + 1) * VARS_PER_NODE)
                .copy_from(&self.right);
        }
        m
    }

    /// `out += J' v`.
    pub fn transpose_mul_add(&self, v: &[f64], out: &mut [f64]) {
        let lt = self.left.transpose();
        let rt = self.right.transpose();
        for k in 0..self.node_count - 1 {
            let vk = StateVector::from_column_slice(&v[k * STATE_DIM..(k + 1) * STATE_DIM]);
            let a = lt * vk;
            let b = rt * vk;
            let o = k * VARS_PER_NODE;
            for i in 0..VARS_PER_NODE {
                out[o + i] += a[i];
                out[o + VARS_PER_NODE + i] += b[i];
            }
        }
    }

    /// Squared column norms, i.e. `diag(J' J)`.
    pub fn column_sq_norms(&self) -> Vec<f64> {
        let l: Vec<f64> = (0..VARS_PER_NODE).map(|c| self.left.column(c).norm_squared()).collect();
        let r: Vec<f64> = (0..VARS_PER_NODE)
            .map(|c| self.right.column(c).norm_squared())
            .collect();
        let mut d = vec![0.0; self.cols()];
        for k in 0..self.node_count {
            for c in 0..VARS_PER_NODE {
                let mut s = 0.0;
                if k + 1 < self.node_count {
                    s += l[c];
                }
                if k > 0 {
                    s += r[c];
                }
                d[k * VARS_PER_NODE + c] = s;
            }
        }
        d
    }
}

fn plan_vector(problem: &OcpProblem, plan: &TrajectoryPlan) -> Result<Vec<f64>, OcpError> {
    check_len("plan nodes", problem.node_count, plan.len())?;
    check_len("plan controls", problem.node_count, plan.controls.len())?;
    Ok(plan.to_flat())
}

pub fn objective(problem: &OcpProblem, plan: &TrajectoryPlan) -> Result<f64, OcpError> {
    let z = plan_vector(problem, plan)?;
    Ok(Transcription::new(problem)?.objective(&z))
}

/// Gradient with respect to every decision variable, pinned entries included.
pub fn objective_gradient(problem: &OcpProblem, plan: &TrajectoryPlan) -> Result<Vec<f64>, OcpError> {
    let z = plan_vector(problem, plan)?;
    Transcription::new(problem)?.gradient(&z)
}

pub fn defect_constraints(problem: &OcpProblem, plan: &TrajectoryPlan) -> Result<Vec<f64>, OcpError> {
    let z = plan_vector(problem, plan)?;
    Ok(Transcription::new(problem)?.defects(&z))
}

pub fn defect_jacobian(problem: &OcpProblem, plan: &TrajectoryPlan) -> Result<DefectJacobian, OcpError> {
    plan_vector(problem, plan)?;
    problem.validate()?;
    Ok(DefectJacobian::new(&problem.model, &problem.layout()))
}

/// Plan with zero defects: states propagated from the initial state through
/// the trapezoidal recurrence under `controls`.
pub fn feasible_plan(problem: &OcpProblem, controls: &[ControlInput]) -> Result<TrajectoryPlan, OcpError> {
    let tr = Transcription::new(problem)?;
    check_len("controls", tr.layout.node_count, controls.len())?;
    let dt = tr.layout.dt();
    let a = problem.model.a_matrix;
    let b = problem.model.b_matrix;
    let implicit = (StateMatrix::identity() - a * (0.5 * dt))
        .try_inverse()
        .ok_or_else(|| OcpError::Invalid("trapezoidal step matrix is singular".into()))?;
    let explicit = StateMatrix::identity() + a * (0.5 * dt);
    let mut states = Vec::with_capacity(controls.len());
    let mut x = problem.initial_state.to_vector();
    states.push(problem.initial_state);
    for (k, pair) in controls.windows(2).enumerate() {
        let u = pair[0].to_vector() + pair[1].to_vector();
        x = implicit * (explicit * x + b * u * (0.5 * dt) - tr.offsets[k]);
        states.push(AgentState::from_vector(&x));
    }
    Ok(TrajectoryPlan {
        times: tr.layout.times(),
        states,
        controls: controls.to_vec(),
    })
}
