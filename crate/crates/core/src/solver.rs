//! Box-constrained solver for transcribed problems.
//!
//! Outer loop: augmented Lagrangian on the collocation defects,
//! `f(z) + λ'c(z) + ρ‖c(z)‖²`, with `ρ` multiplied by the growth factor while
//! the defects exceed tolerance. Inner loop: monotone Armijo backtracking
//! along the projection arc `clamp(z + t d)`, where the direction `d` comes
//! from one of two metrics:
//!
//! * `diagonal`: Jacobi-scaled projected gradient with Barzilai-Borwein step
//!   estimates.
//! * `newton`: two-metric projected Newton. Coordinates at an active bound
//!   take a scaled gradient step; the rest take a damped Newton step on the
//!   block-tridiagonal merit Hessian, factored as a band matrix.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::STATE_DIM;
use crate::ocp::{NodeMatrix, OcpError, OcpProblem, TrajectoryPlan, Transcription, VARS_PER_NODE};

const BB_MIN_STEP: f64 = 1e-8;
const BB_MAX_STEP: f64 = 1e2;
const MIN_ARMIJO_STEP: f64 = 1e-16;
/// Largest distance to a bound, as a fraction of the box width, at which a
/// coordinate may be treated as active by the Newton metric.
const ACTIVE_FRACTION: f64 = 1e-3;
/// Lower half-bandwidth of the merit Hessian: two adjacent nodes.
const BANDWIDTH: usize = 2 * VARS_PER_NODE - 1;

/// How the inner loop turns the merit gradient into a search direction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepMetric {
    Diagonal,
    #[default]
    Newton,
}

impl StepMetric {
    pub const NAMES: &'static [&'static str] = &["diagonal", "newton"];

    pub fn name(self) -> &'static str {
        match self {
            Self::Diagonal => "diagonal",
            Self::Newton => "newton",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "diagonal" => Some(Self::Diagonal),
            "newton" => Some(Self::Newton),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error(transparent)]
    Problem(#[from] OcpError),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite merit {value} in penalty round {round}, iteration {iteration}")]
    NonFinite {
        round: usize,
        iteration: usize,
        value: f64,
        /// The decision vector that produced it.
        iterate: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Inner iterations allowed per penalty round.
    pub max_iterations: usize,
    pub max_penalty_rounds: usize,
    pub gradient_tolerance: f64,
    pub defect_tolerance: f64,
    pub defect_penalty_initial: f64,
    pub defect_penalty_growth: f64,
    pub line_search_shrink: f64,
    pub armijo_constant: f64,
    pub step_metric: StepMetric,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50_000,
            max_penalty_rounds: 12,
            gradient_tolerance: 1e-6,
            defect_tolerance: 1e-6,
            defect_penalty_initial: 10.0,
            defect_penalty_growth: 10.0,
            line_search_shrink: 0.5,
            armijo_constant: 1e-4,
            step_metric: StepMetric::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        let positive = [
            ("gradient_tolerance", self.gradient_tolerance),
            ("defect_tolerance", self.defect_tolerance),
            ("defect_penalty_initial", self.defect_penalty_initial),
            ("defect_penalty_growth", self.defect_penalty_growth),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(SolveError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_iterations == 0 || self.max_penalty_rounds == 0 {
            return Err(SolveError::InvalidConfig(
                "max_iterations and max_penalty_rounds must be at least 1".into(),
            ));
        }
        for (name, v) in [
            ("line_search_shrink", self.line_search_shrink),
            ("armijo_constant", self.armijo_constant),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(SolveError::InvalidConfig(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub plan: TrajectoryPlan,
    pub converged: bool,
    /// Inner iterations summed over all penalty rounds.
    pub iterations: usize,
    /// Objective without the defect terms.
    pub final_objective: f64,
    pub final_gradient_norm: f64,
    pub max_defect: f64,
    pub penalty_rounds: usize,
    /// Penalty weight and multipliers of the last round, as used by
    /// [`kkt_residuals`].
    pub penalty_weight: f64,
    pub multipliers: Vec<f64>,
    /// Max defect at the end of each round.
    pub defect_history: Vec<f64>,
    /// Set when a line search collapsed below the minimum step.
    pub stalled: bool,
}

/// Per-index box; an index with `lower == upper` is pinned.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxBounds {
    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    /// Initial state pinned, controls boxed, other states free.
    pub fn for_problem(problem: &OcpProblem) -> Self {
        let layout = problem.layout();
        let mut b = Self::unbounded(layout.dimension());
        let x0 = problem.initial_state.to_vector();
        for i in layout.pinned() {
            b.lower[i] = x0[i];
            b.upper[i] = x0[i];
        }
        for k in 0..layout.node_count {
            let i1 = layout.control_index(k, 0);
            let i2 = layout.control_index(k, 1);
            b.lower[i1] = -problem.u1_bound;
            b.upper[i1] = problem.u1_bound;
            b.lower[i2] = -problem.u2_bound;
            b.upper[i2] = problem.u2_bound;
        }
        b
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn is_pinned(&self, i: usize) -> bool {
        self.lower[i] == self.upper[i]
    }

    pub fn clamp(&self, i: usize, v: f64) -> f64 {
        v.max(self.lower[i]).min(self.upper[i])
    }

    pub fn project(&self, z: &mut [f64]) {
        for (i, v) in z.iter_mut().enumerate() {
            *v = self.clamp(i, *v);
        }
    }

    pub fn max_violation(&self, z: &[f64]) -> f64 {
        z.iter()
            .enumerate()
            .map(|(i, v)| (self.lower[i] - v).max(v - self.upper[i]).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// `clamp(point − step · gradient)`; pinned indices keep their value.
pub fn projected_gradient_step(point: &[f64], gradient: &[f64], step: f64, bounds: &BoxBounds) -> Vec<f64> {
    assert_eq!(point.len(), gradient.len());
    assert_eq!(point.len(), bounds.len());
    point
        .iter()
        .zip(gradient)
        .enumerate()
        .map(|(i, (p, g))| {
            if bounds.is_pinned(i) {
                *p
            } else {
                bounds.clamp(i, p - step * g)
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KktResiduals {
    pub projected_gradient_norm: f64,
    pub max_defect: f64,
    pub max_bound_violation: f64,
}

/// Convergence measures used by [`solve`]'s stopping rule, evaluated on `plan`
/// as given (no projection).
pub fn kkt_residuals(
    problem: &OcpProblem,
    plan: &TrajectoryPlan,
    penalty_weight: f64,
    multipliers: Option<&[f64]>,
) -> Result<KktResiduals, OcpError> {
    let tr = Transcription::new(problem)?;
    let z = plan.to_flat();
    if z.len() != tr.dimension() {
        return Err(OcpError::DimensionMismatch {
            what: "plan",
            expected: tr.dimension(),
            got: z.len(),
        });
    }
    let bounds = BoxBounds::for_problem(problem);
    let lambda = multipliers
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; tr.defect_count()]);
    let mut merit = Merit::new(&tr, penalty_weight, lambda);
    let mut g = vec![0.0; z.len()];
    merit.gradient(&z, &mut g)?;
    let c = tr.defects(&z);
    Ok(KktResiduals {
        projected_gradient_norm: merit.projected_gradient_norm(&z, &g, &bounds),
        max_defect: max_abs(&c),
        max_bound_violation: bounds.max_violation(&z),
    })
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Cholesky factor of a symmetric positive definite band matrix. Row `i`
/// keeps columns `i - BANDWIDTH ..= i` of the lower triangle.
struct Band {
    n: usize,
    data: Vec<f64>,
}

impl Band {
    const WIDTH: usize = BANDWIDTH + 1;

    fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * Self::WIDTH],
        }
    }

    fn pos(i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= BANDWIDTH);
        i * Self::WIDTH + BANDWIDTH + j - i
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[Self::pos(i, j)]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[Self::pos(i, j)] = v;
    }

    fn first(i: usize) -> usize {
        i.saturating_sub(BANDWIDTH)
    }

    /// In place; `false` when a pivot is not positive.
    fn factor(&mut self) -> bool {
        for j in 0..self.n {
            let mut d = self.get(j, j);
            for k in Self::first(j)..j {
                d -= self.get(j, k).powi(2);
            }
            if !(d > 0.0 && d.is_finite()) {
                return false;
            }
            let ljj = d.sqrt();
            self.set(j, j, ljj);
            for i in j + 1..self.n.min(j + BANDWIDTH + 1) {
                let mut v = self.get(i, j);
                for k in Self::first(i)..j {
                    v -= self.get(i, k) * self.get(j, k);
                }
                self.set(i, j, v / ljj);
            }
        }
        true
    }

    fn solve(&self, b: &mut [f64]) {
        for i in 0..self.n {
            let s: f64 = (Self::first(i)..i).map(|k| self.get(i, k) * b[k]).sum();
            b[i] = (b[i] - s) / self.get(i, i);
        }
        for i in (0..self.n).rev() {
            let s: f64 = (i + 1..self.n.min(i + BANDWIDTH + 1))
                .map(|k| self.get(k, i) * b[k])
                .sum();
            b[i] = (b[i] - s) / self.get(i, i);
        }
    }
}

/// Augmented-Lagrangian merit with its diagonal scaling.
struct Merit<'t, 'p> {
    tr: &'t Transcription<'p>,
    rho: f64,
    lambda: Vec<f64>,
    /// Squared scaling, `1 / diag(Hessian)`.
    scale_sq: Vec<f64>,
    defects: Vec<f64>,
    /// Workspace for the Newton metric.
    band: Band,
}

impl<'t, 'p> Merit<'t, 'p> {
    fn new(tr: &'t Transcription<'p>, rho: f64, lambda: Vec<f64>) -> Self {
        let obj = tr.objective_hessian_diagonal();
        let cols = tr.jacobian.column_sq_norms();
        let scale_sq = obj
            .iter()
            .zip(&cols)
            .enumerate()
            .map(|(i, (h, c))| {
                let d = h + 2.0 * rho * c;
                if i < STATE_DIM || d <= 0.0 {
                    1.0
                } else {
                    1.0 / d
                }
            })
            .collect();
        Self {
            tr,
            rho,
            lambda,
            scale_sq,
            defects: vec![0.0; tr.defect_count()],
            band: Band::zeros(tr.dimension()),
        }
    }

    fn value(&mut self, z: &[f64]) -> f64 {
        self.tr.defects_into(z, &mut self.defects);
        let mut v = self.tr.objective(z);
        for (c, l) in self.defects.iter().zip(&self.lambda) {
            v += l * c + self.rho * c * c;
        }
        v
    }

    fn gradient(&mut self, z: &[f64], out: &mut [f64]) -> Result<(), OcpError> {
        self.tr.gradient_into(z, out)?;
        self.tr.defects_into(z, &mut self.defects);
        let weighted: Vec<f64> = self
            .defects
            .iter()
            .zip(&self.lambda)
            .map(|(c, l)| l + 2.0 * self.rho * c)
            .collect();
        self.tr.jacobian.transpose_mul_add(&weighted, out);
        Ok(())
    }

    /// Infinity norm of the projected gradient in scaled coordinates.
    fn projected_gradient_norm(&self, z: &[f64], g: &[f64], bounds: &BoxBounds) -> f64 {
        let mut norm: f64 = 0.0;
        for i in 0..z.len() {
            let d2 = self.scale_sq[i];
            let moved = bounds.clamp(i, z[i] - d2 * g[i]) - z[i];
            norm = norm.max(moved.abs() / d2.sqrt());
        }
        norm
    }

    /// Writes the merit Hessian model into `band`: objective blocks plus
    /// `2ρ J'J`.
    fn hessian_into(&mut self, z: &[f64]) {
        let j = &self.tr.jacobian;
        let two_rho = 2.0 * self.rho;
        let ll: NodeMatrix = j.left.transpose() * j.left * two_rho;
        let rr: NodeMatrix = j.right.transpose() * j.right * two_rho;
        let rl: NodeMatrix = j.right.transpose() * j.left * two_rho;
        let blocks = self.tr.objective_hessian_blocks(z);
        let nodes = blocks.len();
        for (k, block) in blocks.into_iter().enumerate() {
            let mut d = block;
            if k + 1 < nodes {
                d += ll;
            }
            if k > 0 {
                d += rr;
            }
            let o = k * VARS_PER_NODE;
            for r in 0..VARS_PER_NODE {
                for c in 0..=r {
                    self.band.set(o + r, o + c, d[(r, c)]);
                }
                if k + 1 < nodes {
                    for c in 0..VARS_PER_NODE {
                        self.band.set(o + VARS_PER_NODE + r, o + c, rl[(r, c)]);
                    }
                }
            }
        }
    }

    /// Two-metric projected Newton direction. Marks the coordinates that
    /// take a scaled gradient step in `fixed`. Returns `false` when the
    /// reduced Hessian could not be factored.
    ///
    /// The scaled Hessian is damped by `pg_norm · I`. Torque is nearly free
    /// in the follower problems, and an undamped step runs along that flat
    /// valley to the torque bounds.
    fn newton_direction(
        &mut self,
        z: &[f64],
        g: &[f64],
        bounds: &BoxBounds,
        pg_norm: f64,
        dir: &mut [f64],
        fixed: &mut [bool],
    ) -> bool {
        let n = z.len();
        for i in 0..n {
            let eps = (ACTIVE_FRACTION * (bounds.upper[i] - bounds.lower[i])).min(pg_norm * self.scale_sq[i].sqrt());
            fixed[i] = bounds.is_pinned(i)
                || (z[i] - bounds.lower[i] <= eps && g[i] > 0.0)
                || (bounds.upper[i] - z[i] <= eps && g[i] < 0.0);
        }
        self.hessian_into(z);
        let band = &mut self.band;
        let scale: Vec<f64> = (0..n)
            .map(|i| {
                let d = band.get(i, i);
                if fixed[i] || d <= 0.0 {
                    1.0
                } else {
                    1.0 / d.sqrt()
                }
            })
            .collect();
        for i in 0..n {
            for j in Band::first(i)..=i {
                let v = if fixed[i] || fixed[j] {
                    if i == j {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    band.get(i, j) * scale[i] * scale[j] + if i == j { pg_norm } else { 0.0 }
                };
                band.set(i, j, v);
            }
        }
        if !band.factor() {
            return false;
        }
        for i in 0..n {
            dir[i] = if fixed[i] { 0.0 } else { -g[i] * scale[i] };
        }
        band.solve(dir);
        for i in 0..n {
            dir[i] = if bounds.is_pinned(i) {
                0.0
            } else if fixed[i] {
                -self.scale_sq[i] * g[i]
            } else {
                dir[i] * scale[i]
            };
        }
        true
    }
}

enum InnerOutcome {
    Converged,
    Stalled,
    Exhausted,
}

pub fn solve(
    problem: &OcpProblem,
    config: &SolverConfig,
    initial_guess: &TrajectoryPlan,
) -> Result<SolveReport, SolveError> {
    config.validate()?;
    let tr = Transcription::new(problem)?;
    let layout = tr.layout;
    let n = tr.dimension();
    let mut z = initial_guess.to_flat();
    if z.len() != n {
        return Err(OcpError::DimensionMismatch {
            what: "initial guess",
            expected: n,
            got: z.len(),
        }
        .into());
    }
    let bounds = BoxBounds::for_problem(problem);
    bounds.project(&mut z);

    let mut rho = config.defect_penalty_initial;
    let mut lambda = vec![0.0; tr.defect_count()];
    let mut iterations = 0;
    let mut defect_history = Vec::new();
    let mut stalled = false;
    let mut converged = false;
    let mut pg_norm = f64::INFINITY;
    let mut max_defect = f64::INFINITY;
    let mut used_rho = rho;
    let mut used_lambda = lambda.clone();

    let mut g = vec![0.0; n];
    let mut g_trial = vec![0.0; n];
    let mut z_trial = vec![0.0; n];
    let mut dir = vec![0.0; n];
    // Coordinates moved along the projection arc rather than linearly.
    let mut on_arc = vec![false; n];

    for round in 0..config.max_penalty_rounds {
        let mut merit = Merit::new(&tr, rho, lambda.clone());
        let mut f = merit.value(&z);
        if !f.is_finite() {
            return Err(SolveError::NonFinite {
                round,
                iteration: 0,
                value: f,
                iterate: z,
            });
        }
        merit.gradient(&z, &mut g)?;
        let mut alpha = 1.0;
        let mut outcome = InnerOutcome::Exhausted;

        for it in 0..config.max_iterations {
            pg_norm = merit.projected_gradient_norm(&z, &g, &bounds);
            if pg_norm <= config.gradient_tolerance {
                outcome = InnerOutcome::Converged;
                break;
            }
            iterations += 1;
            let newton = config.step_metric == StepMetric::Newton
                && merit.newton_direction(&z, &g, &bounds, pg_norm, &mut dir, &mut on_arc);
            if !newton {
                for i in 0..n {
                    dir[i] = bounds.clamp(i, z[i] - alpha * merit.scale_sq[i] * g[i]) - z[i];
                    on_arc[i] = false;
                }
            }
            let linear_slope: f64 = (0..n).filter(|&i| !on_arc[i]).map(|i| g[i] * dir[i]).sum();
            let mut t = 1.0;
            let f_trial = loop {
                let mut predicted = t * linear_slope;
                for i in 0..n {
                    z_trial[i] = bounds.clamp(i, z[i] + t * dir[i]);
                    if on_arc[i] {
                        predicted += g[i] * (z_trial[i] - z[i]);
                    }
                }
                let v = merit.value(&z_trial);
                if !v.is_finite() {
                    return Err(SolveError::NonFinite {
                        round,
                        iteration: it,
                        value: v,
                        iterate: z_trial,
                    });
                }
                if v <= f + config.armijo_constant * predicted {
                    break Some(v);
                }
                t *= config.line_search_shrink;
                if t < MIN_ARMIJO_STEP {
                    break None;
                }
            };
            let Some(f_trial) = f_trial else {
                outcome = InnerOutcome::Stalled;
                stalled = true;
                break;
            };
            merit.gradient(&z_trial, &mut g_trial)?;
            if !newton {
                let (mut ss, mut sy) = (0.0, 0.0);
                for i in 0..n {
                    let s = z_trial[i] - z[i];
                    ss += s * s / merit.scale_sq[i];
                    sy += s * (g_trial[i] - g[i]);
                }
                alpha = if sy > 0.0 {
                    (ss / sy).clamp(BB_MIN_STEP, BB_MAX_STEP)
                } else {
                    BB_MAX_STEP
                };
            }
            std::mem::swap(&mut z, &mut z_trial);
            std::mem::swap(&mut g, &mut g_trial);
            f = f_trial;
        }
        if matches!(outcome, InnerOutcome::Exhausted) {
            pg_norm = merit.projected_gradient_norm(&z, &g, &bounds);
        }

        let c = tr.defects(&z);
        max_defect = max_abs(&c);
        defect_history.push(max_defect);
        used_rho = rho;
        used_lambda.clone_from(&lambda);
        log::debug!(
            "round {round}: rho {rho:.1e}, max defect {max_defect:.3e}, pg {pg_norm:.3e}, iterations {iterations}"
        );

        if matches!(outcome, InnerOutcome::Converged) && max_defect <= config.defect_tolerance {
            converged = true;
            break;
        }
        for (l, ci) in lambda.iter_mut().zip(&c) {
            *l += 2.0 * rho * ci;
        }
        if max_defect > config.defect_tolerance {
            rho *= config.defect_penalty_growth;
        }
    }

    let plan = TrajectoryPlan::from_flat(&layout, &z)?;
    Ok(SolveReport {
        final_objective: tr.objective(&z),
        plan,
        converged,
        iterations,
        final_gradient_norm: pg_norm,
        max_defect,
        penalty_rounds: defect_history.len(),
        penalty_weight: used_rho,
        multipliers: used_lambda,
        defect_history,
        stalled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formation::Point;
    use crate::model::{AgentState, ControlInput, QuadParams, StateSpaceModel, StateVector};
    use crate::ocp::{CostWeights, Layout};

    fn model() -> StateSpaceModel {
        StateSpaceModel::new(QuadParams::crazyflie()).unwrap()
    }

    #[test]
    fn step_interior_and_active() {
        let b = BoxBounds {
            lower: vec![0.0, -1.0, 2.0],
            upper: vec![0.0, 1.0, 5.0],
        };
        // pinned, interior, at lower bound pushed outward
        let p = vec![0.0, 0.2, 2.0];
        let g = vec![3.0, 1.0, 10.0];
        let q = projected_gradient_step(&p, &g, 0.1, &b);
        assert_eq!(q[0], 0.0);
        assert!((q[1] - 0.1).abs() < 1e-15);
        assert_eq!(q[2], 2.0);
        assert_eq!(projected_gradient_step(&p, &g, 0.0, &b), p);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig {
            line_search_shrink: 1.0,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverConfig {
            gradient_tolerance: 0.0,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn smallest_instance_converges() {
        let m = model();
        let x0 = AgentState::hover_at(0.0, 1.0);
        let p = OcpProblem::new(m.clone(), x0, 0.1, 2, CostWeights::follower()).with_terminal_target(x0.to_vector());
        let guess = TrajectoryPlan::constant(&p.layout(), x0, ControlInput::hover(&m.params));
        let r = solve(&p, &SolverConfig::default(), &guess).unwrap();
        assert!(r.converged, "{r:?}");
        assert_eq!(r.plan.states[0], x0);
        assert_eq!(r.plan.len(), 2);
    }

    #[test]
    fn saturated_thrust_sits_on_bound() {
        let m = model();
        let x0 = AgentState::hover_at(0.0, 1.0);
        let bound = 0.9 * m.params.hover_thrust();
        let p = OcpProblem::new(m.clone(), x0, 2.0, 21, CostWeights::follower())
            .with_terminal_target(x0.to_vector())
            .with_bounds(bound, m.params.default_u2_bound());
        let guess = TrajectoryPlan::constant(&p.layout(), x0, ControlInput::new(bound, 0.0));
        let r = solve(&p, &SolverConfig::default(), &guess).unwrap();
        for u in &r.plan.controls {
            assert_eq!(u.u1, bound);
        }
        assert!(r.max_defect <= 1e-6);
    }

    #[test]
    fn output_respects_bounds_and_pin_without_convergence() {
        let m = model();
        let x0 = AgentState::hover_at(0.0, 1.0);
        let layout = Layout::new(31, 3.0);
        let reference: Vec<Point> = layout.times().iter().map(|t| Point::new(0.3 * t, 1.0 + t)).collect();
        let p = OcpProblem::new(m.clone(), x0, 3.0, 31, CostWeights::leader()).with_reference(reference);
        let cfg = SolverConfig {
            max_iterations: 5,
            max_penalty_rounds: 1,
            ..SolverConfig::default()
        };
        let mut guess = TrajectoryPlan::constant(&layout, AgentState::default(), ControlInput::new(5.0, 1.0));
        guess.states[0].y = 4.0;
        let r = solve(&p, &cfg, &guess).unwrap();
        assert!(!r.converged);
        assert_eq!(r.plan.states[0], x0);
        let b = BoxBounds::for_problem(&p);
        assert_eq!(b.max_violation(&r.plan.to_flat()), 0.0);
    }

    #[test]
    fn hover_plan_kkt() {
        let m = model();
        let x0 = AgentState::hover_at(0.0, 1.0);
        let p = OcpProblem::new(m.clone(), x0, 1.0, 11, CostWeights::follower()).with_terminal_target(x0.to_vector());
        let plan = TrajectoryPlan::constant(&p.layout(), x0, ControlInput::hover(&m.params));
        let k = kkt_residuals(&p, &plan, 10.0, None).unwrap();
        assert!(k.max_defect < 1e-15);
        assert_eq!(k.max_bound_violation, 0.0);

        let mut raw = plan.clone();
        raw.controls[4].u1 = 2.0 * p.u1_bound;
        let k = kkt_residuals(&p, &raw, 10.0, None).unwrap();
        assert!((k.max_bound_violation - p.u1_bound).abs() < 1e-12);
    }

    #[test]
    fn deterministic() {
        let m = model();
        let x0 = AgentState::hover_at(0.0, 1.0);
        let mut target = StateVector::zeros();
        target[0] = 0.2;
        target[2] = 1.1;
        let p = OcpProblem::new(m.clone(), x0, 2.0, 21, CostWeights::follower()).with_terminal_target(target);
        let guess = TrajectoryPlan::constant(&p.layout(), x0, ControlInput::hover(&m.params));
        let a = solve(&p, &SolverConfig::default(), &guess).unwrap();
        let b = solve(&p, &SolverConfig::default(), &guess).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn band_cholesky_matches_dense_solve() {
        use nalgebra::{DMatrix, DVector};
        let n = 40;
        // Diagonally dominant, so positive definite.
        let mut dense = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(BANDWIDTH)..i {
                let v = ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.5;
                dense[(i, j)] = v;
                dense[(j, i)] = v;
            }
        }
        for i in 0..n {
            dense[(i, i)] = 1.0 + dense.row(i).iter().map(|v| v.abs()).sum::<f64>();
        }
        let mut band = Band::zeros(n);
        for i in 0..n {
            for j in Band::first(i)..=i {
                band.set(i, j, dense[(i, j)]);
            }
        }
        assert!(band.factor());
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut x = rhs.clone();
        band.solve(&mut x);
        let expected = dense.lu().solve(&DVector::from_vec(rhs)).unwrap();
        for i in 0..n {
            assert!((x[i] - expected[i]).abs() < 1e-12);
        }

        let mut indefinite = Band::zeros(2);
        indefinite.set(0, 0, 1.0);
        indefinite.set(1, 0, 2.0);
        indefinite.set(1, 1, 1.0);
        assert!(!indefinite.factor());
    }

    #[test]
    fn metric_names_round_trip() {
        for name in StepMetric::NAMES {
            assert_eq!(StepMetric::from_name(name).unwrap().name(), *name);
        }
        assert_eq!(StepMetric::from_name("bfgs"), None);
    }
}
