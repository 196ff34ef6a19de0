//! Scenario configuration: one flat TOML table.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use quadform::coordinator::{FleetProblem, FleetSettings, TerminalTarget};
use quadform::formation::{triangular_spec_with_leader, FormationSpec};
use quadform::model::{NoiseSpec, QuadParams, StateMatrix, StateSpaceModel, StateVector};
use quadform::nalgebra::{Matrix2, Vector2};
use quadform::ocp::CostWeights;
use quadform::reference::ReferenceParams;
use quadform::registry;
use quadform::sim::{OpenLoop, Replan, RolloutConfig, TrialMode};
use quadform::solver::SolverConfig;

pub const DEFAULT_SEED: u64 = 20_240_917;

/// Shipped defaults, identical to [`ScenarioConfig::default`].
pub const DEFAULT_CONFIG_TOML: &str = include_str!("../config/default.toml");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("{}: `{key}`: {message}", line.map_or_else(|| "config".to_string(), |l| format!("line {l}")))]
    Invalid {
        key: &'static str,
        line: Option<usize>,
        message: String,
    },
}

impl ConfigError {
    fn invalid(key: &'static str, message: impl Into<String>) -> Self {
        Self::Invalid {
            key,
            line: None,
            message: message.into(),
        }
    }

    /// Attaches the line of `key` in `source`, when present.
    pub fn anchored(self, source: &str) -> Self {
        match self {
            Self::Invalid {
                key,
                line: None,
                message,
            } => Self::Invalid {
                key,
                line: key_line(source, key),
                message,
            },
            other => other,
        }
    }
}

fn key_line(source: &str, key: &str) -> Option<usize> {
    source
        .lines()
        .position(|l| {
            l.trim_start()
                .strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
        })
        .map(|i| i + 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub mass: f64,
    pub inertia_xx: f64,
    pub gravity: f64,

    pub leader_index: usize,
    pub leader_follower_distance: f64,
    pub follower_follower_distance: f64,

    pub reference: String,
    pub reference_amplitude: f64,
    /// rad/s; one period over the horizon when absent.
    pub reference_angular_frequency: Option<f64>,
    pub reference_forward_speed: f64,
    pub reference_base_altitude: f64,
    pub reference_start_y: f64,

    /// Diagonal of P.
    pub terminal_weight: [f64; 6],
    /// Diagonal of the leader's Q.
    pub tracking_weight: [f64; 2],
    /// Diagonal of R.
    pub control_weight: [f64; 2],
    /// Formation penalty weight.
    pub penalty_weight: f64,
    pub penalty_form: String,
    pub terminal_target: TerminalTarget,

    /// N; defaults to 1.2 m g.
    pub u1_bound: Option<f64>,
    /// N m; defaults to I_xx π / 10.
    pub u2_bound: Option<f64>,

    pub horizon: f64,
    pub node_count: usize,

    pub noise_mean: f64,
    pub noise_sigma: f64,
    /// Diagonal of K.
    pub noise_gain: [f64; 6],
    pub seed: Option<u64>,

    pub max_iterations: usize,
    pub max_penalty_rounds: usize,
    pub gradient_tolerance: f64,
    pub defect_tolerance: f64,
    pub defect_penalty_initial: f64,
    pub defect_penalty_growth: f64,
    pub line_search_shrink: f64,
    pub armijo_constant: f64,
    pub step_metric: String,

    pub sweeps: usize,
    pub coupling: String,
    pub trials: usize,
    pub trial_mode: String,
    pub control_hold: String,

    pub output_dir: Option<String>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let params = QuadParams::crazyflie();
        let reference = ReferenceParams::default();
        let solver = SolverConfig::default();
        Self {
            mass: params.mass,
            inertia_xx: params.inertia_xx,
            gravity: params.gravity,
            leader_index: 0,
            leader_follower_distance: 0.5,
            follower_follower_distance: 0.5,
            reference: "sinusoid".into(),
            reference_amplitude: reference.amplitude,
            reference_angular_frequency: reference.angular_frequency,
            reference_forward_speed: reference.forward_speed,
            reference_base_altitude: reference.base_altitude,
            reference_start_y: reference.start_y,
            terminal_weight: [1.0; 6],
            tracking_weight: [1.0; 2],
            control_weight: [1.0; 2],
            penalty_weight: 1.0,
            penalty_form: "squared".into(),
            terminal_target: TerminalTarget::Reference,
            u1_bound: None,
            u2_bound: None,
            horizon: 10.0,
            node_count: 101,
            noise_mean: 0.0,
            noise_sigma: 0.2,
            noise_gain: [1.0; 6],
            seed: None,
            max_iterations: solver.max_iterations,
            max_penalty_rounds: solver.max_penalty_rounds,
            gradient_tolerance: solver.gradient_tolerance,
            defect_tolerance: solver.defect_tolerance,
            defect_penalty_initial: solver.defect_penalty_initial,
            defect_penalty_growth: solver.defect_penalty_growth,
            line_search_shrink: solver.line_search_shrink,
            armijo_constant: solver.armijo_constant,
            step_metric: solver.step_metric.name().into(),
            sweeps: 2,
            coupling: "gauss-seidel".into(),
            trials: 20,
            trial_mode: "replan".into(),
            control_hold: "first-order".into(),
            output_dir: None,
        }
    }
}

/// Everything a run needs, built from a validated config.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub model: StateSpaceModel,
    pub problem: FleetProblem,
    pub seed: u64,
}

impl Scenario {
    pub fn rollout_config(&self, noise: NoiseSpec) -> Result<RolloutConfig, ConfigError> {
        let hold = registry::control_hold(&self.config.control_hold)
            .map_err(|e| ConfigError::invalid("control_hold", e.to_string()))?;
        let mode: Arc<dyn TrialMode> = match self.config.trial_mode.as_str() {
            "replan" => Arc::new(Replan {
                problem: self.problem.clone(),
            }),
            "open-loop" => Arc::new(OpenLoop),
            other => {
                let e = registry::check_trial_mode(other).expect_err("unlisted trial mode");
                return Err(ConfigError::invalid("trial_mode", e.to_string()));
            }
        };
        Ok(RolloutConfig::new(noise, self.config.trials, self.dt())
            .with_hold(hold)
            .with_mode(mode))
    }

    pub fn noise(&self) -> NoiseSpec {
        NoiseSpec {
            mean: self.config.noise_mean,
            std_dev: self.config.noise_sigma,
            seed: self.seed,
        }
    }

    pub fn dt(&self) -> f64 {
        self.problem.settings.layout().dt()
    }

    pub fn spec(&self) -> &FormationSpec {
        &self.problem.spec
    }
}

impl ScenarioConfig {
    pub fn from_toml(source: &str) -> Result<Self, ConfigError> {
        toml::from_str(source).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn effective_seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    fn solver(&self) -> Result<SolverConfig, ConfigError> {
        let step_metric =
            registry::step_metric(&self.step_metric).map_err(|e| ConfigError::invalid("step_metric", e.to_string()))?;
        Ok(SolverConfig {
            max_iterations: self.max_iterations,
            max_penalty_rounds: self.max_penalty_rounds,
            gradient_tolerance: self.gradient_tolerance,
            defect_tolerance: self.defect_tolerance,
            defect_penalty_initial: self.defect_penalty_initial,
            defect_penalty_growth: self.defect_penalty_growth,
            line_search_shrink: self.line_search_shrink,
            armijo_constant: self.armijo_constant,
            step_metric,
        })
    }

    /// Checks every module's preconditions and builds the scenario.
    pub fn build(&self) -> Result<Scenario, ConfigError> {
        let params = QuadParams::new(self.mass, self.inertia_xx, self.gravity).map_err(|e| {
            let key = match &e {
                quadform::model::ModelError::InvalidParameter { name, .. } => match *name {
                    "inertia_xx" => "inertia_xx",
                    "gravity" => "gravity",
                    _ => "mass",
                },
                _ => "mass",
            };
            ConfigError::invalid(key, e.to_string())
        })?;
        let gain = StateMatrix::from_diagonal(&StateVector::from_row_slice(&self.noise_gain));
        let model = StateSpaceModel::new(params)
            .and_then(|m| m.with_noise_gain(gain))
            .map_err(|e| ConfigError::invalid("noise_gain", e.to_string()))?;

        let spec = triangular_spec_with_leader(
            self.leader_follower_distance,
            self.follower_follower_distance,
            self.leader_index,
        )
        .map_err(|e| {
            let key = match e {
                quadform::formation::FormationError::LeaderOutOfRange { .. } => "leader_index",
                quadform::formation::FormationError::TriangleInequality { .. } => "follower_follower_distance",
                _ => "leader_follower_distance",
            };
            ConfigError::invalid(key, e.to_string())
        })?;

        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(ConfigError::invalid(
                "horizon",
                format!("must be positive, got {}", self.horizon),
            ));
        }
        if self.node_count < 2 {
            return Err(ConfigError::invalid(
                "node_count",
                format!("must be at least 2, got {}", self.node_count),
            ));
        }
        let reference_params = ReferenceParams {
            forward_speed: self.reference_forward_speed,
            amplitude: self.reference_amplitude,
            angular_frequency: self.reference_angular_frequency,
            base_altitude: self.reference_base_altitude,
            start_y: self.reference_start_y,
        };
        for (key, v) in [
            ("reference_forward_speed", reference_params.forward_speed),
            ("reference_amplitude", reference_params.amplitude),
            ("reference_base_altitude", reference_params.base_altitude),
            ("reference_start_y", reference_params.start_y),
            (
                "reference_angular_frequency",
                reference_params.angular_frequency_for(self.horizon),
            ),
        ] {
            if !v.is_finite() {
                return Err(ConfigError::invalid(key, "must be finite"));
            }
        }
        let reference = registry::reference_trajectory(&self.reference, &reference_params, self.horizon)
            .map_err(|e| ConfigError::invalid("reference", e.to_string()))?;

        let control = Matrix2::from_diagonal(&Vector2::from_row_slice(&self.control_weight));
        let tracking = Matrix2::from_diagonal(&Vector2::from_row_slice(&self.tracking_weight));
        let terminal = StateMatrix::from_diagonal(&StateVector::from_row_slice(&self.terminal_weight));
        let leader_weights = CostWeights {
            control,
            tracking,
            terminal,
        };
        let follower_weights = CostWeights {
            tracking: Matrix2::zeros(),
            ..leader_weights.clone()
        };
        if self.control_weight.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(ConfigError::invalid("control_weight", "entries must be positive"));
        }
        if self.tracking_weight.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(ConfigError::invalid("tracking_weight", "entries must be positive"));
        }
        if self.terminal_weight.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(ConfigError::invalid("terminal_weight", "entries must be positive"));
        }
        if !(self.penalty_weight.is_finite() && self.penalty_weight > 0.0) {
            return Err(ConfigError::invalid("penalty_weight", "must be positive"));
        }
        let penalty_form = registry::penalty_form(&self.penalty_form)
            .map_err(|e| ConfigError::invalid("penalty_form", e.to_string()))?;
        let coupling =
            registry::coupling_schedule(&self.coupling).map_err(|e| ConfigError::invalid("coupling", e.to_string()))?;
        registry::control_hold(&self.control_hold).map_err(|e| ConfigError::invalid("control_hold", e.to_string()))?;
        registry::check_trial_mode(&self.trial_mode).map_err(|e| ConfigError::invalid("trial_mode", e.to_string()))?;

        let u1_bound = self.u1_bound.unwrap_or_else(|| params.default_u1_bound());
        let u2_bound = self.u2_bound.unwrap_or_else(|| params.default_u2_bound());
        for (key, b) in [("u1_bound", u1_bound), ("u2_bound", u2_bound)] {
            if !(b.is_finite() && b > 0.0) {
                return Err(ConfigError::invalid(key, format!("must be positive, got {b}")));
            }
        }

        let solver = self.solver()?;
        solver.validate().map_err(|e| {
            let message = e.to_string();
            let key = [
                "max_iterations",
                "max_penalty_rounds",
                "gradient_tolerance",
                "defect_tolerance",
                "defect_penalty_initial",
                "defect_penalty_growth",
                "line_search_shrink",
                "armijo_constant",
            ]
            .into_iter()
            .find(|k| message.contains(k))
            .unwrap_or("max_iterations");
            ConfigError::invalid(key, message)
        })?;
        if self.sweeps == 0 {
            return Err(ConfigError::invalid("sweeps", "must be at least 1"));
        }
        if self.trials == 0 {
            return Err(ConfigError::invalid("trials", "must be at least 1"));
        }
        let seed = self.effective_seed();
        NoiseSpec::new(self.noise_mean, self.noise_sigma, seed)
            .map_err(|e| ConfigError::invalid("noise_sigma", e.to_string()))?;

        let settings = FleetSettings {
            model: model.clone(),
            horizon: self.horizon,
            node_count: self.node_count,
            leader_weights,
            follower_weights,
            penalty_weight: self.penalty_weight,
            u1_bound,
            u2_bound,
            solver,
            sweeps: self.sweeps,
            penalty_form,
            coupling,
            terminal_target: self.terminal_target,
        };
        let problem = FleetProblem::in_formation(spec, reference.as_ref(), settings);
        problem
            .validate()
            .map_err(|e| ConfigError::invalid("node_count", e.to_string()))?;
        Ok(Scenario {
            config: self.clone(),
            model,
            problem,
            seed,
        })
    }
}
