//! Leader-follower formation tracking for planar quadrotors.
//!
//! Each agent solves a finite-horizon optimal control problem, transcribed by
//! trapezoidal collocation and driven to stationarity by a box-constrained
//! projected Newton solver. The leader tracks a reference; followers hold
//! their triangular slots through inter-agent distance penalties. Plans are
//! evaluated by Monte-Carlo rollouts through a noisy hover-linearized model.

pub mod coordinator;
pub mod formation;
pub mod model;
pub mod ocp;
pub mod reference;
pub mod registry;
pub mod sim;
pub mod solver;

pub use nalgebra;

pub use formation::{FormationSpec, PlanarTransform, Point};
pub use model::{AgentState, ControlInput, NoiseSpec, QuadParams, StateSpaceModel};
pub use ocp::{CostWeights, OcpProblem, TrajectoryPlan};
pub use solver::{SolveReport, SolverConfig};
