//! Planar quadrotor linearized at hover.
//!
//! State ordering is fixed as `[y, y_dot, z, z_dot, phi, phi_dot]`, controls as
//! `[u1, u2]` (collective thrust, roll torque). The continuous dynamics are
//!
//! ```text
//! x_dot = A x + B u + G g + K w
//! ```
//!
//! with `w = [0, w1, 0, w2, 0, w3]` a structured Gaussian disturbance.

use nalgebra::{SMatrix, SVector, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const STATE_DIM: usize = 6;
pub const CONTROL_DIM: usize = 2;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type ControlVector = Vector2<f64>;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type InputMatrix = SMatrix<f64, STATE_DIM, CONTROL_DIM>;

/// Row indices into the state vector.
pub mod idx {
    pub const Y: usize = 0;
    pub const Y_DOT: usize = 1;
    pub const Z: usize = 2;
    pub const Z_DOT: usize = 3;
    pub const PHI: usize = 4;
    pub const PHI_DOT: usize = 5;
}

pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid quadrotor parameter {name} = {value} (must be finite and > 0)")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("integration step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("noise standard deviation must be finite and >= 0, got {0}")]
    InvalidNoise(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadParams {
    pub mass: f64,
    pub inertia_xx: f64,
    pub gravity: f64,
}

impl QuadParams {
    pub fn new(mass: f64, inertia_xx: f64, gravity: f64) -> Result<Self, ModelError> {
        let params = Self {
            mass,
            inertia_xx,
            gravity,
        };
        params.validate()?;
        Ok(params)
    }

    /// Crazyflie-class airframe: m = 0.028 kg, I_xx = 6.4893e-6 kg m^2.
    pub fn crazyflie() -> Self {
        Self {
            mass: 0.028,
            inertia_xx: 6.4893e-6,
            gravity: STANDARD_GRAVITY,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, value) in [
            ("mass", self.mass),
            ("inertia_xx", self.inertia_xx),
            ("gravity", self.gravity),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(ModelError::InvalidParameter { name, value });
            }
        }
        Ok(())
    }

    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }

    /// Default thrust bound, 1.2 m g.
    pub fn default_u1_bound(&self) -> f64 {
        1.2 * self.mass * self.gravity
    }

    /// Default torque bound, I_xx pi / 10.
    pub fn default_u2_bound(&self) -> f64 {
        self.inertia_xx * std::f64::consts::PI / 10.0
    }
}

impl Default for QuadParams {
    fn default() -> Self {
        Self::crazyflie()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub y: f64,
    pub y_dot: f64,
    pub z: f64,
    pub z_dot: f64,
    pub phi: f64,
    pub phi_dot: f64,
}

impl AgentState {
    pub fn hover_at(y: f64, z: f64) -> Self {
        Self {
            y,
            z,
            ..Self::default()
        }
    }

    pub fn to_vector(&self) -> StateVector {
        StateVector::new(self.y, self.y_dot, self.z, self.z_dot, self.phi, self.phi_dot)
    }

    pub fn from_vector(v: &StateVector) -> Self {
        Self {
            y: v[idx::Y],
            y_dot: v[idx::Y_DOT],
            z: v[idx::Z],
            z_dot: v[idx::Z_DOT],
            phi: v[idx::PHI],
            phi_dot: v[idx::PHI_DOT],
        }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.y, self.z)
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub u1: f64,
    pub u2: f64,
}

impl ControlInput {
    pub fn new(u1: f64, u2: f64) -> Self {
        Self { u1, u2 }
    }

    pub fn hover(params: &QuadParams) -> Self {
        Self {
            u1: params.hover_thrust(),
            u2: 0.0,
        }
    }

    pub fn to_vector(&self) -> ControlVector {
        ControlVector::new(self.u1, self.u2)
    }

    pub fn from_vector(v: &ControlVector) -> Self {
        Self { u1: v[0], u2: v[1] }
    }
}

/// Linear state-space realization of the hover-linearized planar quadrotor.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSpaceModel {
    pub params: QuadParams,
    pub a_matrix: StateMatrix,
    pub b_matrix: InputMatrix,
    /// `G_c g`: only the z_dot row is populated, with `-g`.
    pub gravity_vector: StateVector,
    /// Noise gain `K`, identity unless overridden.
    pub noise_gain: StateMatrix,
}

impl StateSpaceModel {
    pub fn new(params: QuadParams) -> Result<Self, ModelError> {
        params.validate()?;
        let mut a = StateMatrix::zeros();
        a[(idx::Y, idx::Y_DOT)] = 1.0;
        a[(idx::Y_DOT, idx::PHI)] = -params.gravity;
        a[(idx::Z, idx::Z_DOT)] = 1.0;
        a[(idx::PHI, idx::PHI_DOT)] = 1.0;

        let mut b = InputMatrix::zeros();
        b[(idx::Z_DOT, 0)] = 1.0 / params.mass;
        b[(idx::PHI_DOT, 1)] = 1.0 / params.inertia_xx;

        let mut gravity_vector = StateVector::zeros();
        gravity_vector[idx::Z_DOT] = -params.gravity;

        Ok(Self {
            params,
            a_matrix: a,
            b_matrix: b,
            gravity_vector,
            noise_gain: StateMatrix::identity(),
        })
    }

    pub fn with_noise_gain(mut self, gain: StateMatrix) -> Result<Self, ModelError> {
        if gain.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("noise gain"));
        }
        self.noise_gain = gain;
        Ok(self)
    }

    /// `A x + B u + G g + K w`.
    pub fn derivative(&self, x: &StateVector, u: &ControlVector, w: &StateVector) -> StateVector {
        self.a_matrix * x + self.b_matrix * u + self.gravity_vector + self.noise_gain * w
    }

    pub fn derivative_of(&self, state: &AgentState, input: &ControlInput, noise_sample: &StateVector) -> StateVector {
        self.derivative(&state.to_vector(), &input.to_vector(), noise_sample)
    }

    /// Classical RK4 step with the input and disturbance held constant over the step.
    pub fn step_rk4(
        &self,
        x: &StateVector,
        u: &ControlVector,
        w: &StateVector,
        dt: f64,
    ) -> Result<StateVector, ModelError> {
        self.step_rk4_varying(x, |_| *u, w, dt)
    }

    /// RK4 step with a time-varying input `input_at(s)`, `s` in `[0, dt]`.
    /// The disturbance is held constant across stages.
    pub fn step_rk4_varying<F>(
        &self,
        x: &StateVector,
        input_at: F,
        w: &StateVector,
        dt: f64,
    ) -> Result<StateVector, ModelError>
    where
        F: Fn(f64) -> ControlVector,
    {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(ModelError::InvalidStep(dt));
        }
        let half = 0.5 * dt;
        let u_mid = input_at(half);
        let k1 = self.derivative(x, &input_at(0.0), w);
        let k2 = self.derivative(&(x + k1 * half), &u_mid, w);
        let k3 = self.derivative(&(x + k2 * half), &u_mid, w);
        let k4 = self.derivative(&(x + k3 * dt), &input_at(dt), w);
        let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("integrated state"));
        }
        Ok(next)
    }

    pub fn step_state(
        &self,
        state: &AgentState,
        input: &ControlInput,
        noise_sample: &StateVector,
        dt: f64,
    ) -> Result<AgentState, ModelError> {
        self.step_rk4(&state.to_vector(), &input.to_vector(), noise_sample, dt)
            .map(|v| AgentState::from_vector(&v))
    }
}

/// White Gaussian disturbance on the three acceleration channels.
///
/// Sampling is positional: the draw at `position` depends only on
/// `(seed, position)`, never on how many draws came before.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub mean: f64,
    pub std_dev: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(mean: f64, std_dev: f64, seed: u64) -> Result<Self, ModelError> {
        let spec = Self { mean, std_dev, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn silent() -> Self {
        Self {
            mean: 0.0,
            std_dev: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.std_dev.is_finite() && self.std_dev >= 0.0) {
            return Err(ModelError::InvalidNoise(self.std_dev));
        }
        if !self.mean.is_finite() {
            return Err(ModelError::NonFinite("noise mean"));
        }
        Ok(())
    }

    pub fn is_silent(&self) -> bool {
        self.std_dev == 0.0 && self.mean == 0.0
    }

    /// Independent stream derived from this one (per agent, per trial, ...).
    pub fn substream(&self, key: u64) -> Self {
        Self {
            seed: mix64(self.seed ^ mix64(key.wrapping_add(0x5851_f42d_4c95_7f2d))),
            ..*self
        }
    }

    /// `[0, w1, 0, w2, 0, w3]` with `w_j ~ N(mean, std_dev^2)`.
    pub fn sample(&self, position: u64) -> StateVector {
        let mut w = StateVector::zeros();
        if self.std_dev == 0.0 {
            w[idx::Y_DOT] = self.mean;
            w[idx::Z_DOT] = self.mean;
            w[idx::PHI_DOT] = self.mean;
            return w;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(self.seed ^ mix64(position)));
        // std_dev validated finite and positive here
        let normal = Normal::new(self.mean, self.std_dev).expect("valid normal");
        w[idx::Y_DOT] = normal.sample(&mut rng);
        w[idx::Z_DOT] = normal.sample(&mut rng);
        w[idx::PHI_DOT] = normal.sample(&mut rng);
        w
    }

    /// Samples for positions `0..count`.
    pub fn sequence(&self, count: usize) -> Vec<StateVector> {
        (0..count as u64).map(|k| self.sample(k)).collect()
    }
}

// splitmix64 finalizer
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn model() -> StateSpaceModel {
        StateSpaceModel::new(QuadParams::crazyflie()).unwrap()
    }

    #[test]
    fn input_matrix_entries() {
        let m = model();
        assert_relative_eq!(m.b_matrix[(idx::Z_DOT, 0)], 35.714285714285715, epsilon = 1e-12);
        assert_relative_eq!(m.b_matrix[(idx::PHI_DOT, 1)], 154_099.825_867_2, max_relative = 1e-9);
        let nonzero = m.b_matrix.iter().filter(|v| **v != 0.0).count();
        assert_eq!(nonzero, 2);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(QuadParams::new(0.0, 1.0, 9.81).is_err());
        assert!(QuadParams::new(1.0, -1.0, 9.81).is_err());
        assert!(QuadParams::new(1.0, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn hover_is_equilibrium() {
        let m = model();
        let s = AgentState::hover_at(0.3, 1.0);
        let u = ControlInput::hover(&m.params);
        let d = m.derivative_of(&s, &u, &StateVector::zeros());
        assert!(d.amax() < 1e-12);
        let next = m.step_state(&s, &u, &StateVector::zeros(), 0.1).unwrap();
        assert!((next.to_vector() - s.to_vector()).amax() <= 1e-12);
    }

    #[test]
    fn shift_rows_and_gravity() {
        let m = model();
        let s = AgentState {
            y_dot: 1.0,
            ..Default::default()
        };
        let d = m.derivative_of(&s, &ControlInput::default(), &StateVector::zeros());
        let expected = StateVector::new(1.0, 0.0, 0.0, -9.81, 0.0, 0.0);
        assert_eq!(d, expected);
    }

    #[test]
    fn gravity_isolation_and_noise_linearity() {
        let m = model();
        let zero = AgentState::default();
        let d = m.derivative_of(&zero, &ControlInput::default(), &StateVector::zeros());
        assert_eq!(d, StateVector::new(0.0, 0.0, 0.0, -9.81, 0.0, 0.0));
        let mut w = StateVector::zeros();
        w[idx::Z_DOT] = 0.1;
        let d = m.derivative_of(&zero, &ControlInput::default(), &w);
        assert_relative_eq!(d[idx::Z_DOT], -9.81 + 0.1, epsilon = 1e-15);
    }

    #[test]
    fn free_fall_step() {
        let m = model();
        let x = m
            .step_rk4(
                &StateVector::zeros(),
                &ControlVector::zeros(),
                &StateVector::zeros(),
                0.1,
            )
            .unwrap();
        assert_relative_eq!(x[idx::Z_DOT], -0.981, epsilon = 1e-15);
        assert_relative_eq!(x[idx::Z], -0.04905, epsilon = 1e-15);
    }

    #[test]
    fn rejects_non_positive_step() {
        let m = model();
        let zero = StateVector::zeros();
        assert_eq!(
            m.step_rk4(&zero, &ControlVector::zeros(), &zero, 0.0),
            Err(ModelError::InvalidStep(0.0))
        );
        assert!(m.step_rk4(&zero, &ControlVector::zeros(), &zero, -0.1).is_err());
    }

    #[test]
    fn silent_noise_is_zero() {
        for seed in [0, 1, 99] {
            let spec = NoiseSpec::new(0.0, 0.0, seed).unwrap();
            assert_eq!(spec.sample(17), StateVector::zeros());
        }
    }

    #[test]
    fn noise_is_positional() {
        let spec = NoiseSpec::new(0.0, 0.2, 7).unwrap();
        assert_eq!(spec.sample(3), spec.sample(3));
        assert_ne!(spec.sample(3), spec.sample(4));
        assert_ne!(spec.sample(3), spec.substream(1).sample(3));
        assert!(NoiseSpec::new(0.0, -1.0, 0).is_err());
    }

    #[test]
    fn noise_moments() {
        let spec = NoiseSpec::new(0.0, 0.2, 2024).unwrap();
        let n = 100_000;
        for row in [idx::Y_DOT, idx::Z_DOT, idx::PHI_DOT] {
            let xs: Vec<f64> = (0..n).map(|k| spec.sample(k)[row]).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!(mean.abs() <= 0.01, "mean {mean}");
            assert!((var.sqrt() - 0.2).abs() <= 0.01, "std {}", var.sqrt());
        }
    }
}
