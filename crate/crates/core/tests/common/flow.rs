//! Closed-form flow of the hover model under a sinusoidal torque, which
//! RK4 cannot integrate exactly.

use quadform::model::{idx, QuadParams, StateSpaceModel, StateVector};
use quadform::nalgebra::Vector2;

pub const OMEGA: f64 = 3.0;
pub const HORIZON: f64 = 2.0;

/// Hover thrust with a sinusoidal torque `u2(t) = amp sin(ωt)`.
pub fn input(params: &QuadParams, amp: f64, t: f64) -> Vector2<f64> {
    Vector2::new(params.hover_thrust(), amp * (OMEGA * t).sin())
}

/// Closed-form flow of the hover model under `input`, starting at `x0`.
pub fn exact(params: &QuadParams, amp: f64, x0: &StateVector, t: f64) -> StateVector {
    let g = params.gravity;
    let k = amp / params.inertia_xx;
    let (phi0, rate0) = (x0[idx::PHI], x0[idx::PHI_DOT]);
    let drift = rate0 + k / OMEGA;
    let s = (OMEGA * t).sin();
    let c = (OMEGA * t).cos();
    let phi = phi0 + drift * t - k / (OMEGA * OMEGA) * s;
    let phi_dot = drift - k / OMEGA * c;
    // y'' = -g φ, integrated twice from the initial conditions.
    let int_phi = phi0 * t + drift * t * t / 2.0 + k / OMEGA.powi(3) * (c - 1.0);
    let int2_phi = phi0 * t * t / 2.0 + drift * t.powi(3) / 6.0 + k / OMEGA.powi(4) * (s - OMEGA * t);
    StateVector::from_column_slice(&[
        x0[idx::Y] + x0[idx::Y_DOT] * t - g * int2_phi,
        x0[idx::Y_DOT] - g * int_phi,
        x0[idx::Z] + x0[idx::Z_DOT] * t,
        x0[idx::Z_DOT],
        phi,
        phi_dot,
    ])
}

pub fn final_error(model: &StateSpaceModel, amp: f64, x0: &StateVector, steps: usize) -> f64 {
    let dt = HORIZON / steps as f64;
    let w = StateVector::zeros();
    let mut x = *x0;
    for n in 0..steps {
        let t0 = n as f64 * dt;
        x = model
            .step_rk4_varying(&x, |s| input(&model.params, amp, t0 + s), &w, dt)
            .unwrap();
    }
    (x - exact(&model.params, amp, x0, HORIZON)).amax()
}
