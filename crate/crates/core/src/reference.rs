//! Leader reference trajectories in the YZ plane.

use std::f64::consts::PI;
use std::fmt::Debug;

use serde::{Deserialize, Serialize};

use crate::formation::Point;
use crate::model::{idx, StateVector};

pub trait ReferenceTrajectory: Debug + Send + Sync {
    fn name(&self) -> &'static str;
    fn position(&self, t: f64) -> Point;
    fn velocity(&self, t: f64) -> Point;

    /// `[y, y_dot, z, z_dot, 0, 0]` at time `t`.
    fn state(&self, t: f64) -> StateVector {
        let p = self.position(t);
        let v = self.velocity(t);
        let mut x = StateVector::zeros();
        x[idx::Y] = p.x;
        x[idx::Y_DOT] = v.x;
        x[idx::Z] = p.y;
        x[idx::Z_DOT] = v.y;
        x
    }

    fn sample(&self, times: &[f64]) -> Vec<Point> {
        times.iter().map(|t| self.position(*t)).collect()
    }
}

/// Parameters shared by the registered reference generators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceParams {
    /// Forward speed along `y`, m/s.
    pub forward_speed: f64,
    /// Vertical oscillation amplitude, m.
    pub amplitude: f64,
    /// rad/s; one full period over the horizon when absent.
    pub angular_frequency: Option<f64>,
    /// Altitude the oscillation is centred on, m.
    pub base_altitude: f64,
    pub start_y: f64,
}

impl Default for ReferenceParams {
    fn default() -> Self {
        Self {
            forward_speed: 0.1,
            amplitude: 0.5,
            angular_frequency: None,
            base_altitude: 1.0,
            start_y: 0.0,
        }
    }
}

impl ReferenceParams {
    pub fn angular_frequency_for(&self, horizon: f64) -> f64 {
        self.angular_frequency.unwrap_or(2.0 * PI / horizon)
    }
}

/// `(y0 + v t, z0 + A sin(w t))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sinusoid {
    pub start_y: f64,
    pub forward_speed: f64,
    pub base_altitude: f64,
    pub amplitude: f64,
    pub angular_frequency: f64,
}

impl Sinusoid {
    pub fn from_params(params: &ReferenceParams, horizon: f64) -> Self {
        Self {
            start_y: params.start_y,
            forward_speed: params.forward_speed,
            base_altitude: params.base_altitude,
            amplitude: params.amplitude,
            angular_frequency: params.angular_frequency_for(horizon),
        }
    }
}

impl ReferenceTrajectory for Sinusoid {
    fn name(&self) -> &'static str {
        "sinusoid"
    }

    fn position(&self, t: f64) -> Point {
        Point::new(
            self.start_y + self.forward_speed * t,
            self.base_altitude + self.amplitude * (self.angular_frequency * t).sin(),
        )
    }

    fn velocity(&self, t: f64) -> Point {
        Point::new(
            self.forward_speed,
            self.amplitude * self.angular_frequency * (self.angular_frequency * t).cos(),
        )
    }
}

/// Stationary point at `(start_y, base_altitude)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hold {
    pub point: Point,
}

impl ReferenceTrajectory for Hold {
    fn name(&self) -> &'static str {
        "hold"
    }

    fn position(&self, _t: f64) -> Point {
        self.point
    }

    fn velocity(&self, _t: f64) -> Point {
        Point::zeros()
    }
}
