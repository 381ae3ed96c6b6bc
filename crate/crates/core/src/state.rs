//! Vehicle state, control and state-derivative types shared by every
//! other module, plus the explicit Euler transition used by the model side.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Wrap an angle to the half-open interval (-pi, pi].
pub fn wrap_angle(angle: f64) -> f64 {
    let r = angle.rem_euclid(2.0 * PI); // [0, 2*pi)
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Signed difference `a - b` taken on the circle, result in (-pi, pi].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}

/// Planar vehicle state: global pose plus body-frame velocities.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Global x position [m].
    pub x: f64,
    /// Global y position [m].
    pub y: f64,
    /// Yaw angle [rad], wrapped to (-pi, pi] after every integration step.
    pub psi: f64,
    /// Longitudinal velocity in the body frame [m/s].
    pub vx: f64,
    /// Lateral velocity in the body frame [m/s].
    pub vy: f64,
    /// Yaw rate [rad/s].
    pub yaw_rate: f64,
}

impl VehicleState {
    pub const DIM: usize = 6;

    pub fn to_array(self) -> [f64; 6] {
        [self.x, self.y, self.psi, self.vx, self.vy, self.yaw_rate]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            x: a[0],
            y: a[1],
            psi: a[2],
            vx: a[3],
            vy: a[4],
            yaw_rate: a[5],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Commanded longitudinal acceleration and front steering angle.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    /// Commanded longitudinal acceleration [m/s^2].
    pub accel: f64,
    /// Commanded front steering angle [rad].
    pub steer: f64,
}

impl ControlInput {
    pub fn new(accel: f64, steer: f64) -> Self {
        Self { accel, steer }
    }

    pub fn is_finite(&self) -> bool {
        self.accel.is_finite() && self.steer.is_finite()
    }

    pub fn clamped(self, limits: &ControlLimits) -> Self {
        Self {
            accel: self.accel.clamp(limits.accel_min, limits.accel_max),
            steer: self.steer.clamp(-limits.steer_max, limits.steer_max),
        }
    }
}

/// Actuator limits. Defaults: 4.9 m/s^2 drive, 8.8 m/s^2 braking,
/// 0.5 rad steering.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlLimits {
    pub accel_min: f64,
    pub accel_max: f64,
    pub steer_max: f64,
}

impl Default for ControlLimits {
    fn default() -> Self {
        Self {
            accel_min: -8.8,
            accel_max: 4.9,
            steer_max: 0.5,
        }
    }
}

/// Time derivative of [`VehicleState`], the prediction target of every
/// dynamics model in this crate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StateDerivative {
    pub x_dot: f64,
    pub y_dot: f64,
    pub psi_dot: f64,
    pub vx_dot: f64,
    pub vy_dot: f64,
    pub yaw_accel: f64,
}

impl StateDerivative {
    pub fn to_array(self) -> [f64; 6] {
        [
            self.x_dot,
            self.y_dot,
            self.psi_dot,
            self.vx_dot,
            self.vy_dot,
            self.yaw_accel,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            x_dot: a[0],
            y_dot: a[1],
            psi_dot: a[2],
            vx_dot: a[3],
            vy_dot: a[4],
            yaw_accel: a[5],
        }
    }

    /// The three learned channels: (vx_dot, vy_dot, yaw_accel).
    pub fn velocity_rows(self) -> [f64; 3] {
        [self.vx_dot, self.vy_dot, self.yaw_accel]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Global simulation configuration. dt defaults to 0.02 s (50 Hz logging).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { dt: 0.02, seed: 0 }
    }
}

/// One explicit Euler step `state + deriv * dt`, with the yaw angle
/// re-wrapped to (-pi, pi].
pub fn integrate_step(
    state: &VehicleState,
    deriv: &StateDerivative,
    dt: f64,
) -> Result<VehicleState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    if !state.is_finite() {
        return Err(Error::NonFinite("integrate_step state"));
    }
    if !deriv.is_finite() {
        return Err(Error::NonFinite("integrate_step derivative"));
    }
    Ok(VehicleState {
        x: state.x + deriv.x_dot * dt,
        y: state.y + deriv.y_dot * dt,
        psi: wrap_angle(state.psi + deriv.psi_dot * dt),
        vx: state.vx + deriv.vx_dot * dt,
        vy: state.vy + deriv.vy_dot * dt,
        yaw_rate: state.yaw_rate + deriv.yaw_accel * dt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_derivative_is_identity() {
        let s = VehicleState {
            x: 1.0,
            y: -2.0,
            psi: 0.3,
            vx: 10.0,
            vy: 0.1,
            yaw_rate: -0.2,
        };
        let out = integrate_step(&s, &StateDerivative::default(), 0.02).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn euler_arithmetic() {
        let s = VehicleState {
            x: 1.0,
            ..Default::default()
        };
        let d = StateDerivative {
            x_dot: 5.0,
            ..Default::default()
        };
        let out = integrate_step(&s, &d, 0.02).unwrap();
        assert_relative_eq!(out.x, 1.1, epsilon = 1e-12);
    }

    #[test]
    fn yaw_wraps_after_step() {
        let s = VehicleState {
            psi: 3.14,
            ..Default::default()
        };
        let d = StateDerivative {
            psi_dot: 0.2,
            ..Default::default()
        };
        let out = integrate_step(&s, &d, 0.02).unwrap();
        assert_relative_eq!(out.psi, -3.139185307179586, epsilon = 1e-12);
    }

    #[test]
    fn rejects_nonfinite_and_bad_dt() {
        let s = VehicleState {
            vx: f64::NAN,
            ..Default::default()
        };
        assert!(integrate_step(&s, &StateDerivative::default(), 0.02).is_err());
        let ok = VehicleState::default();
        assert!(integrate_step(&ok, &StateDerivative::default(), 0.0).is_err());
        let d = StateDerivative {
            vy_dot: f64::INFINITY,
            ..Default::default()
        };
        assert!(integrate_step(&ok, &d, 0.02).is_err());
    }

    #[test]
    fn wrap_angle_range_and_boundary() {
        assert_relative_eq!(wrap_angle(PI), PI);
        assert_relative_eq!(wrap_angle(-PI), PI);
        assert_relative_eq!(wrap_angle(3.0 * PI), PI);
        for k in -20..20 {
            let a = 0.37 * k as f64;
            let w = wrap_angle(a);
            assert!(w > -PI && w <= PI, "wrap({a}) = {w} out of range");
            let turns = ((w - a) / (2.0 * PI)).round();
            assert_relative_eq!(w - a, turns * 2.0 * PI, epsilon = 1e-9);
        }
    }

    #[test]
    fn linear_motion_composes_exactly() {
        let s0 = VehicleState {
            x: 2.0,
            y: -1.0,
            psi: 0.5,
            vx: 8.0,
            vy: 0.2,
            yaw_rate: 0.05,
        };
        let d = StateDerivative {
            x_dot: 3.0,
            y_dot: -0.5,
            psi_dot: 0.1,
            vx_dot: 0.7,
            vy_dot: -0.05,
            yaw_accel: 0.01,
        };
        let k = 40;
        let dt = 0.02;
        let mut stepped = s0;
        for _ in 0..k {
            stepped = integrate_step(&stepped, &d, dt).unwrap();
        }
        let once = integrate_step(&s0, &d, k as f64 * dt).unwrap();
        for (a, b) in stepped.to_array().iter().zip(once.to_array().iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }
}
