//! Ground-truth vehicle plant. Same bicycle/brush-tire core as the
//! parametric model, deliberately enriched: aerodynamic drag, longitudinal
//! load transfer, a lagged steering actuator and asymmetric cornering
//! stiffness. The gap between this plant and the parametric model is the
//! residual the network learns. Mass and friction are modifiable at
//! runtime.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::parametric::{brush_tire_force, slip_angles, VehicleParams};
use crate::state::{wrap_angle, ControlInput, StateDerivative, VehicleState};

/// Effective C.G. height used for longitudinal load transfer [m].
const CG_HEIGHT: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    /// Mass [kg].
    pub m: f64,
    /// Yaw inertia [kg m^2].
    pub iz: f64,
    /// Distance C.G. to front axle [m].
    pub lf: f64,
    /// Distance C.G. to rear axle [m].
    pub lr: f64,
    /// Front cornering stiffness, per tire [N/rad].
    pub cs_front: f64,
    /// Rear cornering stiffness, per tire [N/rad].
    pub cs_rear: f64,
    /// Tire-road friction coefficient, in (0, 2].
    pub mu: f64,
    /// Gravitational acceleration [m/s^2].
    pub g: f64,
    /// Aerodynamic drag coefficient [N s^2/m^2].
    pub drag_coeff: f64,
    /// Steering actuator first-order lag time constant [s].
    pub steer_lag_tau: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            m: 1350.0,
            iz: 2500.0,
            lf: 1.2,
            lr: 1.6,
            cs_front: 80_000.0,
            cs_rear: 90_000.0,
            mu: 1.0,
            g: 9.81,
            drag_coeff: 0.7,
            steer_lag_tau: 0.08,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("m", self.m),
            ("iz", self.iz),
            ("lf", self.lf),
            ("lr", self.lr),
            ("cs_front", self.cs_front),
            ("cs_rear", self.cs_rear),
            ("mu", self.mu),
            ("g", self.g),
            ("drag_coeff", self.drag_coeff),
            ("steer_lag_tau", self.steer_lag_tau),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "plant parameter {name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.mu > 2.0 {
            return Err(Error::InvalidInput(format!(
                "plant friction mu must lie in (0, 2], got {}",
                self.mu
            )));
        }
        Ok(())
    }

    /// View of the plant's bicycle-model core, used to share the slip and
    /// tire computations with the parametric module.
    fn as_vehicle(&self) -> VehicleParams {
        VehicleParams {
            m: self.m,
            iz: self.iz,
            lf: self.lf,
            lr: self.lr,
            cs_front: self.cs_front,
            cs_rear: self.cs_rear,
            mu: self.mu,
            g: self.g,
        }
    }

    pub fn write_toml(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read_toml(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let p: Self = toml::from_str(&text)?;
        p.validate()?;
        Ok(p)
    }
}

/// Plant state: the vehicle plus the lagged steering actuator.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PlantState {
    pub vehicle: VehicleState,
    /// Realized front steering angle [rad], following the command through
    /// a first-order lag.
    pub actual_steer: f64,
}

impl PlantState {
    pub fn at(vehicle: VehicleState) -> Self {
        Self {
            vehicle,
            actual_steer: 0.0,
        }
    }
}

/// Returns a copy with mass and friction replaced; vertical loads pick up
/// the new mass wherever they are computed downstream.
pub fn modify_dynamics(params: &PlantParams, new_mass: f64, new_mu: f64) -> Result<PlantParams> {
    let out = PlantParams {
        m: new_mass,
        mu: new_mu,
        ..*params
    };
    out.validate()?;
    Ok(out)
}

/// Plant state derivative. Differences from the parametric model: tire
/// forces see the lagged actuator steer, vertical loads shift between the
/// axles in proportion to the commanded acceleration, and quadratic
/// aerodynamic drag acts on vx.
pub fn plant_derivative(
    ps: &PlantState,
    u: &ControlInput,
    params: &PlantParams,
) -> StateDerivative {
    let vp = params.as_vehicle();
    let s = &ps.vehicle;
    let steer_eff = ControlInput {
        accel: u.accel,
        steer: ps.actual_steer,
    };
    let (alpha_f, alpha_r) = slip_angles(s, &steer_eff, &vp);

    let wheelbase = params.lf + params.lr;
    let static_fzf = params.lr * params.m * params.g / (2.0 * wheelbase);
    let static_fzr = params.lf * params.m * params.g / (2.0 * wheelbase);
    // Accelerating unloads the front axle, braking loads it.
    let transfer = params.m * u.accel * CG_HEIGHT / (2.0 * wheelbase);
    let fzf = (static_fzf - transfer).max(0.0);
    let fzr = (static_fzr + transfer).max(0.0);

    let fy_front = brush_tire_force(alpha_f, params.cs_front, params.mu, fzf);
    let fy_rear = brush_tire_force(alpha_r, params.cs_rear, params.mu, fzr);

    let (sin_psi, cos_psi) = s.psi.sin_cos();
    StateDerivative {
        x_dot: cos_psi * s.vx - sin_psi * s.vy,
        y_dot: sin_psi * s.vx + cos_psi * s.vy,
        psi_dot: s.yaw_rate,
        vx_dot: s.yaw_rate * s.vy + u.accel - params.drag_coeff * s.vx * s.vx / params.m,
        vy_dot: -s.yaw_rate * s.vx
            + 2.0 / params.m * (fy_front * ps.actual_steer.cos() + fy_rear),
        yaw_accel: 2.0 / params.iz * (params.lf * fy_front - params.lr * fy_rear),
    }
}

/// One RK4 step of the plant, integrating the lagged actuator as a
/// seventh state alongside the vehicle.
pub fn plant_step(
    ps: &PlantState,
    u: &ControlInput,
    params: &PlantParams,
    dt: f64,
) -> PlantState {
    let deriv7 = |state: &PlantState| -> [f64; 7] {
        let d = plant_derivative(state, u, params);
        let a = d.to_array();
        let steer_dot = (u.steer - state.actual_steer) / params.steer_lag_tau;
        [a[0], a[1], a[2], a[3], a[4], a[5], steer_dot]
    };
    let advance = |state: &PlantState, k: &[f64; 7], h: f64| -> PlantState {
        let v = state.vehicle.to_array();
        PlantState {
            vehicle: VehicleState::from_array([
                v[0] + h * k[0],
                v[1] + h * k[1],
                v[2] + h * k[2],
                v[3] + h * k[3],
                v[4] + h * k[4],
                v[5] + h * k[5],
            ]),
            actual_steer: state.actual_steer + h * k[6],
        }
    };

    let k1 = deriv7(ps);
    let k2 = deriv7(&advance(ps, &k1, dt / 2.0));
    let k3 = deriv7(&advance(ps, &k2, dt / 2.0));
    let k4 = deriv7(&advance(ps, &k3, dt));
    let mut combined = [0.0; 7];
    for i in 0..7 {
        combined[i] = (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0;
    }
    let mut next = advance(ps, &combined, dt);
    next.vehicle.psi = wrap_angle(next.vehicle.psi);
    // The plant never rolls backwards; the drag and tire terms assume
    // forward motion.
    if next.vehicle.vx < 0.0 {
        next.vehicle.vx = 0.0;
    }
    next
}
