//! Parametric vehicle model: dynamic bicycle with saturating brush tires,
//! lumped per-axle vertical loads and gradient-descent parameter fitting.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::state::{ControlInput, StateDerivative, VehicleState};

/// Below this longitudinal speed slip angles are forced to zero; the
/// arctan slip definition divides by vx.
pub const LOW_SPEED_GUARD: f64 = 1.0;

/// Physical parameters of the bicycle model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
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
    /// Tire-road friction coefficient.
    pub mu: f64,
    /// Gravitational acceleration [m/s^2].
    pub g: f64,
}

impl Default for VehicleParams {
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
        }
    }
}

impl VehicleParams {
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
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "vehicle parameter {name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
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

/// Lateral tire forces per tire [N] on the lumped front and rear axles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TireForce {
    pub fy_front: f64,
    pub fy_rear: f64,
}

/// Per-tire vertical loads (front, rear) of the lumped axles:
/// Fzf = lr m g / (2 (lf+lr)), Fzr = lf m g / (2 (lf+lr)).
pub fn vertical_loads(p: &VehicleParams) -> (f64, f64) {
    let wheelbase = p.lf + p.lr;
    let fzf = p.lr * p.m * p.g / (2.0 * wheelbase);
    let fzr = p.lf * p.m * p.g / (2.0 * wheelbase);
    (fzf, fzr)
}

/// Front and rear slip angles, referenced to the tire velocity direction
/// so that the brush force law opposes the slide. Both are zero below the
/// low-speed guard.
pub fn slip_angles(s: &VehicleState, u: &ControlInput, p: &VehicleParams) -> (f64, f64) {
    if s.vx < LOW_SPEED_GUARD {
        return (0.0, 0.0);
    }
    let alpha_f = ((s.vy + s.yaw_rate * p.lf) / s.vx).atan() - u.steer;
    let alpha_r = ((s.vy - s.yaw_rate * p.lr) / s.vx).atan();
    (alpha_f, alpha_r)
}

/// Slip angle at which the whole contact patch saturates.
pub fn alpha_crit(cs: f64, mu: f64, fz: f64) -> f64 {
    (3.0 * mu * fz / cs).atan()
}

/// Cubic brush tire lateral force with friction saturation beyond the
/// critical slip angle.
pub fn brush_tire_force(alpha: f64, cs: f64, mu: f64, fz: f64) -> f64 {
    if alpha.abs() > alpha_crit(cs, mu, fz) {
        return -mu * fz * alpha.signum();
    }
    let t = alpha.tan();
    let mu_fz = mu * fz;
    -cs * t + cs * cs / (3.0 * mu_fz) * t.abs() * t
        - cs * cs * cs / (27.0 * mu_fz * mu_fz) * t * t * t
}

/// Lateral forces at both axles for the given operating point.
pub fn tire_forces(s: &VehicleState, u: &ControlInput, p: &VehicleParams) -> TireForce {
    let (alpha_f, alpha_r) = slip_angles(s, u, p);
    let (fzf, fzr) = vertical_loads(p);
    TireForce {
        fy_front: brush_tire_force(alpha_f, p.cs_front, p.mu, fzf),
        fy_rear: brush_tire_force(alpha_r, p.cs_rear, p.mu, fzr),
    }
}

/// Bicycle-model state derivative (the parametric part f).
pub fn parametric_derivative(
    s: &VehicleState,
    u: &ControlInput,
    p: &VehicleParams,
) -> StateDerivative {
    let forces = tire_forces(s, u, p);
    let (sin_psi, cos_psi) = s.psi.sin_cos();
    StateDerivative {
        x_dot: cos_psi * s.vx - sin_psi * s.vy,
        y_dot: sin_psi * s.vx + cos_psi * s.vy,
        psi_dot: s.yaw_rate,
        vx_dot: s.yaw_rate * s.vy + u.accel,
        vy_dot: -s.yaw_rate * s.vx
            + 2.0 / p.m * (forces.fy_front * u.steer.cos() + forces.fy_rear),
        yaw_accel: 2.0 / p.iz * (p.lf * forces.fy_front - p.lr * forces.fy_rear),
    }
}

/// Options for [`fit_parameters`]: plain gradient descent on log-scaled
/// parameters with central-difference gradients.
#[derive(Clone, Copy, Debug)]
pub struct FitOptions {
    pub iterations: usize,
    pub step: f64,
    pub fd_eps: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            iterations: 500,
            step: 1e-2,
            fd_eps: 1e-4,
        }
    }
}

/// Outcome of a fitting run. `params` is the best iterate seen.
#[derive(Clone, Debug)]
pub struct FitReport {
    pub params: VehicleParams,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub iterations_run: usize,
    pub unidentifiable: bool,
    pub diverged: bool,
}

/// Mean squared error of the parametric model over the velocity-derivative
/// rows of a dataset.
pub fn parametric_mse(ds: &Dataset, p: &VehicleParams) -> f64 {
    let mut acc = 0.0;
    for s in ds.samples() {
        let pred = parametric_derivative(&s.state, &s.control, p).velocity_rows();
        let tgt = s.target.velocity_rows();
        for (a, b) in pred.iter().zip(tgt.iter()) {
            acc += (a - b) * (a - b);
        }
    }
    acc / (3 * ds.len()) as f64
}

fn params_from_log(theta: &[f64; 4], known: &VehicleParams) -> VehicleParams {
    VehicleParams {
        cs_front: theta[0].exp(),
        cs_rear: theta[1].exp(),
        mu: theta[2].exp(),
        iz: theta[3].exp(),
        ..*known
    }
}

/// Fit {cs_front, cs_rear, mu, iz} to a dataset by minimizing the velocity-
/// row MSE. Mass, geometry and gravity are taken from `init` and held
/// fixed (spec-sheet values). The best-loss iterate is always returned;
/// a run whose final loss exceeds the initial loss is flagged as diverged.
pub fn fit_parameters(ds: &Dataset, init: &VehicleParams, opts: &FitOptions) -> Result<FitReport> {
    if ds.is_empty() {
        return Err(Error::InvalidInput("cannot fit on an empty dataset".into()));
    }
    init.validate()?;

    let mut theta = [
        init.cs_front.ln(),
        init.cs_rear.ln(),
        init.mu.ln(),
        init.iz.ln(),
    ];
    let loss = |th: &[f64; 4]| parametric_mse(ds, &params_from_log(th, init));

    let initial_loss = loss(&theta);
    let mut best_params = *init;
    let mut best_loss = initial_loss;
    let mut unidentifiable = false;

    for it in 0..opts.iterations {
        let mut grad = [0.0; 4];
        for i in 0..4 {
            let mut up = theta;
            up[i] += opts.fd_eps;
            let mut dn = theta;
            dn[i] -= opts.fd_eps;
            grad[i] = (loss(&up) - loss(&dn)) / (2.0 * opts.fd_eps);
        }
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if it == 0 && gnorm < 1e-12 {
            // No lateral excitation in the data: stiffness, friction and
            // inertia do not move the loss.
            unidentifiable = true;
            break;
        }
        if gnorm < 1e-14 {
            break;
        }
        for i in 0..4 {
            theta[i] -= opts.step * grad[i];
        }
        let l = loss(&theta);
        if l < best_loss {
            best_loss = l;
            best_params = params_from_log(&theta, init);
        }
    }

    let final_loss = loss(&theta);
    let diverged =
        final_loss > (initial_loss * 1.000001).max(initial_loss + 1e-9) && !unidentifiable;
    Ok(FitReport {
        params: best_params,
        initial_loss,
        final_loss: best_loss,
        iterations_run: if unidentifiable { 0 } else { opts.iterations },
        unidentifiable,
        diverged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    use crate::dataset::Sample;

    #[test]
    fn loads_symmetric_wheelbase() {
        let p = VehicleParams {
            lf: 1.4,
            lr: 1.4,
            ..Default::default()
        };
        let (fzf, fzr) = vertical_loads(&p);
        assert_relative_eq!(fzf, 3310.875, epsilon = 1e-9);
        assert_relative_eq!(fzr, 3310.875, epsilon = 1e-9);
    }

    #[test]
    fn loads_asymmetric_wheelbase() {
        let p = VehicleParams::default();
        let (fzf, fzr) = vertical_loads(&p);
        assert_relative_eq!(fzf, 3783.8571428571427, epsilon = 1e-6);
        assert_relative_eq!(fzr, 2837.8928571428573, epsilon = 1e-6);
    }

    #[test]
    fn loads_sum_to_half_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let p = VehicleParams {
                m: rng.random_range(500.0..3000.0),
                lf: rng.random_range(0.8..2.0),
                lr: rng.random_range(0.8..2.0),
                ..Default::default()
            };
            let (fzf, fzr) = vertical_loads(&p);
            assert_relative_eq!(fzf + fzr, p.m * p.g / 2.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn slip_angles_basic() {
        let p = VehicleParams::default();
        let s = VehicleState {
            vx: 10.0,
            ..Default::default()
        };
        let u = ControlInput {
            steer: 0.05,
            ..Default::default()
        };
        let (af, ar) = slip_angles(&s, &u, &p);
        assert_relative_eq!(af, -0.05, epsilon = 1e-12);
        assert_relative_eq!(ar, 0.0, epsilon = 1e-12);

        let s = VehicleState {
            vx: 10.0,
            vy: 0.5,
            ..Default::default()
        };
        let (af, ar) = slip_angles(&s, &ControlInput::default(), &p);
        assert_relative_eq!(af, 0.049958395721942765, epsilon = 1e-12);
        assert_relative_eq!(ar, 0.049958395721942765, epsilon = 1e-12);
    }

    #[test]
    fn slip_angles_low_speed_guard() {
        let p = VehicleParams::default();
        let s = VehicleState {
            vx: 0.2,
            vy: 0.5,
            yaw_rate: 1.0,
            ..Default::default()
        };
        let u = ControlInput {
            steer: 0.3,
            ..Default::default()
        };
        assert_eq!(slip_angles(&s, &u, &p), (0.0, 0.0));
    }

    #[test]
    fn brush_force_zero_at_zero_slip() {
        assert_eq!(brush_tire_force(0.0, 80_000.0, 1.0, 3310.875), 0.0);
    }

    #[test]
    fn brush_force_matches_term_by_term_evaluation() {
        // Independent evaluation of the three polynomial terms.
        let (cs, mu, fz, alpha): (f64, f64, f64, f64) = (80_000.0, 1.0, 3310.875, 0.02);
        let t = alpha.tan();
        let term1 = -cs * t;
        let term2 = cs * cs / (3.0 * mu * fz) * t.abs() * t;
        let term3 = -cs.powi(3) / (27.0 * mu * mu * fz * fz) * t.powi(3);
        assert_relative_eq!(term1, -1600.2133674721938, epsilon = 1e-6);
        assert_relative_eq!(term2, 257.8052449817343, epsilon = 1e-6);
        assert_relative_eq!(term3, -13.844725478720038, epsilon = 1e-6);
        let expect = term1 + term2 + term3;
        assert_relative_eq!(
            brush_tire_force(alpha, cs, mu, fz),
            expect,
            epsilon = 1e-9
        );
        assert_relative_eq!(expect, -1356.2528479691794, epsilon = 1e-6);
    }

    proptest! {
        #[test]
        fn brush_force_continuous_at_saturation(
            cs in 20_000.0..150_000.0f64,
            mu in 0.3..1.5f64,
            fz in 1_000.0..6_000.0f64,
            sign in prop::bool::ANY,
        ) {
            let ac = alpha_crit(cs, mu, fz);
            let eps = 1e-9;
            let a = if sign { ac } else { -ac };
            let inside = brush_tire_force(a - eps * a.signum(), cs, mu, fz);
            let outside = brush_tire_force(a + eps * a.signum(), cs, mu, fz);
            prop_assert!((inside - outside).abs() <= 1e-6 * mu * fz,
                "discontinuity {} at alpha_crit", (inside - outside).abs());
        }

        #[test]
        fn brush_force_odd_and_bounded(
            cs in 20_000.0..150_000.0f64,
            mu in 0.3..1.5f64,
            fz in 1_000.0..6_000.0f64,
            alpha in -1.0..1.0f64,
        ) {
            let f = brush_tire_force(alpha, cs, mu, fz);
            let f_neg = brush_tire_force(-alpha, cs, mu, fz);
            prop_assert!((f + f_neg).abs() < 1e-9 * mu * fz);
            prop_assert!(f.abs() <= mu * fz + 1e-6);
        }
    }

    #[test]
    fn brush_force_monotone_up_to_crit() {
        let (cs, mu, fz) = (80_000.0, 1.0, 3783.857142857143);
        let ac = alpha_crit(cs, mu, fz);
        let n = 400;
        let mut prev = f64::INFINITY;
        for i in 0..=n {
            let a = -ac + 2.0 * ac * i as f64 / n as f64;
            let f = brush_tire_force(a, cs, mu, fz);
            assert!(f <= prev + 1e-9, "force not non-increasing at alpha={a}");
            prev = f;
        }
    }

    #[test]
    fn derivative_equilibrium_and_straight_line() {
        let p = VehicleParams::default();
        let zero = parametric_derivative(
            &VehicleState::default(),
            &ControlInput::default(),
            &p,
        );
        assert_eq!(zero.to_array(), [0.0; 6]);

        let s = VehicleState {
            vx: 15.0,
            ..Default::default()
        };
        let u = ControlInput {
            accel: 1.0,
            ..Default::default()
        };
        let d = parametric_derivative(&s, &u, &p);
        assert_relative_eq!(d.x_dot, 15.0, epsilon = 1e-12);
        assert_relative_eq!(d.y_dot, 0.0, epsilon = 1e-12);
        assert_relative_eq!(d.psi_dot, 0.0, epsilon = 1e-12);
        assert_relative_eq!(d.vx_dot, 1.0, epsilon = 1e-12);
        assert_relative_eq!(d.vy_dot, 0.0, epsilon = 1e-12);
        assert_relative_eq!(d.yaw_accel, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn derivative_steer_sign() {
        let p = VehicleParams::default();
        let s = VehicleState {
            vx: 15.0,
            ..Default::default()
        };
        let u = ControlInput {
            steer: 0.03,
            ..Default::default()
        };
        // Positive steer from a straight state: front slip -0.03, so the
        // front axle pushes left and the car starts a left turn.
        let forces = tire_forces(&s, &u, &p);
        let d = parametric_derivative(&s, &u, &p);
        assert!(forces.fy_front > 0.0);
        assert_relative_eq!(forces.fy_rear, 0.0, epsilon = 1e-12);
        assert!(d.yaw_accel > 0.0);
        assert!(d.vy_dot > 0.0);
    }

    #[test]
    fn derivative_mirror_symmetry() {
        let p = VehicleParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let s = VehicleState {
                x: 0.0,
                y: rng.random_range(-5.0..5.0),
                psi: rng.random_range(-3.0..3.0),
                vx: rng.random_range(0.0..40.0),
                vy: rng.random_range(-3.0..3.0),
                yaw_rate: rng.random_range(-1.5..1.5),
            };
            let u = ControlInput {
                accel: rng.random_range(-8.0..4.0),
                steer: rng.random_range(-0.5..0.5),
            };
            let mirrored_state = VehicleState {
                y: -s.y,
                psi: -s.psi,
                vy: -s.vy,
                yaw_rate: -s.yaw_rate,
                ..s
            };
            let mirrored_u = ControlInput {
                accel: u.accel,
                steer: -u.steer,
            };
            let d = parametric_derivative(&s, &u, &p);
            let dm = parametric_derivative(&mirrored_state, &mirrored_u, &p);
            assert_relative_eq!(dm.vy_dot, -d.vy_dot, max_relative = 1e-10, epsilon = 1e-10);
            assert_relative_eq!(dm.yaw_accel, -d.yaw_accel, max_relative = 1e-10, epsilon = 1e-10);
            assert_relative_eq!(dm.vx_dot, d.vx_dot, max_relative = 1e-10, epsilon = 1e-10);
        }
    }

    /// Excited synthetic dataset generated by the parametric model itself.
    fn synthetic_dataset(p: &VehicleParams, n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut samples = Vec::with_capacity(n);
        for i in 0..n {
            let state = VehicleState {
                x: 0.0,
                y: 0.0,
                psi: rng.random_range(-3.0..3.0),
                vx: rng.random_range(5.0..40.0),
                vy: rng.random_range(-2.5..2.5),
                yaw_rate: rng.random_range(-1.2..1.2),
            };
            let control = ControlInput {
                accel: rng.random_range(-8.0..4.5),
                steer: rng.random_range(-0.4..0.4),
            };
            let target = parametric_derivative(&state, &control, p);
            samples.push(Sample {
                state,
                control,
                target,
                timestamp: i as f64 * 0.02,
            });
        }
        Dataset::from_samples(samples)
    }

    #[test]
    fn fit_recovers_known_parameters() {
        let truth = VehicleParams::default();
        let ds = synthetic_dataset(&truth, 2000, 42);
        let init = VehicleParams {
            cs_front: truth.cs_front * 1.2,
            cs_rear: truth.cs_rear * 0.8,
            mu: truth.mu * 1.2,
            iz: truth.iz * 0.8,
            ..truth
        };
        let report = fit_parameters(&ds, &init, &FitOptions::default()).unwrap();
        assert!(!report.diverged);
        assert!(report.final_loss <= report.initial_loss);
        let got = report.params;
        for (name, a, b) in [
            ("cs_front", got.cs_front, truth.cs_front),
            ("cs_rear", got.cs_rear, truth.cs_rear),
            ("mu", got.mu, truth.mu),
            ("iz", got.iz, truth.iz),
        ] {
            let rel = (a - b).abs() / b;
            assert!(rel < 0.05, "{name} off by {:.1}%: {a} vs {b}", rel * 100.0);
        }
    }

    #[test]
    fn fit_noop_at_optimum() {
        let truth = VehicleParams::default();
        let ds = synthetic_dataset(&truth, 500, 43);
        let report = fit_parameters(&ds, &truth, &FitOptions::default()).unwrap();
        assert!(report.final_loss <= report.initial_loss + 1e-15);
        assert_relative_eq!(report.params.cs_front, truth.cs_front, max_relative = 1e-3);
        assert_relative_eq!(report.params.mu, truth.mu, max_relative = 1e-3);
    }

    #[test]
    fn fit_flags_straight_line_data_unidentifiable() {
        let p = VehicleParams::default();
        let mut samples = Vec::new();
        for i in 0..300 {
            let state = VehicleState {
                vx: 10.0 + 0.02 * i as f64,
                ..Default::default()
            };
            let control = ControlInput {
                accel: 1.0,
                steer: 0.0,
            };
            let target = parametric_derivative(&state, &control, &p);
            samples.push(Sample {
                state,
                control,
                target,
                timestamp: i as f64 * 0.02,
            });
        }
        let ds = Dataset::from_samples(samples);
        let report = fit_parameters(&ds, &p, &FitOptions::default()).unwrap();
        assert!(report.unidentifiable);
        assert_relative_eq!(report.final_loss, report.initial_loss);
        assert_eq!(report.params, p);
    }
}
