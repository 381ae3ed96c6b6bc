//! Scripted data-collection driver: pure-pursuit steering toward a
//! weaving reference offset, piecewise-random speed targets capped by a
//! curvature-aware speed governor. Stands in for manual driving when
//! generating training logs.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{LogRow, RawLog};
use crate::error::{Error, Result};
use crate::learner::derive_seed;
use crate::plant::{plant_step, PlantParams, PlantState};
use crate::state::{wrap_angle, ControlInput, ControlLimits, VehicleState};
use crate::track::{start_pose, Track};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriverConfig {
    /// Random speed-target range [m/s].
    pub speed_min: f64,
    pub speed_max: f64,
    /// Resampling period range for targets and weave [s].
    pub segment_min_s: f64,
    pub segment_max_s: f64,
    /// Cornering budget [m/s^2]; clipped against the plant's grip.
    pub lat_accel_budget: f64,
    /// Planning deceleration for the braking-aware governor [m/s^2].
    pub brake_decel: f64,
    /// Pure-pursuit lookahead = gain * vx, clamped.
    pub lookahead_gain: f64,
    pub lookahead_min: f64,
    pub lookahead_max: f64,
    /// Speed-tracking proportional gain.
    pub accel_kp: f64,
    /// Maximum lateral weave amplitude around the centerline [m].
    pub weave_max_offset: f64,
}

impl Default for DriverConfig {
    fn default() -> Self {
        Self {
            speed_min: 5.0,
            speed_max: 45.0,
            segment_min_s: 3.0,
            segment_max_s: 6.0,
            lat_accel_budget: 7.5,
            brake_decel: 6.0,
            lookahead_gain: 0.45,
            lookahead_min: 6.0,
            lookahead_max: 26.0,
            accel_kp: 1.5,
            weave_max_offset: 2.5,
        }
    }
}

/// Highest speed the car may carry right now so that every curvature
/// ahead stays within the lateral budget after braking at brake_decel.
fn governor_speed(track: &Track, s: f64, vx: f64, budget: f64, brake: f64) -> f64 {
    let scan = vx * vx / (2.0 * brake) + 30.0;
    let step = 2.0;
    let mut allow = f64::MAX;
    let mut d = 0.0;
    while d <= scan {
        let kappa = track.curvature_at(s + d).abs().max(1e-6);
        let v_curv = (budget / kappa).sqrt();
        let v_here = (v_curv * v_curv + 2.0 * brake * d).sqrt();
        allow = allow.min(v_here);
        d += step;
    }
    allow
}

struct SegmentPlan {
    until: f64,
    speed_target: f64,
    weave_amp: f64,
    weave_freq: f64,
    weave_phase: f64,
}

fn plan_segment(rng: &mut ChaCha8Rng, t: f64, cfg: &DriverConfig) -> SegmentPlan {
    SegmentPlan {
        until: t + rng.random_range(cfg.segment_min_s..cfg.segment_max_s),
        speed_target: rng.random_range(cfg.speed_min..cfg.speed_max),
        weave_amp: rng.random_range(0.0..cfg.weave_max_offset),
        weave_freq: rng.random_range(0.1..0.4),
        weave_phase: rng.random_range(0.0..std::f64::consts::TAU),
    }
}

/// Drive the plant around the track for `duration_s`, logging at `dt`.
/// Simulation proceeds in blocks; a block that leaves the track is
/// discarded and retried with a re-derived seed.
pub fn drive(
    plant: &PlantParams,
    track: &Track,
    duration_s: f64,
    dt: f64,
    cfg: &DriverConfig,
    seed: u64,
) -> Result<RawLog> {
    if !(duration_s > 0.0) {
        return Err(Error::InvalidInput("duration must be positive".into()));
    }
    let limits = ControlLimits::default();
    let wheelbase = plant.lf + plant.lr;
    // a cautious driver leaves grip margin on a slippery surface
    let budget = cfg.lat_accel_budget.min(0.8 * plant.mu * plant.g);

    let (sx, sy, spsi) = start_pose(track);
    let mut state = PlantState::at(VehicleState {
        x: sx,
        y: sy,
        psi: spsi,
        ..Default::default()
    });

    let block_s = 20.0;
    let steps_per_block = (block_s / dt).round() as usize;
    let total_steps = (duration_s / dt).round() as usize;
    let mut rows: Vec<LogRow> = Vec::with_capacity(total_steps);
    let mut t = 0.0;
    let mut block_idx = 0u64;

    while rows.len() < total_steps {
        let mut committed = false;
        for retry in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, block_idx, retry));
            let mut plan = plan_segment(&mut rng, t, cfg);
            let mut block_rows = Vec::with_capacity(steps_per_block);
            let mut block_state = state;
            let mut bt = t;
            let mut ok = true;
            let steps = steps_per_block.min(total_steps - rows.len());

            for _ in 0..steps {
                if bt >= plan.until {
                    plan = plan_segment(&mut rng, bt, cfg);
                }
                let v = &block_state.vehicle;
                let q = track.query(v.x, v.y);
                if !q.inside {
                    ok = false;
                    break;
                }

                // longitudinal: random target capped by the governor
                let v_allow = governor_speed(track, q.s, v.vx, budget, cfg.brake_decel);
                let v_cmd = plan.speed_target.min(v_allow);
                let accel = (cfg.accel_kp * (v_cmd - v.vx)).clamp(limits.accel_min, limits.accel_max);

                // lateral: pure pursuit toward a weaving offset reference
                let lookahead = (cfg.lookahead_gain * v.vx)
                    .clamp(cfg.lookahead_min, cfg.lookahead_max);
                let offset = plan.weave_amp
                    * (std::f64::consts::TAU * plan.weave_freq * bt + plan.weave_phase).sin();
                let s_ahead = q.s + lookahead;
                let (cx, cy) = track.point_at(s_ahead);
                let normal = track.heading_at(s_ahead) + std::f64::consts::FRAC_PI_2;
                let (tx, ty) = (cx + offset * normal.cos(), cy + offset * normal.sin());
                let alpha = wrap_angle((ty - v.y).atan2(tx - v.x) - v.psi);
                let ld = ((tx - v.x).powi(2) + (ty - v.y).powi(2)).sqrt().max(1.0);
                let steer = (2.0 * wheelbase * alpha.sin() / ld)
                    .atan()
                    .clamp(-limits.steer_max, limits.steer_max);

                let u = ControlInput { accel, steer };
                block_rows.push(LogRow {
                    state: *v,
                    control: u,
                    t: bt,
                });
                block_state = plant_step(&block_state, &u, plant, dt);
                bt += dt;
            }

            if ok {
                rows.extend(block_rows);
                state = block_state;
                t = bt;
                committed = true;
                break;
            }
        }
        if !committed {
            return Err(Error::Numerical(format!(
                "driver failed to keep the car on track near t={t:.1}s after 10 retries"
            )));
        }
        block_idx += 1;
    }

    Ok(RawLog::new(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::Track;

    fn gen_oval() -> Track {
        Track::oval(300.0, 35.0, 10.0, 0.75)
    }

    #[test]
    fn produces_requested_length_and_stays_on_track() {
        let track = gen_oval();
        let plant = PlantParams::default();
        let log = drive(&plant, &track, 40.0, 0.02, &DriverConfig::default(), 7).unwrap();
        assert_eq!(log.len(), 2000);
        for r in log.rows.iter().step_by(25) {
            assert!(track.query(r.state.x, r.state.y).inside);
        }
        // timestamps strictly increasing
        for w in log.rows.windows(2) {
            assert!(w[1].t > w[0].t);
        }
    }

    #[test]
    fn same_seed_reproduces_identical_log() {
        let track = gen_oval();
        let plant = PlantParams::default();
        let a = drive(&plant, &track, 20.0, 0.02, &DriverConfig::default(), 3).unwrap();
        let b = drive(&plant, &track, 20.0, 0.02, &DriverConfig::default(), 3).unwrap();
        assert_eq!(a.to_csv_string(), b.to_csv_string());
    }

    #[test]
    fn long_run_covers_wide_speed_range() {
        let track = gen_oval();
        let plant = PlantParams::default();
        let log = drive(&plant, &track, 240.0, 0.02, &DriverConfig::default(), 11).unwrap();
        let vmin = log.rows.iter().map(|r| r.state.vx).fold(f64::MAX, f64::min);
        let vmax = log.rows.iter().map(|r| r.state.vx).fold(f64::MIN, f64::max);
        assert!(vmin < 6.0, "slowest speed {vmin}");
        assert!(vmax > 35.0, "fastest speed {vmax}");
        let peak_lat = log
            .rows
            .iter()
            .map(|r| (r.state.yaw_rate * r.state.vx).abs())
            .fold(f64::MIN, f64::max);
        assert!(peak_lat > 5.0, "peak lateral acceleration {peak_lat}");
    }
}
