//! Sampling-based model predictive control: noisy control sequences are
//! rolled out through the learned model, scored, and combined by a
//! softmin-weighted average. The closed race loop couples the controller
//! to the plant and, optionally, to the online learner.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{compute_targets, LogRow};
use crate::error::{Error, Result};
use crate::learner::{derive_seed, IterativeLearner, SessionReport};
use crate::parametric::{slip_angles, VehicleParams};
use crate::plant::{plant_derivative, plant_step, PlantParams, PlantState};
use crate::semiparam::{evaluate_mse, SemiParamModel};
use crate::state::{integrate_step, ControlInput, ControlLimits, StateDerivative, VehicleState};
use crate::track::{start_pose, Track};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MppiConfig {
    /// Rollout horizon in steps.
    pub horizon: usize,
    /// Number of sampled control sequences per replan.
    pub samples: usize,
    /// Softmin temperature.
    pub lambda: f64,
    /// Control noise standard deviations.
    pub sigma_accel: f64,
    pub sigma_steer: f64,
    /// Control (and rollout integration) period [s].
    pub dt: f64,
    pub seed: u64,
}

impl Default for MppiConfig {
    fn default() -> Self {
        Self {
            horizon: 75,
            samples: 512,
            lambda: 1.0,
            sigma_accel: 1.5,
            sigma_steer: 0.05,
            dt: 0.02,
            seed: 0,
        }
    }
}

impl MppiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.samples == 0 {
            return Err(Error::InvalidInput("horizon and samples must be >= 1".into()));
        }
        if !(self.lambda > 0.0) || !(self.sigma_accel > 0.0) || !(self.sigma_steer > 0.0) {
            return Err(Error::InvalidInput(
                "lambda and noise scales must be positive".into(),
            ));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidInput("control dt must be positive".into()));
        }
        Ok(())
    }
}

/// Per-step stage cost weights for the rollout evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    /// Penalty per step spent outside the track boundaries.
    pub off_track: f64,
    /// Reward per meter of centerline progress.
    pub progress: f64,
    /// Speed setpoint [m/s] and quadratic weight.
    pub speed_target: f64,
    pub speed: f64,
    /// Control effort weights.
    pub accel_effort: f64,
    pub steer_effort: f64,
    /// Soft slip-angle limit [rad] and quadratic excess weight.
    pub slip_limit: f64,
    pub slip: f64,
}

impl CostWeights {
    /// Conservative profile: moderate speed setpoint, tight slip budget.
    pub fn safe() -> Self {
        Self {
            off_track: 1e4,
            progress: 4.0,
            speed_target: 22.0,
            speed: 0.08,
            accel_effort: 0.015,
            steer_effort: 1.2,
            slip_limit: 0.07,
            slip: 3000.0,
        }
    }

    /// Pushy profile for probing the acceleration envelope.
    pub fn aggressive() -> Self {
        Self {
            off_track: 1e4,
            progress: 8.0,
            speed_target: 32.0,
            speed: 0.05,
            accel_effort: 0.008,
            steer_effort: 0.6,
            slip_limit: 0.12,
            slip: 600.0,
        }
    }
}

impl Default for CostWeights {
    fn default() -> Self {
        Self::safe()
    }
}

/// The dynamics model a rollout integrates. The plant-truth variant
/// exists for oracle tests and debugging; the controller normally runs
/// the learned semi-parametric model.
#[derive(Clone, Debug)]
pub enum RaceModel {
    Semi(SemiParamModel),
    PlantTruth(PlantParams),
}

impl RaceModel {
    pub fn derivative(&self, s: &VehicleState, u: &ControlInput) -> StateDerivative {
        match self {
            RaceModel::Semi(m) => m.predict_derivative(s, u),
            RaceModel::PlantTruth(p) => plant_derivative(
                &PlantState {
                    vehicle: *s,
                    actual_steer: u.steer,
                },
                u,
                p,
            ),
        }
    }

    pub fn vehicle_view(&self) -> VehicleParams {
        match self {
            RaceModel::Semi(m) => m.vehicle,
            RaceModel::PlantTruth(p) => VehicleParams {
                m: p.m,
                iz: p.iz,
                lf: p.lf,
                lr: p.lr,
                cs_front: p.cs_front,
                cs_rear: p.cs_rear,
                mu: p.mu,
                g: p.g,
            },
        }
    }

    pub fn as_semi(&self) -> Option<&SemiParamModel> {
        match self {
            RaceModel::Semi(m) => Some(m),
            RaceModel::PlantTruth(_) => None,
        }
    }
}

fn rollout_cost_hinted(
    model: &RaceModel,
    track: &Track,
    start: &VehicleState,
    start_segment: usize,
    start_s: f64,
    controls: &[ControlInput],
    weights: &CostWeights,
    limits: &ControlLimits,
    dt: f64,
) -> f64 {
    let vehicle = model.vehicle_view();
    let half_len = track.length() / 2.0;
    let mut state = *start;
    let mut hint = start_segment;
    let mut prev_s = start_s;
    let mut cost = 0.0;
    for u_raw in controls {
        let u = u_raw.clamped(limits);
        let deriv = model.derivative(&state, &u);
        state = match integrate_step(&state, &deriv, dt) {
            Ok(s) => s,
            Err(_) => return f64::INFINITY,
        };
        let q = track.query_hint(state.x, state.y, hint, 30);
        hint = q.segment;
        let mut ds = q.s - prev_s;
        if ds > half_len {
            ds -= track.length();
        } else if ds < -half_len {
            ds += track.length();
        }
        prev_s = q.s;

        if !q.inside {
            cost += weights.off_track;
        }
        let dv = weights.speed_target - state.vx;
        cost += weights.speed * dv * dv;
        cost -= weights.progress * ds;
        cost += weights.accel_effort * u.accel * u.accel
            + weights.steer_effort * u.steer * u.steer;
        let (af, ar) = slip_angles(&state, &u, &vehicle);
        let ef = (af.abs() - weights.slip_limit).max(0.0);
        let er = (ar.abs() - weights.slip_limit).max(0.0);
        cost += weights.slip * (ef * ef + er * er);
        if !cost.is_finite() {
            return f64::INFINITY;
        }
    }
    cost
}

/// Total rollout cost of one control sequence from a start state.
pub fn rollout_cost(
    model: &RaceModel,
    track: &Track,
    start: &VehicleState,
    controls: &[ControlInput],
    weights: &CostWeights,
    limits: &ControlLimits,
    dt: f64,
) -> f64 {
    let q = track.query(start.x, start.y);
    rollout_cost_hinted(model, track, start, q.segment, q.s, controls, weights, limits, dt)
}

/// Softmin weights over rollout costs, shift-invariant via the minimum
/// subtraction. Infinite costs get zero weight. Returns None when every
/// cost is infinite.
pub fn softmin_weights(costs: &[f64], lambda: f64) -> Option<Vec<f64>> {
    let c_min = costs.iter().cloned().filter(|c| c.is_finite()).fold(f64::INFINITY, f64::min);
    if !c_min.is_finite() {
        return None;
    }
    let mut w: Vec<f64> = costs
        .iter()
        .map(|c| {
            if c.is_finite() {
                (-(c - c_min) / lambda).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    Some(w)
}

#[derive(Clone, Debug)]
pub struct ControlDecision {
    pub control: ControlInput,
    pub plan: Vec<ControlInput>,
    /// Set when every rollout diverged and the braking fallback was used.
    pub fallback: bool,
    pub best_cost: f64,
}

/// Receding-horizon MPPI state: the warm-started nominal sequence and the
/// replan counter feeding the per-sample RNG streams.
#[derive(Clone, Debug)]
pub struct MppiController {
    pub cfg: MppiConfig,
    pub weights: CostWeights,
    pub limits: ControlLimits,
    nominal: Vec<ControlInput>,
    step_counter: u64,
}

impl MppiController {
    pub fn new(cfg: MppiConfig, weights: CostWeights, limits: ControlLimits) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            nominal: vec![ControlInput::default(); cfg.horizon],
            cfg,
            weights,
            limits,
            step_counter: 0,
        })
    }

    /// One replanning step: shift the nominal sequence, sample noisy
    /// candidates, score them through the model, average by softmin
    /// weight and return the first control.
    pub fn compute_control(
        &mut self,
        model: &RaceModel,
        track: &Track,
        state: &VehicleState,
    ) -> ControlDecision {
        let h = self.cfg.horizon;
        let n = self.cfg.samples;

        // warm start: shift left, repeat the last step
        self.nominal.rotate_left(1);
        self.nominal[h - 1] = self.nominal[h.saturating_sub(2)];

        let q0 = track.query(state.x, state.y);
        let nominal = &self.nominal;
        let cfg = &self.cfg;
        let weights = &self.weights;
        let limits = &self.limits;
        let step = self.step_counter;

        let evaluated: Vec<(Vec<(f64, f64)>, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                use rand::prelude::*;
                use rand_distr::StandardNormal;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(
                    cfg.seed, step, i as u64,
                ));
                let noise: Vec<(f64, f64)> = (0..h)
                    .map(|_| {
                        (
                            cfg.sigma_accel * rng.sample::<f64, _>(StandardNormal),
                            cfg.sigma_steer * rng.sample::<f64, _>(StandardNormal),
                        )
                    })
                    .collect();
                let candidate: Vec<ControlInput> = nominal
                    .iter()
                    .zip(&noise)
                    .map(|(u, (da, dd))| {
                        ControlInput::new(u.accel + da, u.steer + dd).clamped(limits)
                    })
                    .collect();
                let cost = rollout_cost_hinted(
                    model, track, state, q0.segment, q0.s, &candidate, weights, limits, cfg.dt,
                );
                (noise, cost)
            })
            .collect();

        let costs: Vec<f64> = evaluated.iter().map(|(_, c)| *c).collect();
        self.step_counter += 1;

        let Some(w) = softmin_weights(&costs, self.cfg.lambda) else {
            // Every rollout diverged: brake straight and report it.
            let control = ControlInput::new(self.limits.accel_min, 0.0);
            return ControlDecision {
                control,
                plan: self.nominal.clone(),
                fallback: true,
                best_cost: f64::INFINITY,
            };
        };

        for j in 0..h {
            let mut da = 0.0;
            let mut dd = 0.0;
            for (i, (noise, _)) in evaluated.iter().enumerate() {
                da += w[i] * noise[j].0;
                dd += w[i] * noise[j].1;
            }
            self.nominal[j] =
                ControlInput::new(self.nominal[j].accel + da, self.nominal[j].steer + dd)
                    .clamped(&self.limits);
        }

        let best = costs.iter().cloned().fold(f64::INFINITY, f64::min);
        ControlDecision {
            control: self.nominal[0],
            plan: self.nominal.clone(),
            fallback: false,
            best_cost: best,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LapRecord {
    pub lap: usize,
    pub time_s: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TelemetryRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub vx: f64,
    pub vy: f64,
    pub yaw_rate: f64,
    pub accel_cmd: f64,
    pub steer_cmd: f64,
    pub actual_steer: f64,
    pub s: f64,
    pub inside: bool,
}

#[derive(Clone, Debug)]
pub struct RaceLog {
    pub laps: Vec<LapRecord>,
    pub aborted: Option<String>,
    pub off_track_steps: u64,
    pub fallback_steps: u64,
    pub sim_time: f64,
    pub telemetry: Vec<TelemetryRow>,
    /// Model MSE on the full run dataset, one entry per model snapshot:
    /// index 0 is the starting model, index k the model after lap k.
    /// Empty for plant-truth runs.
    pub per_lap_mse: Vec<f64>,
    /// Model snapshots requested at fixed sim times.
    pub time_snapshots: Vec<(f64, SemiParamModel)>,
    pub sessions: Vec<SessionReport>,
}

#[derive(Clone, Debug)]
pub struct RaceConfig {
    pub laps: usize,
    pub mppi: MppiConfig,
    pub weights: CostWeights,
    pub limits: ControlLimits,
    /// Sim times [s] at which to snapshot the current model.
    pub snapshot_times: Vec<f64>,
    /// Hard wall on simulation time [s].
    pub max_sim_time: f64,
}

impl Default for RaceConfig {
    fn default() -> Self {
        Self {
            laps: 10,
            mppi: MppiConfig::default(),
            weights: CostWeights::safe(),
            limits: ControlLimits::default(),
            snapshot_times: Vec::new(),
            max_sim_time: 1200.0,
        }
    }
}

const STATIONARY_SPEED: f64 = 0.1;
const STATIONARY_LIMIT_S: f64 = 10.0;
const OFF_TRACK_LIMIT_S: f64 = 5.0;

/// Closed-loop race: replan at every control period, step the plant,
/// feed the learner when attached, detect laps by start-line crossings
/// with at least 80% of the lap distance covered, and abort when the car
/// is stuck or off the track for too long.
pub fn race_loop(
    plant: &PlantParams,
    model: RaceModel,
    mut learner: Option<&mut IterativeLearner>,
    track: &Track,
    cfg: &RaceConfig,
) -> Result<RaceLog> {
    if learner.is_some() && model.as_semi().is_none() {
        return Err(Error::InvalidInput(
            "online learning requires the semi-parametric model".into(),
        ));
    }
    let mut model = model;
    let mut controller = MppiController::new(cfg.mppi, cfg.weights, cfg.limits)?;
    let dt = cfg.mppi.dt;

    let (sx, sy, spsi) = start_pose(track);
    let mut plant_state = PlantState::at(VehicleState {
        x: sx,
        y: sy,
        psi: spsi,
        ..Default::default()
    });

    let mut log = RaceLog {
        laps: Vec::new(),
        aborted: None,
        off_track_steps: 0,
        fallback_steps: 0,
        sim_time: 0.0,
        telemetry: Vec::new(),
        per_lap_mse: Vec::new(),
        time_snapshots: Vec::new(),
        sessions: Vec::new(),
    };

    // snapshots for the per-lap MSE table; index 0 is the starting model
    let mut lap_models: Vec<SemiParamModel> = Vec::new();
    if let Some(m) = model.as_semi() {
        lap_models.push(m.clone());
    }
    let mut snapshot_times = cfg.snapshot_times.clone();
    snapshot_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut next_snapshot = 0usize;

    let mut t = 0.0;
    let mut prev_s = track.query(sx, sy).s;
    let mut dist_since_lap = 0.0;
    let mut lap_start_time = 0.0;
    let mut stationary_time = 0.0;
    let mut off_track_time = 0.0;
    let half_len = track.length() / 2.0;

    while log.laps.len() < cfg.laps && t < cfg.max_sim_time {
        // model snapshots at requested sim times
        while next_snapshot < snapshot_times.len() && t >= snapshot_times[next_snapshot] {
            if let Some(m) = model.as_semi() {
                log.time_snapshots.push((snapshot_times[next_snapshot], m.clone()));
            }
            next_snapshot += 1;
        }

        let decision = controller.compute_control(&model, track, &plant_state.vehicle);
        if decision.fallback {
            log.fallback_steps += 1;
        }
        let u = decision.control;
        let prev_vehicle = plant_state.vehicle;
        plant_state = plant_step(&plant_state, &u, plant, dt);
        t += dt;

        let q = track.query(plant_state.vehicle.x, plant_state.vehicle.y);
        log.telemetry.push(TelemetryRow {
            t,
            x: plant_state.vehicle.x,
            y: plant_state.vehicle.y,
            psi: plant_state.vehicle.psi,
            vx: plant_state.vehicle.vx,
            vy: plant_state.vehicle.vy,
            yaw_rate: plant_state.vehicle.yaw_rate,
            accel_cmd: u.accel,
            steer_cmd: u.steer,
            actual_steer: plant_state.actual_steer,
            s: q.s,
            inside: q.inside,
        });

        // learner: finite-difference target over the step just taken
        if let Some(l) = learner.as_deref_mut() {
            let target = StateDerivative {
                x_dot: (plant_state.vehicle.x - prev_vehicle.x) / dt,
                y_dot: (plant_state.vehicle.y - prev_vehicle.y) / dt,
                psi_dot: crate::state::angle_diff(plant_state.vehicle.psi, prev_vehicle.psi) / dt,
                vx_dot: (plant_state.vehicle.vx - prev_vehicle.vx) / dt,
                vy_dot: (plant_state.vehicle.vy - prev_vehicle.vy) / dt,
                yaw_accel: (plant_state.vehicle.yaw_rate - prev_vehicle.yaw_rate) / dt,
            };
            let semi = model.as_semi().expect("checked above").clone();
            if let Some((new_model, report)) =
                l.push_and_maybe_train(&semi, &prev_vehicle, &u, &target)?
            {
                log.sessions.push(report);
                model = RaceModel::Semi(new_model);
            }
        }

        // lap detection: start-line crossing with enough distance covered
        let mut ds = q.s - prev_s;
        if ds > half_len {
            ds -= track.length();
        } else if ds < -half_len {
            ds += track.length();
        }
        let crossed_start = q.s < prev_s && ds > 0.0;
        dist_since_lap += ds.max(0.0);
        prev_s = q.s;
        if crossed_start && dist_since_lap >= 0.8 * track.length() {
            log.laps.push(LapRecord {
                lap: log.laps.len() + 1,
                time_s: t - lap_start_time,
            });
            lap_start_time = t;
            dist_since_lap = 0.0;
            if let Some(m) = model.as_semi() {
                lap_models.push(m.clone());
            }
        }

        // abort conditions
        if plant_state.vehicle.vx < STATIONARY_SPEED {
            stationary_time += dt;
        } else {
            stationary_time = 0.0;
        }
        if q.inside {
            off_track_time = 0.0;
        } else {
            off_track_time += dt;
            log.off_track_steps += 1;
        }
        if stationary_time > STATIONARY_LIMIT_S {
            log.aborted = Some(format!("stationary for more than {STATIONARY_LIMIT_S} s"));
            break;
        }
        if off_track_time > OFF_TRACK_LIMIT_S {
            log.aborted = Some(format!("off track for more than {OFF_TRACK_LIMIT_S} s"));
            break;
        }
    }
    if log.aborted.is_none() && log.laps.len() < cfg.laps {
        log.aborted = Some("simulation time limit reached".into());
    }

    log.sim_time = t;

    // per-lap model MSE on the dataset collected over the whole run
    if !lap_models.is_empty() && log.telemetry.len() > 2 {
        let rows: Vec<LogRow> = log
            .telemetry
            .iter()
            .map(|r| LogRow {
                state: VehicleState {
                    x: r.x,
                    y: r.y,
                    psi: r.psi,
                    vx: r.vx,
                    vy: r.vy,
                    yaw_rate: r.yaw_rate,
                },
                control: ControlInput {
                    accel: r.accel_cmd,
                    steer: r.steer_cmd,
                },
                t: r.t,
            })
            .collect();
        let ds = compute_targets(&rows)?;
        for m in &lap_models {
            log.per_lap_mse.push(evaluate_mse(m, &ds)?.aggregate);
        }
    }
    Ok(log)
}
