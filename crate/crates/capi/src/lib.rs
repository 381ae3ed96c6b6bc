//! C ABI over the apexsim core: opaque handles, integer error codes, and
//! a thread-local last-error message. All functions are panic-safe.
//!
//! States are passed as 6-element arrays [x, y, psi, vx, vy, yaw_rate],
//! controls as [accel, steer], derivatives as 6-element arrays of the
//! same layout per second.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use apexsim::mppi::{CostWeights, MppiConfig, MppiController, RaceModel};
use apexsim::plant::{modify_dynamics, plant_step, PlantParams, PlantState};
use apexsim::semiparam::{load_bundle, SemiParamModel};
use apexsim::state::{ControlInput, ControlLimits, VehicleState};
use apexsim::track::Track;

/// Status code returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ApexsimStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Numerical = 4,
    Panic = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_from(err: &apexsim::Error) -> ApexsimStatus {
    set_error(err.to_string());
    match err {
        apexsim::Error::InvalidInput(_) | apexsim::Error::NonFinite(_) => {
            ApexsimStatus::InvalidArgument
        }
        apexsim::Error::Io(_) | apexsim::Error::Parse(_) => ApexsimStatus::Io,
        apexsim::Error::Numerical(_) => ApexsimStatus::Numerical,
    }
}

/// Copy the last error message for this thread into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length.
#[no_mangle]
pub extern "C" fn apexsim_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

fn guard(f: impl FnOnce() -> ApexsimStatus) -> ApexsimStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            ApexsimStatus::Panic
        }
    }
}

unsafe fn path_from(ptr: *const c_char) -> Result<&'static Path, ApexsimStatus> {
    if ptr.is_null() {
        set_error("null path");
        return Err(ApexsimStatus::NullPointer);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(ApexsimStatus::InvalidArgument)
        }
    }
}

fn state_from(arr: &[f64; 6]) -> VehicleState {
    VehicleState {
        x: arr[0],
        y: arr[1],
        psi: arr[2],
        vx: arr[3],
        vy: arr[4],
        yaw_rate: arr[5],
    }
}

fn state_to(s: &VehicleState, out: &mut [f64; 6]) {
    *out = [s.x, s.y, s.psi, s.vx, s.vy, s.yaw_rate];
}

/// Opaque semi-parametric model handle.
pub struct ApexsimModel(SemiParamModel);

/// Opaque plant handle: parameters plus the integrated state (vehicle
/// and steering actuator).
pub struct ApexsimPlant {
    params: PlantParams,
    state: PlantState,
}

/// Opaque track handle.
pub struct ApexsimTrack(Track);

/// Opaque sampling controller handle.
pub struct ApexsimController(MppiController);

/// Load a model bundle directory (vehicle.toml + network.json +
/// metadata.json).
#[no_mangle]
pub unsafe extern "C" fn apexsim_model_load(
    bundle_dir: *const c_char,
    out: *mut *mut ApexsimModel,
) -> ApexsimStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer");
            return ApexsimStatus::NullPointer;
        }
        let path = match path_from(bundle_dir) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_bundle(path) {
            Ok((model, _)) => {
                *out = Box::into_raw(Box::new(ApexsimModel(model)));
                ApexsimStatus::Ok
            }
            Err(e) => status_from(&e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn apexsim_model_free(model: *mut ApexsimModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Full semi-parametric state derivative for one state/control pair.
#[no_mangle]
pub unsafe extern "C" fn apexsim_model_predict(
    model: *const ApexsimModel,
    state: *const f64,
    control: *const f64,
    out_derivative: *mut f64,
) -> ApexsimStatus {
    guard(|| {
        if model.is_null() || state.is_null() || control.is_null() || out_derivative.is_null() {
            set_error("null pointer argument");
            return ApexsimStatus::NullPointer;
        }
        let s = state_from(&*(state as *const [f64; 6]));
        let c = &*(control as *const [f64; 2]);
        if !s.is_finite() || !c.iter().all(|v| v.is_finite()) {
            set_error("non-finite state or control");
            return ApexsimStatus::InvalidArgument;
        }
        let u = ControlInput {
            accel: c[0],
            steer: c[1],
        };
        let d = (*model).0.predict_derivative(&s, &u);
        let out = &mut *(out_derivative as *mut [f64; 6]);
        *out = d.to_array();
        ApexsimStatus::Ok
    })
}

/// Create a plant with default parameters, at rest at the origin.
#[no_mangle]
pub unsafe extern "C" fn apexsim_plant_new(out: *mut *mut ApexsimPlant) -> ApexsimStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer");
            return ApexsimStatus::NullPointer;
        }
        *out = Box::into_raw(Box::new(ApexsimPlant {
            params: PlantParams::default(),
            state: PlantState::default(),
        }));
        ApexsimStatus::Ok
    })
}

/// Create a plant from a TOML parameter file.
#[no_mangle]
pub unsafe extern "C" fn apexsim_plant_new_from_file(
    config_path: *const c_char,
    out: *mut *mut ApexsimPlant,
) -> ApexsimStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer");
            return ApexsimStatus::NullPointer;
        }
        let path = match path_from(config_path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match PlantParams::read_toml(path) {
            Ok(params) => {
                *out = Box::into_raw(Box::new(ApexsimPlant {
                    params,
                    state: PlantState::default(),
                }));
                ApexsimStatus::Ok
            }
            Err(e) => status_from(&e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn apexsim_plant_free(plant: *mut ApexsimPlant) {
    if !plant.is_null() {
        drop(Box::from_raw(plant));
    }
}

/// Replace mass and friction at runtime (other parameters unchanged).
#[no_mangle]
pub unsafe extern "C" fn apexsim_plant_modify(
    plant: *mut ApexsimPlant,
    mass: f64,
    mu: f64,
) -> ApexsimStatus {
    guard(|| {
        if plant.is_null() {
            set_error("null plant");
            return ApexsimStatus::NullPointer;
        }
        match modify_dynamics(&(*plant).params, mass, mu) {
            Ok(p) => {
                (*plant).params = p;
                ApexsimStatus::Ok
            }
            Err(e) => status_from(&e),
        }
    })
}

/// Reset the plant to a vehicle state (actuator recentered).
#[no_mangle]
pub unsafe extern "C" fn apexsim_plant_reset(
    plant: *mut ApexsimPlant,
    state: *const f64,
) -> ApexsimStatus {
    guard(|| {
        if plant.is_null() || state.is_null() {
            set_error("null pointer argument");
            return ApexsimStatus::NullPointer;
        }
        let s = state_from(&*(state as *const [f64; 6]));
        if !s.is_finite() {
            set_error("non-finite state");
            return ApexsimStatus::InvalidArgument;
        }
        (*plant).state = PlantState::at(s);
        ApexsimStatus::Ok
    })
}

/// Advance the plant by one RK4 step and write the new state.
#[no_mangle]
pub unsafe extern "C" fn apexsim_plant_step(
    plant: *mut ApexsimPlant,
    accel: f64,
    steer: f64,
    dt: f64,
    out_state: *mut f64,
) -> ApexsimStatus {
    guard(|| {
        if plant.is_null() || out_state.is_null() {
            set_error("null pointer argument");
            return ApexsimStatus::NullPointer;
        }
        if !(dt > 0.0) || !accel.is_finite() || !steer.is_finite() {
            set_error("invalid step arguments");
            return ApexsimStatus::InvalidArgument;
        }
        let p = &mut *plant;
        let u = ControlInput { accel, steer };
        p.state = plant_step(&p.state, &u, &p.params, dt);
        state_to(&p.state.vehicle, &mut *(out_state as *mut [f64; 6]));
        ApexsimStatus::Ok
    })
}

/// Load a track CSV (header `s,x,y,w_left,w_right`).
#[no_mangle]
pub unsafe extern "C" fn apexsim_track_load(
    csv_path: *const c_char,
    out: *mut *mut ApexsimTrack,
) -> ApexsimStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer");
            return ApexsimStatus::NullPointer;
        }
        let path = match path_from(csv_path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match Track::read_csv(path) {
            Ok(track) => {
                *out = Box::into_raw(Box::new(ApexsimTrack(track)));
                ApexsimStatus::Ok
            }
            Err(e) => status_from(&e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn apexsim_track_free(track: *mut ApexsimTrack) {
    if !track.is_null() {
        drop(Box::from_raw(track));
    }
}

/// Project a position onto the track. Writes [s, lateral_offset,
/// inside(0/1)].
#[no_mangle]
pub unsafe extern "C" fn apexsim_track_query(
    track: *const ApexsimTrack,
    x: f64,
    y: f64,
    out_query: *mut f64,
) -> ApexsimStatus {
    guard(|| {
        if track.is_null() || out_query.is_null() {
            set_error("null pointer argument");
            return ApexsimStatus::NullPointer;
        }
        let q = (*track).0.query(x, y);
        let out = &mut *(out_query as *mut [f64; 3]);
        *out = [q.s, q.lateral_offset, q.inside as u8 as f64];
        ApexsimStatus::Ok
    })
}

/// Cost profile selector for controller construction.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ApexsimCostPreset {
    Safe = 0,
    Aggressive = 1,
}

/// Create a sampling controller. Pass 0 for horizon/samples/lambda/
/// sigmas/dt to keep the defaults.
#[no_mangle]
pub unsafe extern "C" fn apexsim_controller_new(
    horizon: usize,
    samples: usize,
    lambda: f64,
    sigma_accel: f64,
    sigma_steer: f64,
    dt: f64,
    seed: u64,
    preset: ApexsimCostPreset,
    out: *mut *mut ApexsimController,
) -> ApexsimStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer");
            return ApexsimStatus::NullPointer;
        }
        let d = MppiConfig::default();
        let cfg = MppiConfig {
            horizon: if horizon == 0 { d.horizon } else { horizon },
            samples: if samples == 0 { d.samples } else { samples },
            lambda: if lambda == 0.0 { d.lambda } else { lambda },
            sigma_accel: if sigma_accel == 0.0 { d.sigma_accel } else { sigma_accel },
            sigma_steer: if sigma_steer == 0.0 { d.sigma_steer } else { sigma_steer },
            dt: if dt == 0.0 { d.dt } else { dt },
            seed,
        };
        let weights = match preset {
            ApexsimCostPreset::Safe => CostWeights::safe(),
            ApexsimCostPreset::Aggressive => CostWeights::aggressive(),
        };
        match MppiController::new(cfg, weights, ControlLimits::default()) {
            Ok(c) => {
                *out = Box::into_raw(Box::new(ApexsimController(c)));
                ApexsimStatus::Ok
            }
            Err(e) => status_from(&e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn apexsim_controller_free(controller: *mut ApexsimController) {
    if !controller.is_null() {
        drop(Box::from_raw(controller));
    }
}

/// Replan from the given state and write [accel, steer]. Returns
/// Numerical when every sampled rollout diverged (a braking fallback is
/// still written).
#[no_mangle]
pub unsafe extern "C" fn apexsim_controller_compute(
    controller: *mut ApexsimController,
    model: *const ApexsimModel,
    track: *const ApexsimTrack,
    state: *const f64,
    out_control: *mut f64,
) -> ApexsimStatus {
    guard(|| {
        if controller.is_null()
            || model.is_null()
            || track.is_null()
            || state.is_null()
            || out_control.is_null()
        {
            set_error("null pointer argument");
            return ApexsimStatus::NullPointer;
        }
        let s = state_from(&*(state as *const [f64; 6]));
        if !s.is_finite() {
            set_error("non-finite state");
            return ApexsimStatus::InvalidArgument;
        }
        let race_model = RaceModel::Semi((*model).0.clone());
        let decision = (*controller).0.compute_control(&race_model, &(*track).0, &s);
        let out = &mut *(out_control as *mut [f64; 2]);
        *out = [decision.control.accel, decision.control.steer];
        if decision.fallback {
            set_error("all rollouts diverged; braking fallback returned");
            return ApexsimStatus::Numerical;
        }
        ApexsimStatus::Ok
    })
}
