//! Exercise the C ABI end to end from Rust: bundle load, prediction
//! equality with the native API, plant stepping, track queries,
//! controller replanning and the error paths.

use std::ffi::CString;
use std::os::raw::c_char;
use std::path::Path;
use std::ptr;

use apexsim::dataset::{Dataset, Sample};
use apexsim::nn::TrainConfig;
use apexsim::parametric::{parametric_derivative, FitOptions, VehicleParams};
use apexsim::semiparam::{bootstrap, save_bundle, SemiParamModel};
use apexsim::state::{ControlInput, VehicleState};
use apexsim::track::Track;

use apexsim_capi::*;

fn c_path(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let mut buf = vec![0u8; 256];
    let n = apexsim_last_error_message(buf.as_mut_ptr() as *mut c_char, buf.len());
    buf.truncate(n.min(255));
    String::from_utf8_lossy(&buf).into_owned()
}

fn tiny_bundle(dir: &Path) -> SemiParamModel {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    let truth = VehicleParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let samples: Vec<Sample> = (0..400)
        .map(|i| {
            let state = VehicleState {
                vx: rng.random_range(3.0..30.0),
                vy: rng.random_range(-1.5..1.5),
                yaw_rate: rng.random_range(-0.8..0.8),
                ..Default::default()
            };
            let control = ControlInput {
                accel: rng.random_range(-6.0..4.0),
                steer: rng.random_range(-0.3..0.3),
            };
            Sample {
                state,
                control,
                target: parametric_derivative(&state, &control, &truth),
                timestamp: i as f64 * 0.02,
            }
        })
        .collect();
    let ds = Dataset::from_samples(samples);
    let cfg = TrainConfig {
        epochs: 30,
        seed: 1,
        ..Default::default()
    };
    let (model, _) = bootstrap(&ds, &truth, &FitOptions::default(), &cfg, (8, 8)).unwrap();
    save_bundle(&model, dir, &ds.content_hash()).unwrap();
    model
}

#[test]
fn model_load_predict_matches_native() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = dir.path().join("bundle");
    let native = tiny_bundle(&bundle);

    let mut handle: *mut ApexsimModel = ptr::null_mut();
    let path = c_path(&bundle);
    let status = unsafe { apexsim_model_load(path.as_ptr(), &mut handle) };
    assert_eq!(status, ApexsimStatus::Ok, "{}", last_error());
    assert!(!handle.is_null());

    let state = [1.0, -2.0, 0.3, 14.0, 0.4, 0.1];
    let control = [1.5, 0.05];
    let mut out = [0.0f64; 6];
    let status = unsafe {
        apexsim_model_predict(handle, state.as_ptr(), control.as_ptr(), out.as_mut_ptr())
    };
    assert_eq!(status, ApexsimStatus::Ok);

    let expect = native
        .predict_derivative(
            &VehicleState {
                x: 1.0,
                y: -2.0,
                psi: 0.3,
                vx: 14.0,
                vy: 0.4,
                yaw_rate: 0.1,
            },
            &ControlInput {
                accel: 1.5,
                steer: 0.05,
            },
        )
        .to_array();
    assert_eq!(out, expect);

    // non-finite input rejected
    let bad = [f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0];
    let status = unsafe {
        apexsim_model_predict(handle, bad.as_ptr(), control.as_ptr(), out.as_mut_ptr())
    };
    assert_eq!(status, ApexsimStatus::InvalidArgument);

    unsafe { apexsim_model_free(handle) };
}

#[test]
fn model_load_errors_are_reported() {
    let mut handle: *mut ApexsimModel = ptr::null_mut();
    let path = CString::new("/nonexistent/bundle").unwrap();
    let status = unsafe { apexsim_model_load(path.as_ptr(), &mut handle) };
    assert_eq!(status, ApexsimStatus::Io);
    assert!(!last_error().is_empty());
    assert!(handle.is_null());

    let status = unsafe { apexsim_model_load(ptr::null(), &mut handle) };
    assert_eq!(status, ApexsimStatus::NullPointer);
}

#[test]
fn plant_step_matches_native_and_rejects_bad_args() {
    let mut plant: *mut ApexsimPlant = ptr::null_mut();
    assert_eq!(unsafe { apexsim_plant_new(&mut plant) }, ApexsimStatus::Ok);

    let start = [0.0, 0.0, 0.0, 10.0, 0.0, 0.0];
    assert_eq!(
        unsafe { apexsim_plant_reset(plant, start.as_ptr()) },
        ApexsimStatus::Ok
    );
    let mut out = [0.0f64; 6];
    for _ in 0..50 {
        let status = unsafe { apexsim_plant_step(plant, 2.0, 0.02, 0.02, out.as_mut_ptr()) };
        assert_eq!(status, ApexsimStatus::Ok);
    }

    // native reference
    use apexsim::plant::{plant_step, PlantParams, PlantState};
    let mut ps = PlantState::at(VehicleState {
        vx: 10.0,
        ..Default::default()
    });
    let u = ControlInput {
        accel: 2.0,
        steer: 0.02,
    };
    for _ in 0..50 {
        ps = plant_step(&ps, &u, &PlantParams::default(), 0.02);
    }
    assert_eq!(out, ps.vehicle.to_array());

    assert_eq!(
        unsafe { apexsim_plant_step(plant, 2.0, 0.0, -1.0, out.as_mut_ptr()) },
        ApexsimStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { apexsim_plant_modify(plant, 1430.0, 0.8) },
        ApexsimStatus::Ok
    );
    assert_eq!(
        unsafe { apexsim_plant_modify(plant, -5.0, 0.8) },
        ApexsimStatus::InvalidArgument
    );
    unsafe { apexsim_plant_free(plant) };
}

#[test]
fn track_and_controller_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let track_path = dir.path().join("ring.csv");
    Track::ring(40.0, 6.0, 0.75).write_csv(&track_path).unwrap();

    let mut track: *mut ApexsimTrack = ptr::null_mut();
    let cpath = c_path(&track_path);
    assert_eq!(
        unsafe { apexsim_track_load(cpath.as_ptr(), &mut track) },
        ApexsimStatus::Ok,
        "{}",
        last_error()
    );

    let mut q = [0.0f64; 3];
    assert_eq!(
        unsafe { apexsim_track_query(track, 40.0, 0.0, q.as_mut_ptr()) },
        ApexsimStatus::Ok
    );
    assert!(q[1].abs() < 0.1, "offset {}", q[1]);
    assert_eq!(q[2], 1.0);

    let bundle = dir.path().join("bundle");
    tiny_bundle(&bundle);
    let mut model: *mut ApexsimModel = ptr::null_mut();
    let bpath = c_path(&bundle);
    assert_eq!(
        unsafe { apexsim_model_load(bpath.as_ptr(), &mut model) },
        ApexsimStatus::Ok
    );

    let mut controller: *mut ApexsimController = ptr::null_mut();
    let status = unsafe {
        apexsim_controller_new(
            30,
            32,
            30.0,
            0.0,
            0.0,
            0.0,
            9,
            ApexsimCostPreset::Safe,
            &mut controller,
        )
    };
    assert_eq!(status, ApexsimStatus::Ok);

    // spawn on the ring heading tangentially
    let state = [40.0, 0.0, std::f64::consts::FRAC_PI_2, 5.0, 0.0, 0.0];
    let mut control = [0.0f64; 2];
    let status = unsafe {
        apexsim_controller_compute(controller, model, track, state.as_ptr(), control.as_mut_ptr())
    };
    assert_eq!(status, ApexsimStatus::Ok, "{}", last_error());
    assert!(control[0] >= -8.8 && control[0] <= 4.9);
    assert!(control[1].abs() <= 0.5);

    // determinism across fresh controllers with the same seed
    let mut controller2: *mut ApexsimController = ptr::null_mut();
    unsafe {
        apexsim_controller_new(
            30,
            32,
            30.0,
            0.0,
            0.0,
            0.0,
            9,
            ApexsimCostPreset::Safe,
            &mut controller2,
        )
    };
    let mut control2 = [0.0f64; 2];
    unsafe {
        apexsim_controller_compute(
            controller2,
            model,
            track,
            state.as_ptr(),
            control2.as_mut_ptr(),
        )
    };
    assert_eq!(control, control2);

    unsafe {
        apexsim_controller_free(controller);
        apexsim_controller_free(controller2);
        apexsim_model_free(model);
        apexsim_track_free(track);
    }
}
