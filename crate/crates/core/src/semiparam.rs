//! Sequential semi-parametric model: the bicycle model predicts a state
//! derivative, the network sees that prediction (plus velocities and
//! controls) and corrects the three velocity-derivative channels. Pose
//! rows always come straight from the parametric part.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::{
    self, NetDims, NetParams, NetworkFile, Normalizer, TrainConfig, MAX_HIDDEN,
};
use crate::parametric::{
    fit_parameters, parametric_derivative, FitOptions, FitReport, VehicleParams,
};
use crate::state::{ControlInput, StateDerivative, VehicleState};

pub const NET_INPUT_DIM: usize = 8;
pub const NET_OUTPUT_DIM: usize = 3;

/// Feature layout of the network input vector.
pub const NET_INPUT_LAYOUT: [&str; NET_INPUT_DIM] = [
    "vx",
    "vy",
    "yaw_rate",
    "parametric_vx_dot",
    "parametric_vy_dot",
    "parametric_yaw_accel",
    "accel_cmd",
    "steer_cmd",
];

/// Anything that predicts the three velocity-derivative channels from a
/// state and control. Lets the evaluation and comparison code treat the
/// parametric, non-parametric and semi-parametric models uniformly.
pub trait VelocityModel {
    fn predict_velocity(&self, s: &VehicleState, u: &ControlInput) -> [f64; 3];
}

/// The parametric part alone, viewed as a velocity model.
pub struct ParametricOnly(pub VehicleParams);

impl VelocityModel for ParametricOnly {
    fn predict_velocity(&self, s: &VehicleState, u: &ControlInput) -> [f64; 3] {
        parametric_derivative(s, u, &self.0).velocity_rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemiParamModel {
    pub vehicle: VehicleParams,
    pub net: NetParams,
    pub input_norm: Normalizer,
    pub target_norm: Normalizer,
}

impl SemiParamModel {
    /// Raw (un-normalized) network input for one operating point.
    pub fn net_input(
        s: &VehicleState,
        u: &ControlInput,
        parametric: &StateDerivative,
    ) -> [f64; NET_INPUT_DIM] {
        [
            s.vx,
            s.vy,
            s.yaw_rate,
            parametric.vx_dot,
            parametric.vy_dot,
            parametric.yaw_accel,
            u.accel,
            u.steer,
        ]
    }

    /// Normalized network input for one operating point, plus the
    /// parametric prediction it was built from.
    pub fn normalized_input(
        &self,
        s: &VehicleState,
        u: &ControlInput,
    ) -> (StateDerivative, [f64; NET_INPUT_DIM]) {
        let par = parametric_derivative(s, u, &self.vehicle);
        let raw = Self::net_input(s, u, &par);
        let mut z = [0.0; NET_INPUT_DIM];
        self.input_norm.normalize_into(&raw, &mut z);
        (par, z)
    }

    /// Denormalized network residual for the three velocity channels.
    pub fn residual(&self, s: &VehicleState, u: &ControlInput) -> [f64; 3] {
        let (_, z) = self.normalized_input(s, u);
        let mut a1 = [0.0; MAX_HIDDEN];
        let mut a2 = [0.0; MAX_HIDDEN];
        let mut out = [0.0; NET_OUTPUT_DIM];
        let d = self.net.dims();
        self.net
            .forward_into(&z, &mut a1[..d.hidden1], &mut a2[..d.hidden2], &mut out);
        let mut denorm = [0.0; 3];
        self.target_norm.denormalize_into(&out, &mut denorm);
        denorm
    }

    /// Full semi-parametric state derivative.
    pub fn predict_derivative(&self, s: &VehicleState, u: &ControlInput) -> StateDerivative {
        let (par, z) = self.normalized_input(s, u);
        let mut a1 = [0.0; MAX_HIDDEN];
        let mut a2 = [0.0; MAX_HIDDEN];
        let mut out = [0.0; NET_OUTPUT_DIM];
        let d = self.net.dims();
        self.net
            .forward_into(&z, &mut a1[..d.hidden1], &mut a2[..d.hidden2], &mut out);
        let mut res = [0.0; 3];
        self.target_norm.denormalize_into(&out, &mut res);
        StateDerivative {
            vx_dot: par.vx_dot + res[0],
            vy_dot: par.vy_dot + res[1],
            yaw_accel: par.yaw_accel + res[2],
            ..par
        }
    }
}

impl VelocityModel for SemiParamModel {
    fn predict_velocity(&self, s: &VehicleState, u: &ControlInput) -> [f64; 3] {
        self.predict_derivative(s, u).velocity_rows()
    }
}

/// Per-channel and aggregate mean squared error over the learned
/// (velocity-derivative) channels, in physical units.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MseReport {
    pub vx_dot: f64,
    pub vy_dot: f64,
    pub yaw_accel: f64,
    pub aggregate: f64,
}

pub fn evaluate_mse<M: VelocityModel>(model: &M, ds: &Dataset) -> Result<MseReport> {
    if ds.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate on an empty dataset".into()));
    }
    let mut acc = [0.0; 3];
    for s in ds.samples() {
        let pred = model.predict_velocity(&s.state, &s.control);
        let tgt = s.target.velocity_rows();
        for c in 0..3 {
            let e = pred[c] - tgt[c];
            acc[c] += e * e;
        }
    }
    let n = ds.len() as f64;
    let per: Vec<f64> = acc.iter().map(|a| a / n).collect();
    Ok(MseReport {
        vx_dot: per[0],
        vy_dot: per[1],
        yaw_accel: per[2],
        aggregate: (per[0] + per[1] + per[2]) / 3.0,
    })
}

#[derive(Clone, Debug)]
pub struct BootstrapReport {
    pub fit: FitReport,
    pub epoch_losses: Vec<f64>,
}

/// Build network inputs and residual targets for a dataset under fixed
/// vehicle parameters (raw, un-normalized).
pub fn residual_data(
    ds: &Dataset,
    vehicle: &VehicleParams,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut inputs = Vec::with_capacity(ds.len());
    let mut residuals = Vec::with_capacity(ds.len());
    for s in ds.samples() {
        let par = parametric_derivative(&s.state, &s.control, vehicle);
        inputs.push(SemiParamModel::net_input(&s.state, &s.control, &par).to_vec());
        let pv = par.velocity_rows();
        let tv = s.target.velocity_rows();
        residuals.push(vec![tv[0] - pv[0], tv[1] - pv[1], tv[2] - pv[2]]);
    }
    (inputs, residuals)
}

/// Bootstrap procedure: fit the parametric part, form residual targets,
/// freeze normalizers, then train the network on the normalized
/// residuals.
pub fn bootstrap(
    ds: &Dataset,
    init: &VehicleParams,
    fit_opts: &FitOptions,
    train_cfg: &TrainConfig,
    hidden: (usize, usize),
) -> Result<(SemiParamModel, BootstrapReport)> {
    if ds.is_empty() {
        return Err(Error::InvalidInput("cannot bootstrap on an empty dataset".into()));
    }
    let fit = fit_parameters(ds, init, fit_opts)?;
    let vehicle = fit.params;

    let (inputs, residuals) = residual_data(ds, &vehicle);
    let input_norm = Normalizer::fit(&inputs)?;
    // Scale-only target statistics keep a zeroed network equal to the
    // parametric model exactly.
    let target_norm = Normalizer::fit_scale_only(&residuals)?;

    let norm_inputs: Vec<Vec<f64>> = inputs.iter().map(|r| input_norm.normalize(r)).collect();
    let norm_targets: Vec<Vec<f64>> = residuals.iter().map(|r| target_norm.normalize(r)).collect();

    let dims = NetDims::new(NET_INPUT_DIM, hidden.0, hidden.1, NET_OUTPUT_DIM);
    let net0 = NetParams::glorot(dims, train_cfg.seed);
    let trained = nn::train(net0, &norm_inputs, &norm_targets, train_cfg)?;

    Ok((
        SemiParamModel {
            vehicle,
            net: trained.net,
            input_norm,
            target_norm,
        },
        BootstrapReport {
            fit,
            epoch_losses: trained.epoch_losses,
        },
    ))
}

/// Bundle metadata stored next to the vehicle parameters and network.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BundleMetadata {
    pub format_version: u32,
    pub dataset_sha256: String,
    pub created_unix: u64,
    pub net_input_layout: Vec<String>,
}

pub const BUNDLE_FORMAT_VERSION: u32 = 1;
const VEHICLE_FILE: &str = "vehicle.toml";
const NETWORK_FILE: &str = "network.json";
const METADATA_FILE: &str = "metadata.json";

/// Write a model bundle directory: vehicle.toml + network.json +
/// metadata.json.
pub fn save_bundle(model: &SemiParamModel, dir: &Path, dataset_sha256: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    model.vehicle.write_toml(&dir.join(VEHICLE_FILE))?;
    NetworkFile::new(&model.net, &model.input_norm, &model.target_norm)
        .save(&dir.join(NETWORK_FILE))?;
    let meta = BundleMetadata {
        format_version: BUNDLE_FORMAT_VERSION,
        dataset_sha256: dataset_sha256.to_string(),
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        net_input_layout: NET_INPUT_LAYOUT.iter().map(|s| s.to_string()).collect(),
    };
    std::fs::write(
        dir.join(METADATA_FILE),
        serde_json::to_string_pretty(&meta)?,
    )?;
    Ok(())
}

pub fn load_bundle(dir: &Path) -> Result<(SemiParamModel, BundleMetadata)> {
    let vehicle = VehicleParams::read_toml(&dir.join(VEHICLE_FILE))?;
    let (net, input_norm, target_norm) =
        NetworkFile::load(&dir.join(NETWORK_FILE))?.into_parts()?;
    if net.dims().input != NET_INPUT_DIM || net.dims().output != NET_OUTPUT_DIM {
        return Err(Error::Parse(format!(
            "bundle network has dims {:?}, expected {NET_INPUT_DIM}-in {NET_OUTPUT_DIM}-out",
            net.dims()
        )));
    }
    let meta: BundleMetadata =
        serde_json::from_str(&std::fs::read_to_string(dir.join(METADATA_FILE))?)?;
    Ok((
        SemiParamModel {
            vehicle,
            net,
            input_norm,
            target_norm,
        },
        meta,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Sample;
    use crate::plant::{plant_derivative, PlantParams, PlantState};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_states(n: usize, seed: u64) -> Vec<(VehicleState, ControlInput)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                (
                    VehicleState {
                        x: rng.random_range(-100.0..100.0),
                        y: rng.random_range(-100.0..100.0),
                        psi: rng.random_range(-3.0..3.0),
                        vx: rng.random_range(3.0..40.0),
                        vy: rng.random_range(-2.0..2.0),
                        yaw_rate: rng.random_range(-1.0..1.0),
                    },
                    ControlInput {
                        accel: rng.random_range(-8.0..4.5),
                        steer: rng.random_range(-0.4..0.4),
                    },
                )
            })
            .collect()
    }

    fn toy_model(seed: u64) -> SemiParamModel {
        let dims = NetDims::new(NET_INPUT_DIM, 20, 20, NET_OUTPUT_DIM);
        let rows: Vec<Vec<f64>> = random_states(200, seed)
            .iter()
            .map(|(s, u)| {
                let par = parametric_derivative(s, u, &VehicleParams::default());
                SemiParamModel::net_input(s, u, &par).to_vec()
            })
            .collect();
        let input_norm = Normalizer::fit(&rows).unwrap();
        let target_rows: Vec<Vec<f64>> = (0..200)
            .map(|i| vec![0.1 * (i as f64).sin(), 0.2, -0.05])
            .collect();
        let target_norm = Normalizer::fit_scale_only(&target_rows).unwrap();
        SemiParamModel {
            vehicle: VehicleParams::default(),
            net: NetParams::glorot(dims, seed),
            input_norm,
            target_norm,
        }
    }

    #[test]
    fn zero_network_is_exactly_parametric() {
        let mut model = toy_model(1);
        model.net = NetParams::zeros(model.net.dims());
        for (s, u) in random_states(100, 2) {
            let semi = model.predict_derivative(&s, &u);
            let par = parametric_derivative(&s, &u, &model.vehicle);
            assert_eq!(semi, par);
        }
    }

    #[test]
    fn constant_output_bias_offsets_vx_dot_only() {
        let mut model = toy_model(3);
        model.net = NetParams::zeros(model.net.dims());
        let seg = model.net.segments();
        model.net.theta_mut()[seg.b3.start] = 1.0;
        let offset = model.target_norm.std[0];
        for (s, u) in random_states(50, 4) {
            let semi = model.predict_derivative(&s, &u);
            let par = parametric_derivative(&s, &u, &model.vehicle);
            assert_relative_eq!(semi.vx_dot - par.vx_dot, offset, epsilon = 1e-12);
            assert_eq!(semi.vy_dot, par.vy_dot);
            assert_eq!(semi.yaw_accel, par.yaw_accel);
            assert_eq!(semi.x_dot, par.x_dot);
        }
    }

    #[test]
    fn pose_rows_ignore_network_parameters() {
        let base = toy_model(5);
        let mut perturbed = base.clone();
        for v in perturbed.net.theta_mut() {
            *v += 0.5;
        }
        for (s, u) in random_states(50, 6) {
            let a = base.predict_derivative(&s, &u);
            let b = perturbed.predict_derivative(&s, &u);
            assert_eq!(a.x_dot, b.x_dot);
            assert_eq!(a.y_dot, b.y_dot);
            assert_eq!(a.psi_dot, b.psi_dot);
            assert_ne!(a.vy_dot, b.vy_dot);
        }
    }

    #[test]
    fn predict_is_deterministic() {
        let model = toy_model(7);
        let (s, u) = random_states(1, 8)[0];
        assert_eq!(
            model.predict_derivative(&s, &u),
            model.predict_derivative(&s, &u)
        );
    }

    fn parametric_dataset(p: &VehicleParams, n: usize, seed: u64) -> Dataset {
        let samples = random_states(n, seed)
            .into_iter()
            .enumerate()
            .map(|(i, (state, control))| Sample {
                state,
                control,
                target: parametric_derivative(&state, &control, p),
                timestamp: i as f64 * 0.02,
            })
            .collect();
        Dataset::from_samples(samples)
    }

    fn plant_dataset(p: &PlantParams, n: usize, seed: u64) -> Dataset {
        let samples = random_states(n, seed)
            .into_iter()
            .enumerate()
            .map(|(i, (state, control))| {
                let ps = PlantState {
                    vehicle: state,
                    actual_steer: control.steer,
                };
                Sample {
                    state,
                    control,
                    target: plant_derivative(&ps, &control, p),
                    timestamp: i as f64 * 0.02,
                }
            })
            .collect();
        Dataset::from_samples(samples)
    }

    #[test]
    fn bootstrap_on_parametric_data_learns_near_zero_residual() {
        let truth = VehicleParams::default();
        let ds = parametric_dataset(&truth, 2000, 11);
        let cfg = TrainConfig {
            epochs: 150,
            seed: 3,
            ..Default::default()
        };
        let (model, report) =
            bootstrap(&ds, &truth, &FitOptions::default(), &cfg, (20, 20)).unwrap();
        assert!(!report.fit.diverged);
        let mut max_norm: f64 = 0.0;
        for (s, u) in random_states(200, 12) {
            let r = model.residual(&s, &u);
            let norm = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
            max_norm = max_norm.max(norm);
        }
        assert!(max_norm < 1e-2, "residual norm {max_norm}");
    }

    #[test]
    fn bootstrap_on_plant_data_beats_parametric_alone() {
        let plant = PlantParams::default();
        let train_ds = plant_dataset(&plant, 3000, 21);
        let eval_ds = plant_dataset(&plant, 1000, 22);
        let cfg = TrainConfig {
            epochs: 200,
            seed: 5,
            ..Default::default()
        };
        let (model, _) = bootstrap(
            &train_ds,
            &VehicleParams::default(),
            &FitOptions::default(),
            &cfg,
            (20, 20),
        )
        .unwrap();
        let semi = evaluate_mse(&model, &eval_ds).unwrap();
        let par = evaluate_mse(&ParametricOnly(model.vehicle), &eval_ds).unwrap();
        assert!(
            semi.aggregate < par.aggregate,
            "semi {} vs parametric {}",
            semi.aggregate,
            par.aggregate
        );
    }

    #[test]
    fn mse_of_exact_and_offset_predictions() {
        let truth = VehicleParams::default();
        let ds = parametric_dataset(&truth, 300, 31);
        let exact = evaluate_mse(&ParametricOnly(truth), &ds).unwrap();
        assert_relative_eq!(exact.aggregate, 0.0, epsilon = 1e-20);

        struct Offset(VehicleParams, f64);
        impl VelocityModel for Offset {
            fn predict_velocity(&self, s: &VehicleState, u: &ControlInput) -> [f64; 3] {
                let mut v = parametric_derivative(s, u, &self.0).velocity_rows();
                v[0] += self.1;
                v
            }
        }
        let off = evaluate_mse(&Offset(truth, 0.5), &ds).unwrap();
        assert_relative_eq!(off.vx_dot, 0.25, epsilon = 1e-12);
        assert_relative_eq!(off.vy_dot, 0.0, epsilon = 1e-15);
        assert_relative_eq!(off.aggregate, 0.25 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn bundle_round_trip() {
        let model = toy_model(41);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bundle");
        save_bundle(&model, &path, "abc123").unwrap();
        let (back, meta) = load_bundle(&path).unwrap();
        assert_eq!(back, model);
        assert_eq!(meta.dataset_sha256, "abc123");
        assert_eq!(meta.net_input_layout.len(), NET_INPUT_DIM);
    }
}
