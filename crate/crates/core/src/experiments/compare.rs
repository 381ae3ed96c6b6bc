//! Model-type comparison: parametric-only vs non-parametric-only vs
//! semi-parametric on a velocity-sorted split, with per-epoch learning
//! curves.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::PathBuf;

use super::gen::generate_dataset;
use super::{ensure_dir, write_json};
use crate::dataset::{velocity_sorted_split, Dataset};
use crate::driver::DriverConfig;
use crate::error::Result;
use crate::nn::{self, NetDims, NetParams, Normalizer, TrainConfig};
use crate::parametric::{fit_parameters, FitOptions, VehicleParams};
use crate::plant::PlantParams;
use crate::semiparam::{
    evaluate_mse, residual_data, ParametricOnly, SemiParamModel, VelocityModel, NET_INPUT_DIM,
    NET_OUTPUT_DIM,
};
use crate::state::{ControlInput, VehicleState};

pub const NONPARAM_INPUT_DIM: usize = 5;

/// Purely data-driven velocity model: a network mapping
/// [vx, vy, yaw_rate, accel, steer] directly to the three velocity
/// derivatives.
#[derive(Clone, Debug)]
pub struct NonParamModel {
    pub net: NetParams,
    pub input_norm: Normalizer,
    pub target_norm: Normalizer,
}

impl NonParamModel {
    pub fn input(s: &VehicleState, u: &ControlInput) -> [f64; NONPARAM_INPUT_DIM] {
        [s.vx, s.vy, s.yaw_rate, u.accel, u.steer]
    }
}

impl VelocityModel for NonParamModel {
    fn predict_velocity(&self, s: &VehicleState, u: &ControlInput) -> [f64; 3] {
        let raw = Self::input(s, u);
        let z = self.input_norm.normalize(&raw);
        let out = self.net.forward(&z).expect("dims fixed at construction");
        let d = self.target_norm.denormalize(&out);
        [d[0], d[1], d[2]]
    }
}

fn default_fractions() -> (f64, f64, f64) {
    (0.6, 0.35, 0.05)
}
fn default_semi_hidden() -> (usize, usize) {
    (20, 20)
}
fn default_nonparam_hidden() -> (usize, usize) {
    (32, 32)
}
fn default_track() -> String {
    "oval".into()
}
fn default_duration() -> f64 {
    600.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompareSpec {
    pub kind: String,
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Load this dataset instead of generating one.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default = "default_track")]
    pub gen_track: String,
    #[serde(default = "default_duration")]
    pub gen_duration_s: f64,
    #[serde(default = "default_fractions")]
    pub fractions: (f64, f64, f64),
    #[serde(default = "default_semi_hidden")]
    pub semi_hidden: (usize, usize),
    #[serde(default = "default_nonparam_hidden")]
    pub nonparam_hidden: (usize, usize),
    #[serde(default)]
    pub train: Option<TrainConfig>,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CompareReport {
    pub dataset_sha256: String,
    pub split_sizes: (usize, usize, usize),
    pub parametric_train_mse: f64,
    pub parametric_val_mse: f64,
    pub parametric_test_mse: f64,
    pub semi_train_mse: f64,
    pub semi_val_mse: f64,
    pub semi_test_mse: f64,
    pub nonparam_train_mse: f64,
    pub nonparam_val_mse: f64,
    pub nonparam_test_mse: f64,
    /// Generalization ordering observed on the validation split.
    pub semi_beats_parametric_val: bool,
    pub semi_beats_nonparam_val: bool,
    pub parametric_beats_nonparam_val: bool,
    pub semi_train_below_parametric_train: bool,
}

/// Physical-unit velocity-row MSE of a network model over prepared
/// (normalized input, raw target) pairs.
fn physical_mse(
    net: &NetParams,
    inputs: &[Vec<f64>],
    raw_targets: &[[f64; 3]],
    target_norm: &Normalizer,
    offsets: Option<&[[f64; 3]]>,
) -> f64 {
    let mut acc = 0.0;
    let mut a1 = vec![0.0; net.dims().hidden1];
    let mut a2 = vec![0.0; net.dims().hidden2];
    let mut out = vec![0.0; net.dims().output];
    let mut denorm = [0.0; 3];
    for (i, x) in inputs.iter().enumerate() {
        net.forward_into(x, &mut a1, &mut a2, &mut out);
        target_norm.denormalize_into(&out, &mut denorm);
        for c in 0..3 {
            let base = offsets.map_or(0.0, |o| o[i][c]);
            let e = base + denorm[c] - raw_targets[i][c];
            acc += e * e;
        }
    }
    acc / (inputs.len() * 3) as f64
}

struct PreparedSet {
    norm_inputs: Vec<Vec<f64>>,
    norm_targets: Vec<Vec<f64>>,
    raw_targets: Vec<[f64; 3]>,
    /// Parametric predictions when training residuals (None for the
    /// direct model).
    offsets: Option<Vec<[f64; 3]>>,
}

fn prepare_residual(ds: &Dataset, vehicle: &VehicleParams, input_norm: &Normalizer, target_norm: &Normalizer) -> PreparedSet {
    let (inputs, residuals) = residual_data(ds, vehicle);
    let offsets: Vec<[f64; 3]> = ds
        .samples()
        .iter()
        .map(|s| {
            crate::parametric::parametric_derivative(&s.state, &s.control, vehicle)
                .velocity_rows()
        })
        .collect();
    PreparedSet {
        norm_inputs: inputs.iter().map(|r| input_norm.normalize(r)).collect(),
        norm_targets: residuals.iter().map(|r| target_norm.normalize(r)).collect(),
        raw_targets: ds.samples().iter().map(|s| s.target.velocity_rows()).collect(),
        offsets: Some(offsets),
    }
}

fn prepare_direct(ds: &Dataset, input_norm: &Normalizer, target_norm: &Normalizer) -> PreparedSet {
    let inputs: Vec<Vec<f64>> = ds
        .samples()
        .iter()
        .map(|s| NonParamModel::input(&s.state, &s.control).to_vec())
        .collect();
    let raw: Vec<[f64; 3]> = ds.samples().iter().map(|s| s.target.velocity_rows()).collect();
    PreparedSet {
        norm_inputs: inputs.iter().map(|r| input_norm.normalize(r)).collect(),
        norm_targets: raw.iter().map(|r| target_norm.normalize(r)).collect(),
        raw_targets: raw,
        offsets: None,
    }
}

fn train_with_curves(
    dims: NetDims,
    train_set: &PreparedSet,
    val_set: &PreparedSet,
    target_norm: &Normalizer,
    cfg: &TrainConfig,
) -> Result<(NetParams, Vec<CurvePoint>)> {
    let mut curves = Vec::with_capacity(cfg.epochs);
    let result = nn::train_with_callback(
        NetParams::glorot(dims, cfg.seed),
        &train_set.norm_inputs,
        &train_set.norm_targets,
        cfg,
        |epoch, net, _| {
            curves.push(CurvePoint {
                epoch,
                train_mse: physical_mse(
                    net,
                    &train_set.norm_inputs,
                    &train_set.raw_targets,
                    target_norm,
                    train_set.offsets.as_deref(),
                ),
                val_mse: physical_mse(
                    net,
                    &val_set.norm_inputs,
                    &val_set.raw_targets,
                    target_norm,
                    val_set.offsets.as_deref(),
                ),
            });
        },
    )?;
    Ok((result.net, curves))
}

pub struct CompareOutput {
    pub report: CompareReport,
    pub semi: SemiParamModel,
    pub nonparam: NonParamModel,
}

pub fn run_model_comparison(spec: &CompareSpec) -> Result<CompareOutput> {
    super::check_kind(&spec.kind, "compare-models")?;
    let ds = match &spec.dataset {
        Some(p) => Dataset::read_csv(p)?,
        None => {
            generate_dataset(
                &spec.gen_track,
                spec.gen_duration_s,
                &PlantParams::default(),
                &DriverConfig::default(),
                21,
                3,
                spec.seed,
            )?
            .1
        }
    };
    let (train, val, test) = velocity_sorted_split(&ds, spec.fractions)?;
    let mut cfg = spec.train.unwrap_or_default();
    cfg.seed = spec.seed;

    // parametric part, shared by the parametric-only and semi models
    let fit = fit_parameters(&train, &VehicleParams::default(), &FitOptions::default())?;
    let vehicle = fit.params;
    let parametric = ParametricOnly(vehicle);
    let par_train = evaluate_mse(&parametric, &train)?.aggregate;
    let par_val = evaluate_mse(&parametric, &val)?.aggregate;
    let par_test = evaluate_mse(&parametric, &test)?.aggregate;

    // semi-parametric: residual network on the parametric prediction
    let (semi_inputs, semi_res) = residual_data(&train, &vehicle);
    let semi_in_norm = Normalizer::fit(&semi_inputs)?;
    let semi_tg_norm = Normalizer::fit_scale_only(&semi_res)?;
    let semi_train_set = prepare_residual(&train, &vehicle, &semi_in_norm, &semi_tg_norm);
    let semi_val_set = prepare_residual(&val, &vehicle, &semi_in_norm, &semi_tg_norm);
    let semi_dims = NetDims::new(NET_INPUT_DIM, spec.semi_hidden.0, spec.semi_hidden.1, NET_OUTPUT_DIM);
    let (semi_net, semi_curves) =
        train_with_curves(semi_dims, &semi_train_set, &semi_val_set, &semi_tg_norm, &cfg)?;
    let semi = SemiParamModel {
        vehicle,
        net: semi_net,
        input_norm: semi_in_norm,
        target_norm: semi_tg_norm,
    };

    // purely non-parametric: direct map, z-scored inputs and targets
    let np_inputs: Vec<Vec<f64>> = train
        .samples()
        .iter()
        .map(|s| NonParamModel::input(&s.state, &s.control).to_vec())
        .collect();
    let np_targets: Vec<Vec<f64>> = train
        .samples()
        .iter()
        .map(|s| s.target.velocity_rows().to_vec())
        .collect();
    let np_in_norm = Normalizer::fit(&np_inputs)?;
    let np_tg_norm = Normalizer::fit(&np_targets)?;
    let np_train_set = prepare_direct(&train, &np_in_norm, &np_tg_norm);
    let np_val_set = prepare_direct(&val, &np_in_norm, &np_tg_norm);
    let np_dims = NetDims::new(
        NONPARAM_INPUT_DIM,
        spec.nonparam_hidden.0,
        spec.nonparam_hidden.1,
        NET_OUTPUT_DIM,
    );
    let (np_net, np_curves) =
        train_with_curves(np_dims, &np_train_set, &np_val_set, &np_tg_norm, &cfg)?;
    let nonparam = NonParamModel {
        net: np_net,
        input_norm: np_in_norm,
        target_norm: np_tg_norm,
    };

    let semi_train = evaluate_mse(&semi, &train)?.aggregate;
    let semi_val = evaluate_mse(&semi, &val)?.aggregate;
    let semi_test = evaluate_mse(&semi, &test)?.aggregate;
    let np_train = evaluate_mse(&nonparam, &train)?.aggregate;
    let np_val = evaluate_mse(&nonparam, &val)?.aggregate;
    let np_test = evaluate_mse(&nonparam, &test)?.aggregate;

    let report = CompareReport {
        dataset_sha256: ds.content_hash(),
        split_sizes: (train.len(), val.len(), test.len()),
        parametric_train_mse: par_train,
        parametric_val_mse: par_val,
        parametric_test_mse: par_test,
        semi_train_mse: semi_train,
        semi_val_mse: semi_val,
        semi_test_mse: semi_test,
        nonparam_train_mse: np_train,
        nonparam_val_mse: np_val,
        nonparam_test_mse: np_test,
        semi_beats_parametric_val: semi_val < par_val,
        semi_beats_nonparam_val: semi_val < np_val,
        parametric_beats_nonparam_val: par_val < np_val,
        semi_train_below_parametric_train: semi_train < par_train,
    };

    ensure_dir(&spec.out_dir)?;
    let mut curves = String::from(
        "epoch,parametric_train_mse,parametric_val_mse,semi_train_mse,semi_val_mse,nonparam_train_mse,nonparam_val_mse\n",
    );
    for (s, n) in semi_curves.iter().zip(&np_curves) {
        writeln!(
            curves,
            "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
            s.epoch, par_train, par_val, s.train_mse, s.val_mse, n.train_mse, n.val_mse
        )
        .unwrap();
    }
    std::fs::write(spec.out_dir.join("curves.csv"), curves)?;

    let mut table = String::from("model,train_mse,val_mse,test_mse\n");
    for (name, a, b, c) in [
        ("parametric", par_train, par_val, par_test),
        ("semi_parametric", semi_train, semi_val, semi_test),
        ("non_parametric", np_train, np_val, np_test),
    ] {
        writeln!(table, "{name},{a:.9e},{b:.9e},{c:.9e}").unwrap();
    }
    std::fs::write(spec.out_dir.join("final.csv"), table)?;
    write_json(&spec.out_dir.join("report.json"), &report)?;

    Ok(CompareOutput {
        report,
        semi,
        nonparam,
    })
}
