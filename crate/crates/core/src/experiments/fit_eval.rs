//! Bootstrap a model bundle from a dataset, and evaluate bundles on
//! datasets.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::PathBuf;

use super::{ensure_dir, file_sha256, write_json};
use crate::dataset::Dataset;
use crate::error::Result;
use crate::nn::TrainConfig;
use crate::parametric::{FitOptions, VehicleParams};
use crate::semiparam::{bootstrap, evaluate_mse, load_bundle, save_bundle};

fn default_hidden() -> (usize, usize) {
    (20, 20)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitSpec {
    pub kind: String,
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dataset: PathBuf,
    #[serde(default = "default_hidden")]
    pub hidden: (usize, usize),
    #[serde(default)]
    pub train: Option<TrainConfig>,
}

#[derive(Serialize)]
struct FitReportOut {
    dataset_sha256: String,
    bundle_sha256: String,
    fitted_cs_front: f64,
    fitted_cs_rear: f64,
    fitted_mu: f64,
    fitted_iz: f64,
    parametric_initial_loss: f64,
    parametric_final_loss: f64,
    parametric_diverged: bool,
    final_train_loss: f64,
    train_mse_bootstrap: f64,
}

pub fn run_fit(spec: &FitSpec) -> Result<PathBuf> {
    super::check_kind(&spec.kind, "fit")?;
    let ds = Dataset::read_csv(&spec.dataset)?;
    let mut cfg = spec.train.unwrap_or_default();
    cfg.seed = spec.seed;
    let (model, report) = bootstrap(
        &ds,
        &VehicleParams::default(),
        &FitOptions::default(),
        &cfg,
        spec.hidden,
    )?;

    ensure_dir(&spec.out_dir)?;
    let bundle_dir = spec.out_dir.join("bundle");
    save_bundle(&model, &bundle_dir, &ds.content_hash())?;

    let mut curve = String::from("epoch,train_loss\n");
    for (i, l) in report.epoch_losses.iter().enumerate() {
        writeln!(curve, "{i},{l:.9e}").unwrap();
    }
    std::fs::write(spec.out_dir.join("train_curve.csv"), curve)?;

    let mse = evaluate_mse(&model, &ds)?;
    write_json(
        &spec.out_dir.join("fit_report.json"),
        &FitReportOut {
            dataset_sha256: ds.content_hash(),
            bundle_sha256: file_sha256(&bundle_dir.join("network.json"))?,
            fitted_cs_front: model.vehicle.cs_front,
            fitted_cs_rear: model.vehicle.cs_rear,
            fitted_mu: model.vehicle.mu,
            fitted_iz: model.vehicle.iz,
            parametric_initial_loss: report.fit.initial_loss,
            parametric_final_loss: report.fit.final_loss,
            parametric_diverged: report.fit.diverged,
            final_train_loss: *report.epoch_losses.last().unwrap_or(&f64::NAN),
            train_mse_bootstrap: mse.aggregate,
        },
    )?;
    Ok(bundle_dir)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalSpec {
    pub kind: String,
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
    pub bundle: PathBuf,
    pub dataset: PathBuf,
}

#[derive(Serialize)]
struct EvalReportOut {
    bundle_sha256: String,
    dataset_sha256: String,
    mse_vx_dot: f64,
    mse_vy_dot: f64,
    mse_yaw_accel: f64,
    mse_aggregate: f64,
}

pub fn run_eval(spec: &EvalSpec) -> Result<f64> {
    super::check_kind(&spec.kind, "eval")?;
    let ds = Dataset::read_csv(&spec.dataset)?;
    let (model, _) = load_bundle(&spec.bundle)?;
    let mse = evaluate_mse(&model, &ds)?;
    ensure_dir(&spec.out_dir)?;
    write_json(
        &spec.out_dir.join("eval.json"),
        &EvalReportOut {
            bundle_sha256: file_sha256(&spec.bundle.join("network.json"))?,
            dataset_sha256: ds.content_hash(),
            mse_vx_dot: mse.vx_dot,
            mse_vy_dot: mse.vy_dot,
            mse_yaw_accel: mse.yaw_accel,
            mse_aggregate: mse.aggregate,
        },
    )?;
    let csv = format!(
        "vx_dot,vy_dot,yaw_accel,aggregate\n{:.9e},{:.9e},{:.9e},{:.9e}\n",
        mse.vx_dot, mse.vy_dot, mse.yaw_accel, mse.aggregate
    );
    std::fs::write(spec.out_dir.join("eval.csv"), csv)?;
    Ok(mse.aggregate)
}
