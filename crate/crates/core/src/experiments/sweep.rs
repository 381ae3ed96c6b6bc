//! Hyper-parameter sweep: hidden sizes x learning rates on a 70/20/10
//! velocity-sorted split, then a weight-decay sweep at the reference
//! architecture. Lap-time evaluation per cell sits behind a flag.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::PathBuf;

use super::gen::generate_dataset;
use super::online::weights_from_preset;
use super::{ensure_dir, resolve_track, write_json};
use crate::dataset::{velocity_sorted_split, Dataset};
use crate::driver::DriverConfig;
use crate::error::Result;
use crate::mppi::{race_loop, MppiConfig, RaceConfig, RaceModel};
use crate::nn::TrainConfig;
use crate::parametric::{FitOptions, VehicleParams};
use crate::plant::PlantParams;
use crate::semiparam::{bootstrap, evaluate_mse};
use crate::state::ControlLimits;

fn default_track() -> String {
    "oval".into()
}
fn default_duration() -> f64 {
    600.0
}
fn default_fractions() -> (f64, f64, f64) {
    (0.7, 0.2, 0.1)
}
fn default_hidden_grid() -> Vec<(usize, usize)> {
    vec![(8, 8), (12, 12), (16, 16), (20, 20), (24, 24), (28, 28), (32, 32)]
}
fn default_lr_grid() -> Vec<f64> {
    vec![0.0025, 0.001, 0.00075]
}
fn default_wd_grid() -> Vec<f64> {
    vec![1e-1, 1e-2, 1e-3, 1e-4, 1e-5]
}
fn default_sweep_wd() -> f64 {
    1e-5
}
fn default_epochs() -> usize {
    1000
}
fn default_wd_hidden() -> (usize, usize) {
    (20, 20)
}
fn default_wd_lr() -> f64 {
    1e-3
}
fn default_race_track() -> String {
    "mixed".into()
}
fn default_race_laps() -> usize {
    5
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepSpec {
    pub kind: String,
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default = "default_track")]
    pub gen_track: String,
    #[serde(default = "default_duration")]
    pub gen_duration_s: f64,
    #[serde(default = "default_fractions")]
    pub fractions: (f64, f64, f64),
    #[serde(default = "default_hidden_grid")]
    pub hidden_grid: Vec<(usize, usize)>,
    #[serde(default = "default_lr_grid")]
    pub learning_rate_grid: Vec<f64>,
    /// Weight decay used during the size x rate phase.
    #[serde(default = "default_sweep_wd")]
    pub sweep_weight_decay: f64,
    #[serde(default = "default_wd_grid")]
    pub weight_decay_grid: Vec<f64>,
    #[serde(default = "default_wd_hidden")]
    pub wd_phase_hidden: (usize, usize),
    #[serde(default = "default_wd_lr")]
    pub wd_phase_learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Race each trained cell for lap times (slow).
    #[serde(default)]
    pub lap_eval: bool,
    #[serde(default = "default_race_track")]
    pub race_track: String,
    #[serde(default = "default_race_laps")]
    pub race_laps: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub phase: String,
    pub hidden1: usize,
    pub hidden2: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub validation_mse: f64,
    pub avg_lap_time: Option<f64>,
    pub lap_time_std: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepReport {
    pub dataset_sha256: String,
    pub rows: Vec<SweepRow>,
}

pub fn run_sweep(spec: &SweepSpec) -> Result<SweepReport> {
    super::check_kind(&spec.kind, "sweep")?;
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
    let (train, val, _test) = velocity_sorted_split(&ds, spec.fractions)?;

    let mut rows = Vec::new();
    let evaluate_cell = |hidden: (usize, usize),
                             lr: f64,
                             wd: f64,
                             phase: &str|
     -> Result<SweepRow> {
        let cfg = TrainConfig {
            learning_rate: lr,
            weight_decay: wd,
            epochs: spec.epochs,
            seed: spec.seed,
            ..Default::default()
        };
        let (model, _) = bootstrap(
            &train,
            &VehicleParams::default(),
            &FitOptions::default(),
            &cfg,
            hidden,
        )?;
        let val_mse = evaluate_mse(&model, &val)?.aggregate;

        let (avg_lap, lap_std) = if spec.lap_eval {
            let track = resolve_track(&spec.race_track)?;
            let cfg = RaceConfig {
                laps: spec.race_laps,
                mppi: MppiConfig {
                    seed: spec.seed,
                    samples: 128,
                    lambda: 30.0,
                    ..Default::default()
                },
                weights: weights_from_preset("safe", None)?,
                limits: ControlLimits::default(),
                snapshot_times: Vec::new(),
                max_sim_time: 600.0,
            };
            let log = race_loop(
                &PlantParams::default(),
                RaceModel::Semi(model),
                None,
                &track,
                &cfg,
            )?;
            if log.aborted.is_some() || log.laps.is_empty() {
                (None, None)
            } else {
                let times: Vec<f64> = log.laps.iter().map(|l| l.time_s).collect();
                let mean = times.iter().sum::<f64>() / times.len() as f64;
                let var = times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>()
                    / times.len() as f64;
                (Some(mean), Some(var.sqrt()))
            }
        } else {
            (None, None)
        };

        Ok(SweepRow {
            phase: phase.to_string(),
            hidden1: hidden.0,
            hidden2: hidden.1,
            learning_rate: lr,
            weight_decay: wd,
            validation_mse: val_mse,
            avg_lap_time: avg_lap,
            lap_time_std: lap_std,
        })
    };

    for &hidden in &spec.hidden_grid {
        for &lr in &spec.learning_rate_grid {
            rows.push(evaluate_cell(hidden, lr, spec.sweep_weight_decay, "size-rate")?);
        }
    }
    for &wd in &spec.weight_decay_grid {
        rows.push(evaluate_cell(
            spec.wd_phase_hidden,
            spec.wd_phase_learning_rate,
            wd,
            "weight-decay",
        )?);
    }

    ensure_dir(&spec.out_dir)?;
    let mut csv = String::from(
        "phase,hidden1,hidden2,learning_rate,weight_decay,validation_mse,avg_lap_time,lap_time_std\n",
    );
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{:.9e},{:.9e},{:.9e},{},{}",
            r.phase,
            r.hidden1,
            r.hidden2,
            r.learning_rate,
            r.weight_decay,
            r.validation_mse,
            r.avg_lap_time.map_or(String::new(), |v| format!("{v:.9e}")),
            r.lap_time_std.map_or(String::new(), |v| format!("{v:.9e}")),
        )
        .unwrap();
    }
    std::fs::write(spec.out_dir.join("sweep.csv"), csv)?;

    let report = SweepReport {
        dataset_sha256: ds.content_hash(),
        rows,
    };
    write_json(&spec.out_dir.join("report.json"), &report)?;
    Ok(report)
}
