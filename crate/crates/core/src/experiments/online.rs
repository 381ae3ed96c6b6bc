//! Online adaptation races: fixed-model runs on the nominal and modified
//! plants bracket the iterative-learner runs, repeated over seeds, with
//! model snapshots saved at fixed sim times.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::gen::generate_dataset;
use super::offline::fit_input_gmm;
use super::{ensure_dir, reference, resolve_track, write_json};
use crate::dataset::Dataset;
use crate::driver::DriverConfig;
use crate::error::{Error, Result};
use crate::learner::{derive_seed, IterativeLearner, LearnerConfig};
use crate::mppi::{race_loop, CostWeights, MppiConfig, RaceConfig, RaceLog, RaceModel};
use crate::nn::TrainConfig;
use crate::parametric::{FitOptions, VehicleParams};
use crate::plant::PlantParams;
use crate::semiparam::{bootstrap, save_bundle, SemiParamModel};
use crate::state::ControlLimits;

fn default_track() -> String {
    "mixed".into()
}
fn default_laps() -> usize {
    10
}
fn default_reps() -> usize {
    3
}
fn default_scenarios() -> Vec<String> {
    vec!["normal".into(), "modified".into(), "iterative".into()]
}
fn default_mass() -> f64 {
    1430.0
}
fn default_mu() -> f64 {
    0.8
}
fn default_duration() -> f64 {
    480.0
}
fn default_components() -> usize {
    8
}
fn default_preset() -> String {
    "safe".into()
}
fn default_snapshots() -> Vec<f64> {
    vec![0.0, 60.0, 120.0]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RaceSpec {
    pub kind: String,
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default = "default_track")]
    pub track: String,
    #[serde(default = "default_laps")]
    pub laps: usize,
    #[serde(default = "default_reps")]
    pub repetitions: usize,
    #[serde(default = "default_scenarios")]
    pub scenarios: Vec<String>,
    #[serde(default)]
    pub bootstrap_dataset: Option<PathBuf>,
    #[serde(default = "default_duration")]
    pub gen_duration_s: f64,
    #[serde(default = "default_mass")]
    pub modified_mass: f64,
    #[serde(default = "default_mu")]
    pub modified_mu: f64,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub learner: Option<LearnerConfig>,
    #[serde(default = "default_components")]
    pub gmm_components: usize,
    #[serde(default)]
    pub mppi: Option<MppiConfig>,
    #[serde(default = "default_preset")]
    pub weights_preset: String,
    #[serde(default)]
    pub speed_target: Option<f64>,
    #[serde(default = "default_snapshots")]
    pub snapshot_times: Vec<f64>,
    #[serde(default)]
    pub write_telemetry: bool,
}

pub fn weights_from_preset(preset: &str, speed_target: Option<f64>) -> Result<CostWeights> {
    let mut w = match preset {
        "safe" => CostWeights::safe(),
        "aggressive" => CostWeights::aggressive(),
        other => {
            return Err(Error::InvalidInput(format!(
                "unknown weights preset '{other}' (safe|aggressive)"
            )))
        }
    };
    if let Some(v) = speed_target {
        w.speed_target = v;
    }
    Ok(w)
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub rep: usize,
    pub lap_times: Vec<f64>,
    pub per_lap_mse: Vec<f64>,
    pub aborted: Option<String>,
    pub off_track_steps: u64,
    pub sessions: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct OnlineReport {
    pub bootstrap_sha256: String,
    pub bundle_sha256: String,
    pub track: String,
    pub laps: usize,
    pub repetitions: usize,
    pub runs: Vec<RunSummary>,
    pub aborted_runs: usize,
    /// Mean lap time over laps 5.. for each scenario, aborted runs
    /// excluded.
    pub mean_late_lap_time: Vec<(String, f64)>,
    pub reference_lap_times: Vec<f64>,
    pub reference_lap_mse: Vec<f64>,
}

fn write_telemetry_csv(path: &Path, log: &RaceLog) -> Result<()> {
    let mut out = String::from(
        "t,x,y,psi,vx,vy,yaw_rate,accel_cmd,steer_cmd,actual_steer,s,inside\n",
    );
    for r in &log.telemetry {
        writeln!(
            out,
            "{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{}",
            r.t,
            r.x,
            r.y,
            r.psi,
            r.vx,
            r.vy,
            r.yaw_rate,
            r.accel_cmd,
            r.steer_cmd,
            r.actual_steer,
            r.s,
            r.inside as u8
        )
        .unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub struct OnlineOutput {
    pub report: OnlineReport,
    pub bootstrapped: SemiParamModel,
}

pub fn run_online_iter(spec: &RaceSpec) -> Result<OnlineOutput> {
    super::check_kind(&spec.kind, "race")?;
    let nominal = PlantParams::default();
    let modified = crate::plant::modify_dynamics(&nominal, spec.modified_mass, spec.modified_mu)?;
    let track = resolve_track(&spec.track)?;

    // bootstrap on nominal-plant data collected around the same track
    let bootstrap_ds = match &spec.bootstrap_dataset {
        Some(p) => Dataset::read_csv(p)?,
        None => {
            generate_dataset(
                &spec.track,
                spec.gen_duration_s,
                &nominal,
                &DriverConfig::default(),
                21,
                3,
                spec.seed,
            )?
            .1
        }
    };
    let mut train_cfg = spec.train.unwrap_or_default();
    train_cfg.seed = spec.seed;
    let (model0, _) = bootstrap(
        &bootstrap_ds,
        &VehicleParams::default(),
        &FitOptions::default(),
        &train_cfg,
        (20, 20),
    )?;
    let gmm0 = fit_input_gmm(&model0, &bootstrap_ds, spec.gmm_components, spec.seed)?;

    ensure_dir(&spec.out_dir)?;
    let bundle_dir = spec.out_dir.join("bootstrapped_bundle");
    save_bundle(&model0, &bundle_dir, &bootstrap_ds.content_hash())?;

    let weights = weights_from_preset(&spec.weights_preset, spec.speed_target)?;
    let base_mppi = spec.mppi.unwrap_or_default();

    let mut learner_cfg = spec.learner.unwrap_or_default();
    learner_cfg.optimizer = TrainConfig {
        seed: spec.seed,
        ..train_cfg
    };

    let mut runs = Vec::new();
    let mut laps_csv = String::from("scenario,rep,lap,time_s\n");
    let mut mse_csv = String::from("scenario,rep,lap,mse\n");

    for (scen_idx, scenario) in spec.scenarios.iter().enumerate() {
        for rep in 0..spec.repetitions {
            let run_seed = derive_seed(spec.seed, scen_idx as u64 + 1, rep as u64);
            let race_cfg = RaceConfig {
                laps: spec.laps,
                mppi: MppiConfig {
                    seed: run_seed,
                    ..base_mppi
                },
                weights,
                limits: ControlLimits::default(),
                snapshot_times: if scenario == "iterative" {
                    spec.snapshot_times.clone()
                } else {
                    Vec::new()
                },
                max_sim_time: 1200.0,
            };

            let log = match scenario.as_str() {
                "normal" => race_loop(
                    &nominal,
                    RaceModel::Semi(model0.clone()),
                    None,
                    &track,
                    &race_cfg,
                )?,
                "modified" => race_loop(
                    &modified,
                    RaceModel::Semi(model0.clone()),
                    None,
                    &track,
                    &race_cfg,
                )?,
                "iterative" => {
                    let mut learner = IterativeLearner::new(
                        LearnerConfig {
                            seed: run_seed,
                            ..learner_cfg
                        },
                        gmm0.clone(),
                    )?;
                    race_loop(
                        &modified,
                        RaceModel::Semi(model0.clone()),
                        Some(&mut learner),
                        &track,
                        &race_cfg,
                    )?
                }
                other => {
                    return Err(Error::InvalidInput(format!(
                        "unknown scenario '{other}' (normal|modified|iterative)"
                    )))
                }
            };

            for lap in &log.laps {
                writeln!(laps_csv, "{scenario},{rep},{},{:.9e}", lap.lap, lap.time_s).unwrap();
            }
            for (k, mse) in log.per_lap_mse.iter().enumerate() {
                writeln!(mse_csv, "{scenario},{rep},{k},{mse:.9e}").unwrap();
            }
            if spec.write_telemetry {
                write_telemetry_csv(
                    &spec.out_dir.join(format!("telemetry_{scenario}_rep{rep}.csv")),
                    &log,
                )?;
            }
            for (t, m) in &log.time_snapshots {
                let dir = spec
                    .out_dir
                    .join(format!("snapshot_{scenario}_rep{rep}_t{}", *t as u64));
                save_bundle(m, &dir, &bootstrap_ds.content_hash())?;
            }
            runs.push(RunSummary {
                scenario: scenario.clone(),
                rep,
                lap_times: log.laps.iter().map(|l| l.time_s).collect(),
                per_lap_mse: log.per_lap_mse.clone(),
                aborted: log.aborted.clone(),
                off_track_steps: log.off_track_steps,
                sessions: log.sessions.len(),
            });
        }
    }

    std::fs::write(spec.out_dir.join("laps.csv"), laps_csv)?;
    std::fs::write(spec.out_dir.join("mse.csv"), mse_csv)?;

    let mut mean_late = Vec::new();
    for scenario in &spec.scenarios {
        let mut times = Vec::new();
        for run in runs.iter().filter(|r| &r.scenario == scenario) {
            if run.aborted.is_none() {
                times.extend(run.lap_times.iter().skip(4).copied());
            }
        }
        let mean = if times.is_empty() {
            f64::NAN
        } else {
            times.iter().sum::<f64>() / times.len() as f64
        };
        mean_late.push((scenario.clone(), mean));
    }

    let report = OnlineReport {
        bootstrap_sha256: bootstrap_ds.content_hash(),
        bundle_sha256: super::file_sha256(&bundle_dir.join("network.json"))?,
        track: spec.track.clone(),
        laps: spec.laps,
        repetitions: spec.repetitions,
        aborted_runs: runs.iter().filter(|r| r.aborted.is_some()).count(),
        runs,
        mean_late_lap_time: mean_late,
        reference_lap_times: reference::ONLINE_LAP_TIMES.to_vec(),
        reference_lap_mse: reference::ONLINE_LAP_MSE.to_vec(),
    };
    write_json(&spec.out_dir.join("report.json"), &report)?;

    Ok(OnlineOutput {
        report,
        bootstrapped: model0,
    })
}
