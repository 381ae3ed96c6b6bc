//! Acceleration-envelope export: per-step body-frame longitudinal and
//! lateral accelerations from race telemetry, either from an existing
//! telemetry CSV or by running saved model snapshots for a lap.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::online::weights_from_preset;
use super::{ensure_dir, resolve_track, write_json, PlantOverrides};
use crate::dataset::{compute_targets, LogRow};
use crate::error::{Error, Result};
use crate::mppi::{race_loop, MppiConfig, RaceConfig, RaceLog, RaceModel};
use crate::plant::PlantParams;
use crate::semiparam::load_bundle;
use crate::state::{ControlInput, ControlLimits, VehicleState};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GgRecord {
    pub t: f64,
    pub a_long: f64,
    pub a_lat: f64,
}

fn default_mode() -> String {
    "telemetry".into()
}
fn default_track() -> String {
    "mixed".into()
}
fn default_preset() -> String {
    "aggressive".into()
}
fn default_laps() -> usize {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GgSpec {
    pub kind: String,
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
    /// "telemetry" reads an existing telemetry CSV; "snapshot-run" races
    /// each bundle for a lap and exports its envelope.
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default)]
    pub telemetry: Option<PathBuf>,
    #[serde(default)]
    pub bundles: Vec<PathBuf>,
    #[serde(default = "default_track")]
    pub track: String,
    #[serde(default = "default_laps")]
    pub laps: usize,
    #[serde(default)]
    pub plant: PlantOverrides,
    #[serde(default = "default_preset")]
    pub weights_preset: String,
    #[serde(default)]
    pub mppi: Option<MppiConfig>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GgSummary {
    pub source: String,
    pub records: usize,
    pub max_abs_a_lat: f64,
    pub max_abs_a_long: f64,
    pub aborted: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GgReport {
    pub summaries: Vec<GgSummary>,
}

/// Body-frame accelerations from a logged state sequence:
/// a_long = vx_dot - yaw_rate*vy, a_lat = vy_dot + yaw_rate*vx, with the
/// velocity derivatives taken by finite differences.
pub fn gg_from_rows(rows: &[LogRow]) -> Result<Vec<GgRecord>> {
    let ds = compute_targets(rows)?;
    Ok(ds
        .samples()
        .iter()
        .map(|s| GgRecord {
            t: s.timestamp,
            a_long: s.target.vx_dot - s.state.yaw_rate * s.state.vy,
            a_lat: s.target.vy_dot + s.state.yaw_rate * s.state.vx,
        })
        .collect())
}

fn rows_from_race(log: &RaceLog) -> Vec<LogRow> {
    log.telemetry
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
        .collect()
}

fn read_telemetry_rows(path: &Path) -> Result<Vec<LogRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty telemetry file".into()))?;
    if !header.starts_with("t,x,y,psi,vx,vy,yaw_rate,accel_cmd,steer_cmd") {
        return Err(Error::Parse(format!("unexpected telemetry header: {header}")));
    }
    let mut rows = Vec::new();
    for (no, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<&str> = line.split(',').collect();
        if vals.len() < 9 {
            return Err(Error::Parse(format!("telemetry line {}: too few columns", no + 2)));
        }
        let f = |i: usize| -> Result<f64> {
            vals[i]
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("telemetry line {}: {e}", no + 2)))
        };
        rows.push(LogRow {
            t: f(0)?,
            state: VehicleState {
                x: f(1)?,
                y: f(2)?,
                psi: f(3)?,
                vx: f(4)?,
                vy: f(5)?,
                yaw_rate: f(6)?,
            },
            control: ControlInput {
                accel: f(7)?,
                steer: f(8)?,
            },
        });
    }
    Ok(rows)
}

fn write_gg_csv(path: &Path, records: &[GgRecord]) -> Result<()> {
    let mut out = String::from("t,a_long,a_lat\n");
    for r in records {
        writeln!(out, "{:.9e},{:.9e},{:.9e}", r.t, r.a_long, r.a_lat).unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn summarize(source: &str, records: &[GgRecord], aborted: Option<String>) -> GgSummary {
    GgSummary {
        source: source.to_string(),
        records: records.len(),
        max_abs_a_lat: records.iter().map(|r| r.a_lat.abs()).fold(0.0, f64::max),
        max_abs_a_long: records.iter().map(|r| r.a_long.abs()).fold(0.0, f64::max),
        aborted,
    }
}

pub fn export_gg(spec: &GgSpec) -> Result<GgReport> {
    super::check_kind(&spec.kind, "export-gg")?;
    ensure_dir(&spec.out_dir)?;
    let mut summaries = Vec::new();

    match spec.mode.as_str() {
        "telemetry" => {
            let path = spec
                .telemetry
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("telemetry mode needs a path".into()))?;
            let rows = read_telemetry_rows(path)?;
            let records = gg_from_rows(&rows)?;
            write_gg_csv(&spec.out_dir.join("gg.csv"), &records)?;
            summaries.push(summarize(&path.display().to_string(), &records, None));
        }
        "snapshot-run" => {
            if spec.bundles.is_empty() {
                return Err(Error::InvalidInput("snapshot-run mode needs bundles".into()));
            }
            let track = resolve_track(&spec.track)?;
            let plant = spec.plant.apply(&PlantParams::default())?;
            let weights = weights_from_preset(&spec.weights_preset, None)?;
            for (i, bundle) in spec.bundles.iter().enumerate() {
                let (model, _) = load_bundle(bundle)?;
                let cfg = RaceConfig {
                    laps: spec.laps,
                    mppi: MppiConfig {
                        seed: spec.seed,
                        ..spec.mppi.unwrap_or_default()
                    },
                    weights,
                    limits: ControlLimits::default(),
                    snapshot_times: Vec::new(),
                    max_sim_time: 600.0,
                };
                let log = race_loop(&plant, RaceModel::Semi(model), None, &track, &cfg)?;
                let rows = rows_from_race(&log);
                let records = gg_from_rows(&rows)?;
                write_gg_csv(&spec.out_dir.join(format!("gg_{i}.csv")), &records)?;
                summaries.push(summarize(
                    &bundle.display().to_string(),
                    &records,
                    log.aborted.clone(),
                ));
            }
        }
        other => {
            return Err(Error::InvalidInput(format!(
                "unknown gg mode '{other}' (telemetry|snapshot-run)"
            )))
        }
    }

    let report = GgReport { summaries };
    write_json(&spec.out_dir.join("gg_summary.json"), &report)?;
    Ok(report)
}
