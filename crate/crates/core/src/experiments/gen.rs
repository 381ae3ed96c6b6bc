//! Dataset generation: scripted driving on a plant, smoothing, and
//! finite-difference target extraction.

use serde::{Deserialize, Serialize};
use std::path::PathBuf;

use super::{ensure_dir, resolve_track, sha256_hex, write_json, PlantOverrides};
use crate::dataset::{compute_targets, smooth_log, Dataset, RawLog};
use crate::driver::{drive, DriverConfig};
use crate::error::Result;
use crate::plant::PlantParams;
use crate::state::SimConfig;

fn default_track() -> String {
    "oval".into()
}
fn default_duration() -> f64 {
    600.0
}
fn default_window() -> usize {
    21
}
fn default_poly() -> usize {
    3
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenDataSpec {
    pub kind: String,
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default = "default_track")]
    pub track: String,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default)]
    pub plant: PlantOverrides,
    #[serde(default)]
    pub driver: Option<DriverConfig>,
    #[serde(default = "default_window")]
    pub smooth_window: usize,
    #[serde(default = "default_poly")]
    pub smooth_poly: usize,
}

#[derive(Serialize)]
struct GenDataReport {
    seed: u64,
    track: String,
    duration_s: f64,
    samples: usize,
    plant_mass: f64,
    plant_mu: f64,
    raw_log_sha256: String,
    dataset_sha256: String,
    vx_min: f64,
    vx_max: f64,
}

pub struct GenDataOutput {
    pub dataset: Dataset,
    pub raw: RawLog,
    pub dataset_path: PathBuf,
}

/// Drive, smooth, difference. Pure in-memory variant used by the other
/// experiment runners.
pub fn generate_dataset(
    track_name: &str,
    duration_s: f64,
    plant: &PlantParams,
    driver_cfg: &DriverConfig,
    smooth_window: usize,
    smooth_poly: usize,
    seed: u64,
) -> Result<(RawLog, Dataset)> {
    let track = resolve_track(track_name)?;
    let dt = SimConfig::default().dt;
    let raw = drive(plant, &track, duration_s, dt, driver_cfg, seed)?;
    let smoothed = smooth_log(&raw, smooth_window, smooth_poly)?;
    let ds = compute_targets(&smoothed.rows)?;
    Ok((raw, ds))
}

pub fn run_gen_data(spec: &GenDataSpec) -> Result<GenDataOutput> {
    super::check_kind(&spec.kind, "gen-data")?;
    let plant = spec.plant.apply(&PlantParams::default())?;
    let driver_cfg = spec.driver.unwrap_or_default();
    let (raw, ds) = generate_dataset(
        &spec.track,
        spec.duration_s,
        &plant,
        &driver_cfg,
        spec.smooth_window,
        spec.smooth_poly,
        spec.seed,
    )?;

    ensure_dir(&spec.out_dir)?;
    let raw_path = spec.out_dir.join("raw_log.csv");
    let ds_path = spec.out_dir.join("dataset.csv");
    raw.write_csv(&raw_path)?;
    ds.write_csv(&ds_path)?;

    let vx_min = ds.samples().iter().map(|s| s.state.vx).fold(f64::MAX, f64::min);
    let vx_max = ds.samples().iter().map(|s| s.state.vx).fold(f64::MIN, f64::max);
    let report = GenDataReport {
        seed: spec.seed,
        track: spec.track.clone(),
        duration_s: spec.duration_s,
        samples: ds.len(),
        plant_mass: plant.m,
        plant_mu: plant.mu,
        raw_log_sha256: sha256_hex(raw.to_csv_string().as_bytes()),
        dataset_sha256: ds.content_hash(),
        vx_min,
        vx_max,
    };
    write_json(&spec.out_dir.join("meta.json"), &report)?;

    Ok(GenDataOutput {
        dataset: ds,
        raw,
        dataset_path: ds_path,
    })
}
