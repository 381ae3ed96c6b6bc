//! Experiment harness: spec-file driven runners behind the CLI verbs.
//! Every runner is reproducible from its spec file and seed alone, and
//! every report carries the content hashes of its inputs.

pub mod compare;
pub mod fit_eval;
pub mod gen;
pub mod gg;
pub mod offline;
pub mod online;
pub mod sweep;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::plant::{modify_dynamics, PlantParams};
use crate::track::Track;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Resolve a track spec string: a built-in name or a CSV path.
pub fn resolve_track(name: &str) -> Result<Track> {
    match name {
        "oval" => Ok(Track::oval(300.0, 35.0, 10.0, 0.75)),
        "mixed" => Ok(Track::mixed(9.0, 0.75)),
        "ring" => Ok(Track::ring(40.0, 6.0, 0.75)),
        path => Track::read_csv(Path::new(path)),
    }
}

/// Optional plant parameter overrides shared by the experiment specs.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct PlantOverrides {
    pub mass: Option<f64>,
    pub mu: Option<f64>,
}

impl PlantOverrides {
    pub fn apply(&self, base: &PlantParams) -> Result<PlantParams> {
        modify_dynamics(
            base,
            self.mass.unwrap_or(base.m),
            self.mu.unwrap_or(base.mu),
        )
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn load_spec<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read spec {}: {e}", path.display())))?;
    Ok(toml::from_str(&text)?)
}

/// Check the spec-file kind tag against the CLI verb it was passed to.
pub fn check_kind(kind: &str, expected: &str) -> Result<()> {
    if kind != expected {
        return Err(Error::InvalidInput(format!(
            "spec kind '{kind}' does not match command '{expected}'"
        )));
    }
    Ok(())
}

/// CLI-level overrides applied on top of a spec file.
#[derive(Clone, Debug, Default)]
pub struct SpecOverrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

/// Reference results from the original study on its proprietary plant.
/// Shipped in reports for trend context only; the absolute values are
/// not comparable to this stack's plant.
pub mod reference {
    /// Offline adaptation MSE table rows:
    /// (model, bootstrap data, validation data, test data).
    pub const OFFLINE_MSE: [(&str, f64, f64, f64); 3] = [
        ("bootstrapped", 0.504, 1.037, 1.050),
        ("sgd", 2.148, 0.121, 0.442),
        ("iterative", 1.423, 0.181, 0.170),
    ];

    /// Online adaptation lap times [s] for laps 1..=10.
    pub const ONLINE_LAP_TIMES: [f64; 10] = [
        78.69, 75.93, 75.52, 75.53, 74.94, 75.55, 75.55, 75.44, 75.03, 75.24,
    ];

    /// Online adaptation model MSE for laps 0..=10 (0 = starting model).
    pub const ONLINE_LAP_MSE: [f64; 11] = [
        1.050, 0.210, 0.194, 0.193, 0.192, 0.194, 0.192, 0.192, 0.192, 0.193, 0.193,
    ];
}
