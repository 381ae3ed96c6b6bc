//! Offline adaptation: bootstrap on nominal-plant data, stream a
//! modified-dynamics dataset through the learner (constrained and
//! local-only ablation), evaluate every model on every dataset.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::PathBuf;

use super::gen::generate_dataset;
use super::{ensure_dir, reference, write_json};
use crate::dataset::Dataset;
use crate::driver::DriverConfig;
use crate::error::Result;
use crate::gmm::{self, GmmModel};
use crate::learner::{IterativeLearner, LearnerConfig, SessionReport, UpdateMode};
use crate::nn::TrainConfig;
use crate::parametric::{FitOptions, VehicleParams};
use crate::plant::PlantParams;
use crate::semiparam::{bootstrap, evaluate_mse, save_bundle, SemiParamModel};

fn default_track() -> String {
    "oval".into()
}
fn default_duration() -> f64 {
    600.0
}
fn default_test_duration() -> f64 {
    240.0
}
fn default_mass() -> f64 {
    1430.0
}
fn default_mu() -> f64 {
    0.8
}
fn default_components() -> usize {
    8
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OfflineIterSpec {
    pub kind: String,
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub bootstrap_dataset: Option<PathBuf>,
    #[serde(default)]
    pub validation_dataset: Option<PathBuf>,
    #[serde(default)]
    pub test_dataset: Option<PathBuf>,
    #[serde(default = "default_track")]
    pub gen_track: String,
    #[serde(default = "default_duration")]
    pub gen_duration_s: f64,
    #[serde(default = "default_test_duration")]
    pub gen_test_duration_s: f64,
    #[serde(default = "default_mass")]
    pub modified_mass: f64,
    #[serde(default = "default_mu")]
    pub modified_mu: f64,
    #[serde(default = "default_hidden")]
    pub hidden: (usize, usize),
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub learner: Option<LearnerConfig>,
    #[serde(default = "default_components")]
    pub gmm_components: usize,
}

fn default_hidden() -> (usize, usize) {
    (20, 20)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct MseRow {
    pub bootstrap: f64,
    pub validation: f64,
    pub test: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct OfflineIterReport {
    pub bootstrap_sha256: String,
    pub validation_sha256: String,
    pub test_sha256: String,
    pub bundle_sha256: String,
    pub bootstrapped: MseRow,
    pub sgd: MseRow,
    pub iterative: MseRow,
    pub sessions_constrained: usize,
    pub sessions_sgd: usize,
    pub adapted_below_half_of_bootstrapped_on_validation: bool,
    pub constrained_beats_sgd_on_test: bool,
    pub constrained_beats_sgd_on_bootstrap: bool,
    /// Published results on a different plant; absolutes not comparable.
    pub reference_offline_mse: Vec<(String, f64, f64, f64)>,
}

/// Fit the input-space mixture on a dataset's normalized network inputs.
pub fn fit_input_gmm(
    model: &SemiParamModel,
    ds: &Dataset,
    components: usize,
    seed: u64,
) -> Result<GmmModel> {
    let inputs: Vec<Vec<f64>> = ds
        .samples()
        .iter()
        .map(|s| model.normalized_input(&s.state, &s.control).1.to_vec())
        .collect();
    let (gm, _) = gmm::fit_em(&inputs, components, 200, 1e-4, seed)?;
    Ok(gm)
}

/// Stream a dataset through the learner in time order, training whenever
/// the buffer fills. Returns the adapted model and the session reports.
pub fn stream_dataset(
    model: &SemiParamModel,
    gmm_model: &GmmModel,
    ds: &Dataset,
    cfg: LearnerConfig,
) -> Result<(SemiParamModel, Vec<SessionReport>)> {
    let mut learner = IterativeLearner::new(cfg, gmm_model.clone())?;
    let mut current = model.clone();
    let mut sessions = Vec::new();
    for s in ds.samples() {
        if let Some((m, r)) =
            learner.push_and_maybe_train(&current, &s.state, &s.control, &s.target)?
        {
            current = m;
            sessions.push(r);
        }
    }
    Ok((current, sessions))
}

fn write_sessions(path: &std::path::Path, sessions: &[SessionReport]) -> Result<()> {
    let mut out = String::new();
    for s in sessions {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub struct OfflineOutput {
    pub report: OfflineIterReport,
    pub bootstrapped: SemiParamModel,
    pub constrained: SemiParamModel,
    pub sgd: SemiParamModel,
}

pub fn run_offline_iter(spec: &OfflineIterSpec) -> Result<OfflineOutput> {
    super::check_kind(&spec.kind, "offline-iter")?;
    let nominal = PlantParams::default();
    let modified = crate::plant::modify_dynamics(&nominal, spec.modified_mass, spec.modified_mu)?;
    let driver = DriverConfig::default();

    let load_or_gen = |path: &Option<PathBuf>,
                       plant: &PlantParams,
                       duration: f64,
                       seed: u64|
     -> Result<Dataset> {
        match path {
            Some(p) => Dataset::read_csv(p),
            None => Ok(generate_dataset(&spec.gen_track, duration, plant, &driver, 21, 3, seed)?.1),
        }
    };
    let bootstrap_ds = load_or_gen(&spec.bootstrap_dataset, &nominal, spec.gen_duration_s, spec.seed)?;
    let validation_ds = load_or_gen(
        &spec.validation_dataset,
        &modified,
        spec.gen_duration_s,
        spec.seed.wrapping_add(1),
    )?;
    let test_ds = load_or_gen(
        &spec.test_dataset,
        &modified,
        spec.gen_test_duration_s,
        spec.seed.wrapping_add(2),
    )?;

    let mut train_cfg = spec.train.unwrap_or_default();
    train_cfg.seed = spec.seed;
    let (model0, _) = bootstrap(
        &bootstrap_ds,
        &VehicleParams::default(),
        &FitOptions::default(),
        &train_cfg,
        spec.hidden,
    )?;
    let gmm0 = fit_input_gmm(&model0, &bootstrap_ds, spec.gmm_components, spec.seed)?;

    let mut learner_cfg = spec.learner.unwrap_or_default();
    learner_cfg.seed = spec.seed;
    learner_cfg.optimizer = TrainConfig {
        seed: spec.seed,
        ..train_cfg
    };

    let constrained_cfg = LearnerConfig {
        mode: UpdateMode::Constrained,
        ..learner_cfg
    };
    let sgd_cfg = LearnerConfig {
        mode: UpdateMode::LocalOnly,
        ..learner_cfg
    };
    let (model_constrained, sessions_c) =
        stream_dataset(&model0, &gmm0, &validation_ds, constrained_cfg)?;
    let (model_sgd, sessions_s) = stream_dataset(&model0, &gmm0, &validation_ds, sgd_cfg)?;

    let row = |m: &SemiParamModel| -> Result<MseRow> {
        Ok(MseRow {
            bootstrap: evaluate_mse(m, &bootstrap_ds)?.aggregate,
            validation: evaluate_mse(m, &validation_ds)?.aggregate,
            test: evaluate_mse(m, &test_ds)?.aggregate,
        })
    };
    let r0 = row(&model0)?;
    let rs = row(&model_sgd)?;
    let rc = row(&model_constrained)?;

    ensure_dir(&spec.out_dir)?;
    let bundle_dir = spec.out_dir.join("bootstrapped_bundle");
    save_bundle(&model0, &bundle_dir, &bootstrap_ds.content_hash())?;
    save_bundle(
        &model_constrained,
        &spec.out_dir.join("adapted_bundle"),
        &validation_ds.content_hash(),
    )?;
    write_sessions(&spec.out_dir.join("sessions_constrained.jsonl"), &sessions_c)?;
    write_sessions(&spec.out_dir.join("sessions_sgd.jsonl"), &sessions_s)?;

    let mut table = String::from("model,bootstrap_mse,validation_mse,test_mse\n");
    for (name, r) in [("bootstrapped", &r0), ("sgd", &rs), ("iterative", &rc)] {
        writeln!(
            table,
            "{name},{:.9e},{:.9e},{:.9e}",
            r.bootstrap, r.validation, r.test
        )
        .unwrap();
    }
    std::fs::write(spec.out_dir.join("table.csv"), table)?;

    let report = OfflineIterReport {
        bootstrap_sha256: bootstrap_ds.content_hash(),
        validation_sha256: validation_ds.content_hash(),
        test_sha256: test_ds.content_hash(),
        bundle_sha256: super::file_sha256(&bundle_dir.join("network.json"))?,
        bootstrapped: r0,
        sgd: rs,
        iterative: rc,
        sessions_constrained: sessions_c.len(),
        sessions_sgd: sessions_s.len(),
        adapted_below_half_of_bootstrapped_on_validation: rc.validation < 0.5 * r0.validation,
        constrained_beats_sgd_on_test: rc.test < rs.test,
        constrained_beats_sgd_on_bootstrap: rc.bootstrap < rs.bootstrap,
        reference_offline_mse: reference::OFFLINE_MSE
            .iter()
            .map(|(n, a, b, c)| (n.to_string(), *a, *b, *c))
            .collect(),
    };
    write_json(&spec.out_dir.join("report.json"), &report)?;

    Ok(OfflineOutput {
        report,
        bootstrapped: model0,
        constrained: model_constrained,
        sgd: model_sgd,
    })
}
