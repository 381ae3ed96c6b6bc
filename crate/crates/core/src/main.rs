use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use apexsim::experiments::{
    compare::{run_model_comparison, CompareSpec},
    fit_eval::{run_eval, run_fit, EvalSpec, FitSpec},
    gen::{run_gen_data, GenDataSpec},
    gg::{export_gg, GgSpec},
    load_spec,
    offline::{run_offline_iter, OfflineIterSpec},
    online::{run_online_iter, RaceSpec},
    sweep::{run_sweep, SweepSpec},
};

#[derive(Parser)]
#[command(
    name = "apexsim",
    about = "Semi-parametric vehicle dynamics learning and MPPI racing experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct SpecArgs {
    /// TOML experiment spec file.
    spec: PathBuf,
    /// Override the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the spec's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a driving dataset with the scripted driver.
    GenData(SpecArgs),
    /// Bootstrap a semi-parametric model bundle from a dataset.
    Fit(SpecArgs),
    /// Evaluate a model bundle on a dataset.
    Eval(SpecArgs),
    /// Compare parametric, non-parametric and semi-parametric models.
    CompareModels(SpecArgs),
    /// Offline adaptation to modified dynamics, with the SGD ablation.
    OfflineIter(SpecArgs),
    /// Closed-loop races: fixed models and the online learner.
    Race(SpecArgs),
    /// Hidden-size / learning-rate / weight-decay sweep.
    Sweep(SpecArgs),
    /// Export acceleration-envelope data from telemetry or snapshots.
    ExportGg(SpecArgs),
}

fn apply_overrides<T>(spec: &mut T, args: &SpecArgs, seed: &mut dyn FnMut(&mut T, u64), out: &mut dyn FnMut(&mut T, PathBuf)) {
    if let Some(s) = args.seed {
        seed(spec, s);
    }
    if let Some(o) = &args.out {
        out(spec, o.clone());
    }
}

macro_rules! with_overrides {
    ($args:expr, $ty:ty) => {{
        let mut spec: $ty = load_spec(&$args.spec)?;
        apply_overrides(
            &mut spec,
            $args,
            &mut |s, v| s.seed = v,
            &mut |s, v| s.out_dir = v,
        );
        spec
    }};
}

fn run(cli: Cli) -> apexsim::Result<()> {
    match &cli.command {
        Command::GenData(args) => {
            let spec = with_overrides!(args, GenDataSpec);
            let out = run_gen_data(&spec)?;
            println!(
                "wrote {} samples to {}",
                out.dataset.len(),
                out.dataset_path.display()
            );
        }
        Command::Fit(args) => {
            let spec = with_overrides!(args, FitSpec);
            let bundle = run_fit(&spec)?;
            println!("bundle written to {}", bundle.display());
        }
        Command::Eval(args) => {
            let spec = with_overrides!(args, EvalSpec);
            let mse = run_eval(&spec)?;
            println!("aggregate velocity MSE: {mse:.6}");
        }
        Command::CompareModels(args) => {
            let spec = with_overrides!(args, CompareSpec);
            let out = run_model_comparison(&spec)?;
            let r = &out.report;
            println!(
                "val MSE: parametric {:.4}, semi {:.4}, non-parametric {:.4}",
                r.parametric_val_mse, r.semi_val_mse, r.nonparam_val_mse
            );
        }
        Command::OfflineIter(args) => {
            let spec = with_overrides!(args, OfflineIterSpec);
            let out = run_offline_iter(&spec)?;
            let r = &out.report;
            println!(
                "validation MSE: bootstrapped {:.4}, sgd {:.4}, iterative {:.4}",
                r.bootstrapped.validation, r.sgd.validation, r.iterative.validation
            );
        }
        Command::Race(args) => {
            let spec = with_overrides!(args, RaceSpec);
            let out = run_online_iter(&spec)?;
            for (scenario, mean) in &out.report.mean_late_lap_time {
                println!("{scenario}: mean lap time (laps 5+) {mean:.2} s");
            }
            if out.report.aborted_runs > 0 {
                println!("aborted runs: {}", out.report.aborted_runs);
            }
        }
        Command::Sweep(args) => {
            let spec = with_overrides!(args, SweepSpec);
            let report = run_sweep(&spec)?;
            println!("swept {} cells", report.rows.len());
        }
        Command::ExportGg(args) => {
            let spec = with_overrides!(args, GgSpec);
            let report = export_gg(&spec)?;
            for s in &report.summaries {
                println!("{}: max |a_lat| = {:.3} m/s^2", s.source, s.max_abs_a_lat);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
