use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use cso_swarm::experiment::{
    parse_config, preset, run_preset, ExperimentError, ExperimentPreset, PresetRun, PRESET_NAMES,
};
use cso_swarm::ScenarioConfig;

/// Simulate agents tracking targets and write plot-ready CSV.
///
/// Without --preset, runs the scenario from --config (or the defaults).
/// With --preset, the preset's variants are built on top of that scenario.
#[derive(Debug, Parser)]
#[command(name = "cso-swarm", version, after_help = presets_help())]
struct Args {
    /// JSON scenario file; absent fields take their defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Named experiment (see below).
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Base seed; replication r uses seed + r. Defaults to the scenario's seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Number of replications per variant.
    #[arg(long, value_name = "N")]
    reps: Option<usize>,
    /// Override the number of steps of every variant.
    #[arg(long, value_name = "N")]
    steps: Option<usize>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Worker threads for replications.
    #[arg(long, value_name = "N", default_value_t = 1)]
    parallel: usize,
    /// Also write per-step raw logs (raw.csv, raw_fim.csv).
    #[arg(long)]
    log_raw: bool,
}

fn presets_help() -> String {
    format!("Presets: {}", PRESET_NAMES.join(", "))
}

fn run(args: Args) -> Result<(), ExperimentError> {
    let base = match &args.config {
        Some(path) => parse_config(path)?,
        None => ScenarioConfig::default(),
    };
    let seed = args.seed.unwrap_or(base.seed);
    let mut plan = match &args.preset {
        Some(name) => preset(name, &base)?,
        None => ExperimentPreset::custom(base, 1),
    };
    if let Some(steps) = args.steps {
        plan = plan.with_steps(steps);
    }
    if let Some(reps) = args.reps {
        plan = plan.with_reps(reps);
    }
    let out = run_preset(
        &plan,
        PresetRun { base_seed: seed, parallelism: args.parallel.max(1), log_raw: args.log_raw },
        &args.out,
    )?;
    for v in &out.summary.variants {
        println!(
            "{:<12} reps={} terminal m_k={:.4} mean ST={:.3}s mean APT={:.3e}s",
            v.label, v.n_reps, v.terminal_m_k, v.mean_st_s, v.mean_apt_s
        );
    }
    for f in &out.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
