//! Config files, named experiment presets, and CSV/JSON output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{median_min_distance, run_replications, ReplicationResult, RunOptions};
use crate::world::{ConfigError, ScenarioConfig};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("unknown preset `{0}` (known: {known})", known = PRESET_NAMES.join(", "))]
    UnknownPreset(String),
    #[error("n_reps must be at least 1")]
    NoReplications,
}

pub fn parse_config_str(json: &str) -> Result<ScenarioConfig, ExperimentError> {
    let cfg: ScenarioConfig = serde_json::from_str(json)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ScenarioConfig, ExperimentError> {
    let text = fs::read_to_string(path).map_err(|source| ExperimentError::Read { path: path.to_owned(), source })?;
    parse_config_str(&text)
}

pub const PRESET_NAMES: [&str; 8] = [
    "fig-2a2t",
    "fig-3a2t",
    "groups-2x2",
    "groups-2x4",
    "median-T2",
    "median-T4-8x4",
    "timing-table",
    "commcompare",
];

/// One configuration within a preset; becomes one `m_k` column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub label: String,
    pub cfg: ScenarioConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPreset {
    pub name: String,
    pub variants: Vec<Variant>,
    pub n_reps: usize,
    /// Also emit `timing.csv`.
    pub timing: bool,
}

impl ExperimentPreset {
    /// A single-variant run of an arbitrary configuration.
    pub fn custom(cfg: ScenarioConfig, n_reps: usize) -> Self {
        Self { name: "custom".into(), variants: vec![Variant { label: "custom".into(), cfg }], n_reps, timing: false }
    }

    pub fn with_steps(mut self, n_steps: usize) -> Self {
        self.variants.iter_mut().for_each(|v| v.cfg.n_steps = n_steps);
        self
    }

    pub fn with_reps(mut self, n_reps: usize) -> Self {
        self.n_reps = n_reps;
        self
    }
}

fn variant(label: impl Into<String>, cfg: ScenarioConfig) -> Variant {
    Variant { label: label.into(), cfg }
}

/// Builds a named preset on top of `base`; the preset fixes counts, groups,
/// step counts and the communication divisor, everything else comes from `base`.
pub fn preset(name: &str, base: &ScenarioConfig) -> Result<ExperimentPreset, ExperimentError> {
    let with = |a: usize, t: usize, steps: usize| ScenarioConfig {
        n_agents: a,
        n_targets: t,
        n_steps: steps,
        groups: None,
        ..base.clone()
    };
    let grouped = |g: usize, size: usize, t: usize, steps: usize| with(0, t, steps).with_equal_groups(g, size);
    let (variants, n_reps, timing) = match name {
        "fig-2a2t" => (vec![variant("A2", with(2, 2, 1500))], 1, false),
        "fig-3a2t" => (vec![variant("A3", with(3, 2, 2000))], 1, false),
        "groups-2x2" => (vec![variant("2x2", grouped(2, 2, 2, 1500))], 1, false),
        "groups-2x4" => (vec![variant("2x4", grouped(2, 4, 4, 1500))], 1, false),
        "median-T2" => (
            vec![
                variant("A2", with(2, 2, 4000)),
                variant("A5", with(5, 2, 4000)),
                variant("A10", with(10, 2, 4000)),
                variant("5x2", grouped(5, 2, 2, 4000)),
            ],
            100,
            false,
        ),
        "median-T4-8x4" => (vec![variant("8x4", grouped(8, 4, 4, 4000))], 100, false),
        "timing-table" => {
            let mut v: Vec<Variant> =
                [2, 5, 10, 15, 20, 25].iter().map(|&a| variant(format!("A{a}_T2"), with(a, 2, 4000))).collect();
            v.extend([3, 4, 5, 10, 15].iter().map(|&t| variant(format!("A5_T{t}"), with(5, t, 4000))));
            (v, 1, true)
        }
        "commcompare" => {
            let mut lo = with(2, 2, 4000);
            lo.reliable_comm = false;
            let mut hi = lo.clone();
            hi.reliable_comm = true;
            (
                vec![
                    variant(format!("divisor{}", lo.active_comm_divisor()), lo),
                    variant(format!("divisor{}", hi.active_comm_divisor()), hi),
                ],
                100,
                false,
            )
        }
        _ => return Err(ExperimentError::UnknownPreset(name.to_owned())),
    };
    Ok(ExperimentPreset { name: name.to_owned(), variants, n_reps, timing })
}

/// Formats with 9 significant digits, plain notation for moderate magnitudes.
pub fn format_float(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent");
    if !(-5..15).contains(&exp) {
        return sci;
    }
    let (sign, mantissa) = mantissa.strip_prefix('-').map_or(("", mantissa), |m| ("-", m));
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    let mut out = String::from(sign);
    if exp < 0 {
        out.push_str("0.");
        out.extend(std::iter::repeat_n('0', (-exp - 1) as usize));
        out.push_str(&digits);
    } else {
        let int_len = exp as usize + 1;
        out.push_str(&digits[..int_len]);
        out.push('.');
        out.push_str(&digits[int_len..]);
    }
    if out.contains('.') {
        out.truncate(out.trim_end_matches('0').trim_end_matches('.').len());
    }
    out
}

/// Seeds, timings and configuration of one variant, as echoed in `summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariantSummary {
    pub label: String,
    /// Rerunning this configuration with `n_reps` replications reproduces the variant.
    pub config: ScenarioConfig,
    pub n_reps: usize,
    pub seeds: Vec<u64>,
    pub mean_st_s: f64,
    pub mean_apt_s: f64,
    pub terminal_m_k: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub preset: String,
    pub base_seed: u64,
    pub variants: Vec<VariantSummary>,
}

/// Everything a preset run produced, for callers that want more than the files.
#[derive(Debug)]
pub struct PresetOutput {
    pub summary: RunSummary,
    pub m_k: Vec<Vec<f64>>,
    pub results: Vec<Vec<ReplicationResult>>,
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy)]
pub struct PresetRun {
    pub base_seed: u64,
    pub parallelism: usize,
    pub log_raw: bool,
}

pub fn run_preset(preset: &ExperimentPreset, run: PresetRun, out_dir: &Path) -> Result<PresetOutput, ExperimentError> {
    if preset.n_reps == 0 {
        return Err(ExperimentError::NoReplications);
    }
    for v in &preset.variants {
        v.cfg.validate()?;
    }
    fs::create_dir_all(out_dir).map_err(|source| ExperimentError::Write { path: out_dir.to_owned(), source })?;

    let mut results = Vec::with_capacity(preset.variants.len());
    let mut m_k = Vec::with_capacity(preset.variants.len());
    let mut summaries = Vec::with_capacity(preset.variants.len());
    for (idx, v) in preset.variants.iter().enumerate() {
        let opts = RunOptions { keep_steps: run.log_raw, keep_first_trajectory: idx == 0 };
        let reps = run_replications(&v.cfg, preset.n_reps, run.base_seed, run.parallelism, opts);
        let series = median_min_distance(&reps, v.cfg.median_pooling);
        let n = reps.len() as f64;
        summaries.push(VariantSummary {
            label: v.label.clone(),
            config: ScenarioConfig { seed: run.base_seed, ..v.cfg.clone() },
            n_reps: preset.n_reps,
            seeds: reps.iter().map(|r| r.seed).collect(),
            mean_st_s: reps.iter().map(|r| r.wall_time_s).sum::<f64>() / n,
            mean_apt_s: reps.iter().map(|r| r.mean_apt_s).sum::<f64>() / n,
            terminal_m_k: series.last().copied().unwrap_or(f64::NAN),
        });
        m_k.push(series);
        results.push(reps);
    }
    let summary = RunSummary { preset: preset.name.clone(), base_seed: run.base_seed, variants: summaries };

    let mut files = Vec::new();
    let mut emit = |name: &str, body: String| -> Result<(), ExperimentError> {
        let path = out_dir.join(name);
        fs::write(&path, body).map_err(|source| ExperimentError::Write { path: path.clone(), source })?;
        files.push(path);
        Ok(())
    };
    emit("trajectories.csv", trajectories_csv(&preset.variants[0].cfg, &results[0][0]))?;
    emit("metrics.csv", metrics_csv(preset, &m_k))?;
    emit("summary.json", serde_json::to_string_pretty(&summary)? + "\n")?;
    if preset.timing {
        emit("timing.csv", timing_csv(&summary))?;
    }
    if run.log_raw {
        let (dist, fim) = raw_csv(preset, &results);
        emit("raw.csv", dist)?;
        emit("raw_fim.csv", fim)?;
    }
    Ok(PresetOutput { summary, m_k, results, files })
}

fn trajectories_csv(cfg: &ScenarioConfig, rep: &ReplicationResult) -> String {
    let mut s = String::from("k,entity,kind,e,n,u\n");
    let Some(frames) = &rep.trajectory else { return s };
    for (k, frame) in frames.iter().enumerate().skip(1) {
        for (idx, p) in frame.iter().enumerate() {
            let (kind, id) = if idx < cfg.n_targets { ("target", idx) } else { ("agent", idx - cfg.n_targets) };
            let _ = writeln!(s, "{k},{id},{kind},{},{},{}", format_float(p.e), format_float(p.n), format_float(p.u));
        }
    }
    s
}

fn metrics_csv(preset: &ExperimentPreset, m_k: &[Vec<f64>]) -> String {
    let mut s = String::from("k");
    for v in &preset.variants {
        let _ = write!(s, ",m_k_{}", v.label);
    }
    s.push('\n');
    let n_steps = m_k.iter().map(Vec::len).max().unwrap_or(0);
    for k in 0..n_steps {
        let _ = write!(s, "{}", k + 1);
        for series in m_k {
            s.push(',');
            if let Some(x) = series.get(k) {
                s.push_str(&format_float(*x));
            }
        }
        s.push('\n');
    }
    s
}

fn timing_csv(summary: &RunSummary) -> String {
    let mut s = String::from("A,T,mean_st_s,mean_apt_s\n");
    for v in &summary.variants {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            v.config.n_agents,
            v.config.n_targets,
            format_float(v.mean_st_s),
            format_float(v.mean_apt_s)
        );
    }
    s
}

fn raw_csv(preset: &ExperimentPreset, results: &[Vec<ReplicationResult>]) -> (String, String) {
    let mut dist = String::from("variant,replication,seed,k,target,min_distance\n");
    let mut fim = String::from("variant,replication,k,agent,target,log_det_fim\n");
    for (v, reps) in preset.variants.iter().zip(results) {
        for (r, rep) in reps.iter().enumerate() {
            for (k, row) in rep.min_distances.iter().enumerate() {
                for (i, d) in row.iter().enumerate() {
                    let _ = writeln!(dist, "{},{r},{},{},{i},{}", v.label, rep.seed, k + 1, format_float(*d));
                }
            }
            for m in rep.steps.iter().flatten() {
                for (j, per_target) in m.log_det_fim.iter().enumerate() {
                    for (i, l) in per_target.iter().enumerate() {
                        let cell = l.map(format_float).unwrap_or_default();
                        let _ = writeln!(fim, "{},{r},{},{j},{i},{cell}", v.label, m.k);
                    }
                }
            }
        }
    }
    (dist, fim)
}
