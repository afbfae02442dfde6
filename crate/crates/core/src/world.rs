//! Ground truth: scenario constants, target and agent motion, and the
//! stochastic detection and communication draws.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decision::{GradientForm, GradientStepConfig};
use crate::ekf2::{MotionModel, NoiseModel};
use crate::information::{post_action_position, ActionVector};
use crate::measurement::{wrap_angle, EnuVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, reason: reason.into() }
}

/// How `m_k` aggregates across replications and targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MedianPooling {
    /// Median over every (replication, target) pair.
    #[default]
    Pooled,
    /// Median over replications for each target, then averaged over targets.
    PerTarget,
}

/// Every model constant of a scenario. Absent JSON fields take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_agents: usize,
    pub n_targets: usize,
    /// Partition of agent indices into groups; `None` puts every agent in one group.
    pub groups: Option<Vec<Vec<usize>>>,
    pub n_steps: usize,
    pub dt: f64,
    pub q_diag: [f64; 6],
    pub sigma_r: f64,
    pub sigma_phi: f64,
    pub sigma_theta: f64,
    pub detect_scale: f64,
    pub comm_divisor: f64,
    pub comm_divisor_alt: f64,
    /// Use `comm_divisor_alt` instead of `comm_divisor`.
    pub reliable_comm: bool,
    pub a_k: f64,
    pub b_k: f64,
    pub seesaw_iters: usize,
    pub agent_speed: f64,
    pub target_step: f64,
    pub target_vert_range: f64,
    pub init_cube_halfwidth: f64,
    pub track_init_var: f64,
    pub gradient_form: GradientForm,
    pub median_pooling: MedianPooling,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_agents: 2,
            n_targets: 2,
            groups: None,
            n_steps: 4000,
            dt: 0.1,
            q_diag: [0.03, 0.03, 0.03, 0.01, 0.01, 0.01],
            sigma_r: 0.01,
            sigma_phi: 0.01,
            sigma_theta: 0.01,
            detect_scale: 100.0,
            comm_divisor: 200.0,
            comm_divisor_alt: 2000.0,
            reliable_comm: false,
            a_k: 1.0,
            b_k: 0.1,
            seesaw_iters: 2,
            agent_speed: 1.0,
            target_step: 0.1,
            target_vert_range: 0.15,
            init_cube_halfwidth: 4.0,
            track_init_var: 1.0,
            gradient_form: GradientForm::LogDet,
            median_pooling: MedianPooling::Pooled,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    /// `n_groups` disjoint groups of `size` consecutive agents.
    pub fn with_equal_groups(mut self, n_groups: usize, size: usize) -> Self {
        self.n_agents = n_groups * size;
        self.groups = Some((0..n_groups).map(|g| (g * size..(g + 1) * size).collect()).collect());
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_targets == 0 {
            return Err(invalid("n_targets", "must be at least 1"));
        }
        let positive = [
            ("dt", self.dt),
            ("sigma_r", self.sigma_r),
            ("sigma_phi", self.sigma_phi),
            ("sigma_theta", self.sigma_theta),
            ("detect_scale", self.detect_scale),
            ("comm_divisor", self.comm_divisor),
            ("comm_divisor_alt", self.comm_divisor_alt),
            ("a_k", self.a_k),
            ("b_k", self.b_k),
            ("agent_speed", self.agent_speed),
            ("target_step", self.target_step),
            ("init_cube_halfwidth", self.init_cube_halfwidth),
            ("track_init_var", self.track_init_var),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(field, format!("must be finite and positive, got {v}")));
            }
        }
        if !(self.target_vert_range.is_finite() && self.target_vert_range >= 0.0) {
            return Err(invalid("target_vert_range", "must be finite and non-negative"));
        }
        if self.q_diag.iter().any(|q| !(q.is_finite() && *q >= 0.0)) {
            return Err(invalid("q_diag", "entries must be finite and non-negative"));
        }
        if self.seesaw_iters == 0 {
            return Err(invalid("seesaw_iters", "must be at least 1"));
        }
        if let Some(groups) = &self.groups {
            let mut seen = vec![false; self.n_agents];
            for g in groups {
                if g.is_empty() {
                    return Err(invalid("groups", "groups must be non-empty"));
                }
                for &a in g {
                    if a >= self.n_agents {
                        return Err(invalid("groups", format!("agent {a} out of range for {} agents", self.n_agents)));
                    }
                    if std::mem::replace(&mut seen[a], true) {
                        return Err(invalid("groups", format!("agent {a} appears twice")));
                    }
                }
            }
            if let Some(missing) = seen.iter().position(|s| !s) {
                return Err(invalid("groups", format!("agent {missing} is in no group")));
            }
        }
        Ok(())
    }

    /// Groups with members in ascending order; one group of everyone by default.
    pub fn group_members(&self) -> Vec<Vec<usize>> {
        match &self.groups {
            Some(groups) => groups
                .iter()
                .map(|g| {
                    let mut g = g.clone();
                    g.sort_unstable();
                    g
                })
                .collect(),
            None if self.n_agents == 0 => vec![],
            None => vec![(0..self.n_agents).collect()],
        }
    }

    pub fn active_comm_divisor(&self) -> f64 {
        if self.reliable_comm {
            self.comm_divisor_alt
        } else {
            self.comm_divisor
        }
    }

    pub fn motion_model(&self) -> MotionModel {
        MotionModel::constant_velocity(self.dt, self.q_diag)
    }

    pub fn noise_model(&self) -> NoiseModel {
        NoiseModel::from_sigmas(self.sigma_r, self.sigma_phi, self.sigma_theta)
    }

    pub fn gradient_config(&self) -> GradientStepConfig {
        GradientStepConfig {
            a_k: self.a_k,
            b_k: self.b_k,
            seesaw_iters: self.seesaw_iters,
            agent_speed: self.agent_speed,
            form: self.gradient_form,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetTruth {
    pub pos: EnuVector,
    /// Last per-step displacement divided by `dt`.
    pub velocity: EnuVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentTruth {
    pub pos: EnuVector,
    pub gamma: f64,
    pub group: usize,
}

fn uniform_point<R: Rng + ?Sized>(rng: &mut R, half: f64) -> EnuVector {
    EnuVector::new(rng.random_range(-half..=half), rng.random_range(-half..=half), rng.random_range(-half..=half))
}

/// Uniform initial layout in the cube `[−h, h]³`, uniform agent headings.
pub fn init_scenario<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> (Vec<TargetTruth>, Vec<AgentTruth>) {
    let half = cfg.init_cube_halfwidth;
    let targets = (0..cfg.n_targets)
        .map(|_| TargetTruth { pos: uniform_point(rng, half), velocity: EnuVector::ZERO })
        .collect();
    let mut group_of = vec![0; cfg.n_agents];
    for (g, members) in cfg.group_members().iter().enumerate() {
        for &a in members {
            group_of[a] = g;
        }
    }
    let agents = group_of
        .into_iter()
        .map(|group| {
            let pos = uniform_point(rng, half);
            let gamma = wrap_angle(rng.random_range(0.0..2.0 * PI));
            AgentTruth { pos, gamma, group }
        })
        .collect();
    (targets, agents)
}

/// Random-heading horizontal step of fixed length plus a uniform vertical jitter.
pub fn step_target<R: Rng + ?Sized>(t: &TargetTruth, cfg: &ScenarioConfig, rng: &mut R) -> TargetTruth {
    let heading = rng.random_range(0.0..2.0 * PI);
    let v = cfg.target_vert_range;
    let du = if v > 0.0 { rng.random_range(-v..=v) } else { 0.0 };
    let (s, c) = heading.sin_cos();
    let disp = EnuVector::new(cfg.target_step * c, cfg.target_step * s, du);
    TargetTruth { pos: t.pos + disp, velocity: disp * (1.0 / cfg.dt) }
}

pub fn step_agent(a: &AgentTruth, action: ActionVector, cfg: &ScenarioConfig) -> AgentTruth {
    AgentTruth { pos: post_action_position(a.pos, action, cfg.agent_speed), gamma: wrap_angle(action.gamma), group: a.group }
}

/// Bernoulli draw with probability `exp(−d²/scale)`.
pub fn draw_detection<R: Rng + ?Sized>(agent_pos: EnuVector, target_pos: EnuVector, cfg: &ScenarioConfig, rng: &mut R) -> bool {
    bernoulli_decay(agent_pos, target_pos, cfg.detect_scale, rng)
}

/// Bernoulli draw with probability `exp(−d²/divisor)` for one directed link.
pub fn draw_communication<R: Rng + ?Sized>(pos_j: EnuVector, pos_l: EnuVector, divisor: f64, rng: &mut R) -> bool {
    bernoulli_decay(pos_j, pos_l, divisor, rng)
}

pub fn communication_prob(pos_j: EnuVector, pos_l: EnuVector, divisor: f64) -> f64 {
    (-(pos_j - pos_l).norm_squared() / divisor).exp()
}

fn bernoulli_decay<R: Rng + ?Sized>(a: EnuVector, b: EnuVector, scale: f64, rng: &mut R) -> bool {
    // always consume exactly one draw so streams stay aligned
    let u: f64 = rng.random();
    u < communication_prob(a, b, scale)
}
