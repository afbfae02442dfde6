//! The per-step sense / communicate / infer / decide / move loop and the
//! replicated Monte Carlo driver.

use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::decision::{decide, predict_peer_action, seesaw, GradientStepConfig};
use crate::ekf2::{fisher_contribution, predict, update, MotionModel, NoiseModel, Stage, TrackEstimate};
use crate::information::{
    post_action_position, sample_simulated_true_state, ActionVector, FisherView, LossContext, PeerFisher,
    PeerPrediction, PeerSnapshot, SimulatedTrueState,
};
use crate::linalg::log_det_spd;
use crate::measurement::{measure, wrap_angle, EnuVector, Measurement};
use crate::world::{
    draw_communication, draw_detection, init_scenario, step_agent, step_target, AgentTruth, MedianPooling,
    ScenarioConfig, TargetTruth,
};

/// What one step produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepMetrics {
    /// 1-based step index.
    pub k: usize,
    /// Per target: distance to the closest agent after this step's moves.
    pub min_distance: Vec<f64>,
    /// Per agent: wall-clock seconds spent inferring and deciding.
    pub agent_time_s: Vec<f64>,
    /// Per agent, per target: `log|P⁻¹|` of the updated track, where one exists.
    pub log_det_fim: Vec<Vec<Option<f64>>>,
    /// Successful directed links `(sender, receiver)`.
    pub links: Vec<(usize, usize)>,
}

/// Mutable per-agent state carried between steps.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub truth: AgentTruth,
    pub last_action: ActionVector,
    pub tracks: Vec<Option<TrackEstimate>>,
    /// Latest snapshot received from each agent, indexed by sender.
    pub inbox: Vec<Option<PeerSnapshot>>,
    /// Senders heard from during the current step.
    pub heard: Vec<bool>,
}

impl AgentState {
    fn new(truth: AgentTruth, n_agents: usize, n_targets: usize) -> Self {
        Self {
            last_action: ActionVector::new(truth.gamma, truth.pos.u),
            truth,
            tracks: vec![None; n_targets],
            inbox: vec![None; n_agents],
            heard: vec![false; n_agents],
        }
    }

    fn snapshot(&self, id: usize, k: usize, model: &MotionModel) -> PeerSnapshot {
        PeerSnapshot {
            peer: id,
            step: k,
            position: self.truth.pos,
            action: self.last_action,
            tracks: self.tracks.clone(),
            fims: self
                .tracks
                .iter()
                .map(|t| t.as_ref().and_then(|t| fisher_contribution(&predict(t, model)).ok()))
                .collect(),
        }
    }
}

/// One replication's world and agents.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub cfg: ScenarioConfig,
    pub targets: Vec<TargetTruth>,
    pub agents: Vec<AgentState>,
    pub k: usize,
    groups: Vec<Vec<usize>>,
    model: MotionModel,
    noise: NoiseModel,
    grad: GradientStepConfig,
    rng: ChaCha8Rng,
}

/// Per-agent inputs to the decision phase, fixed for the whole seesaw.
struct DecisionInputs {
    view: FisherView,
    sim_states: Vec<Option<SimulatedTrueState>>,
}

impl Simulation {
    pub fn new(cfg: &ScenarioConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (targets, agents) = init_scenario(cfg, &mut rng);
        let agents = agents.into_iter().map(|a| AgentState::new(a, cfg.n_agents, cfg.n_targets)).collect();
        Self {
            cfg: cfg.clone(),
            targets,
            agents,
            k: 0,
            groups: cfg.group_members(),
            model: cfg.motion_model(),
            noise: cfg.noise_model(),
            grad: cfg.gradient_config(),
            rng,
        }
    }

    pub fn min_distances(&self) -> Vec<f64> {
        self.targets
            .iter()
            .map(|t| self.agents.iter().map(|a| a.truth.pos.distance(t.pos)).fold(f64::INFINITY, f64::min))
            .collect()
    }

    /// Advances the world by one step.
    pub fn run_step(&mut self) -> StepMetrics {
        self.k += 1;
        let n_agents = self.agents.len();
        let mut agent_time_s = vec![0.0; n_agents];
        let mut links = Vec::new();
        for a in &mut self.agents {
            a.heard.iter_mut().for_each(|h| *h = false);
        }

        for (j, time) in agent_time_s.iter_mut().enumerate() {
            let detections = self.sense(j);
            self.communicate(j, &mut links);
            let t0 = Instant::now();
            self.infer(j, &detections);
            *time += t0.elapsed().as_secs_f64();
        }

        let mut actions: Vec<ActionVector> = self.agents.iter().map(|a| a.last_action).collect();
        for g in 0..self.groups.len() {
            self.decide_group(g, &mut actions, &mut agent_time_s);
        }

        for (a, action) in self.agents.iter_mut().zip(&actions) {
            a.truth = step_agent(&a.truth, *action, &self.cfg);
            a.last_action = *action;
        }
        for i in 0..self.targets.len() {
            self.targets[i] = step_target(&self.targets[i], &self.cfg, &mut self.rng);
        }

        let log_det_fim = self
            .agents
            .iter()
            .map(|a| a.tracks.iter().map(|t| t.as_ref().and_then(|t| log_det_spd(&t.p)).map(|l| -l)).collect())
            .collect();
        StepMetrics { k: self.k, min_distance: self.min_distances(), agent_time_s, log_det_fim, links }
    }

    fn sense(&mut self, j: usize) -> Vec<Option<Measurement>> {
        let pos = self.agents[j].truth.pos;
        let sigmas = self.noise.sigmas();
        let mut out = Vec::with_capacity(self.targets.len());
        for t in &self.targets {
            if !draw_detection(pos, t.pos, &self.cfg, &mut self.rng) {
                out.push(None);
                continue;
            }
            let v = Vector3::from_fn(|i, _| sigmas[i] * self.rng.sample::<f64, _>(StandardNormal));
            out.push(measure(t.pos, pos).ok().map(|h| Measurement {
                r: h.r + v[0],
                phi: wrap_angle(h.phi + v[1]),
                theta: h.theta + v[2],
            }));
        }
        out
    }

    fn communicate(&mut self, j: usize, links: &mut Vec<(usize, usize)>) {
        let group = self.agents[j].truth.group;
        let divisor = self.cfg.active_comm_divisor();
        let snapshot = self.agents[j].snapshot(j, self.k, &self.model);
        for &l in &self.groups[group] {
            if l == j {
                continue;
            }
            if draw_communication(self.agents[j].truth.pos, self.agents[l].truth.pos, divisor, &mut self.rng) {
                debug_assert_eq!(self.agents[l].truth.group, group);
                self.agents[l].inbox[j] = Some(snapshot.clone());
                self.agents[l].heard[j] = true;
                links.push((j, l));
            }
        }
    }

    fn infer(&mut self, j: usize, detections: &[Option<Measurement>]) {
        let agent = &mut self.agents[j];
        let pos = agent.truth.pos;
        for (track, z) in agent.tracks.iter_mut().zip(detections) {
            *track = match (track.take(), z) {
                (Some(t), z) => {
                    let pred = predict(&t, &self.model);
                    Some(
                        update(&pred, z.as_ref(), pos, &self.noise)
                            .unwrap_or(TrackEstimate { stage: Stage::Updated, ..pred }),
                    )
                }
                (None, Some(z)) => Some(TrackEstimate::from_first_detection(z, pos, self.cfg.track_init_var)),
                (None, None) => None,
            };
        }
    }

    fn decision_inputs(&mut self, j: usize) -> DecisionInputs {
        let mut own = Vec::with_capacity(self.targets.len());
        let mut sim_states = Vec::with_capacity(self.targets.len());
        for track in &self.agents[j].tracks {
            let pred = track.as_ref().map(|t| predict(t, &self.model));
            match pred.as_ref().and_then(|p| fisher_contribution(p).ok().map(|f| (p, f))) {
                Some((p, f)) => {
                    own.push(Some(f));
                    sim_states.push(Some(sample_simulated_true_state(p, &mut self.rng)));
                }
                None => {
                    own.push(None);
                    sim_states.push(None);
                }
            }
        }
        let agent = &self.agents[j];
        let peers = agent
            .inbox
            .iter()
            .flatten()
            .map(|s| PeerFisher { peer: s.peer, fims: s.fims.clone(), communicated: agent.heard[s.peer] })
            .collect();
        DecisionInputs { view: FisherView { own, peers }, sim_states }
    }

    fn decide_group(&mut self, g: usize, actions: &mut [ActionVector], agent_time_s: &mut [f64]) {
        let members = self.groups[g].clone();
        let mut inputs = Vec::with_capacity(members.len());
        for &j in &members {
            let t0 = Instant::now();
            inputs.push(self.decision_inputs(j));
            agent_time_s[j] += t0.elapsed().as_secs_f64();
        }

        let mut blocks: Vec<ActionVector> = members.iter().map(|&j| actions[j]).collect();
        let agents = &self.agents;
        let speed = self.cfg.agent_speed;
        seesaw(
            &mut blocks,
            self.cfg.seesaw_iters,
            |idx, blocks| {
                let t0 = Instant::now();
                let j = members[idx];
                let me = &agents[j];
                let peers: Vec<PeerPrediction> = members
                    .iter()
                    .enumerate()
                    .filter(|&(_, &l)| l != j)
                    .filter_map(|(li, &l)| {
                        let snap = me.inbox[l].as_ref()?;
                        Some(if me.heard[l] {
                            PeerPrediction {
                                peer: l,
                                action: blocks[li],
                                position: post_action_position(snap.position, blocks[li], speed),
                            }
                        } else {
                            predict_peer_action(snap, speed)
                        })
                    })
                    .collect();
                let ctx = LossContext {
                    view: &inputs[idx].view,
                    own_position: me.truth.pos,
                    agent_speed: speed,
                    peers: &peers,
                    sim_states: &inputs[idx].sim_states,
                    noise: &self.noise,
                    detect_scale: self.cfg.detect_scale,
                };
                let next = decide(&ctx, blocks[idx], &self.grad);
                agent_time_s[j] += t0.elapsed().as_secs_f64();
                next
            },
            |_, _| {},
        );
        for (idx, &j) in members.iter().enumerate() {
            actions[j] = blocks[idx];
        }
    }

    /// Positions of every target, then every agent.
    pub fn entity_positions(&self) -> Vec<EnuVector> {
        self.targets.iter().map(|t| t.pos).chain(self.agents.iter().map(|a| a.truth.pos)).collect()
    }
}

/// What to keep from each replication beyond the min-distance series.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub keep_steps: bool,
    /// Record entity positions for the first replication only.
    pub keep_first_trajectory: bool,
}

#[derive(Debug, Clone)]
pub struct ReplicationResult {
    pub seed: u64,
    /// `min_distances[k−1][i]`: target `i` to its closest agent after step `k`.
    pub min_distances: Vec<Vec<f64>>,
    pub steps: Option<Vec<StepMetrics>>,
    /// Entity positions (targets first) at steps `0..=n_steps`.
    pub trajectory: Option<Vec<Vec<EnuVector>>>,
    /// Whole-replication wall-clock seconds.
    pub wall_time_s: f64,
    /// Mean per-agent, per-step inference plus decision seconds.
    pub mean_apt_s: f64,
    pub final_targets: Vec<TargetTruth>,
    pub final_agents: Vec<AgentTruth>,
    pub final_tracks: Vec<Vec<Option<TrackEstimate>>>,
}

pub fn run_replication(cfg: &ScenarioConfig, seed: u64, keep_steps: bool, keep_trajectory: bool) -> ReplicationResult {
    let start = Instant::now();
    let mut sim = Simulation::new(cfg, seed);
    let mut min_distances = Vec::with_capacity(cfg.n_steps);
    let mut steps = keep_steps.then(|| Vec::with_capacity(cfg.n_steps));
    let mut trajectory = keep_trajectory.then(|| vec![sim.entity_positions()]);
    let mut apt_sum = 0.0;
    for _ in 0..cfg.n_steps {
        let m = sim.run_step();
        apt_sum += m.agent_time_s.iter().sum::<f64>();
        min_distances.push(m.min_distance.clone());
        if let Some(t) = trajectory.as_mut() {
            t.push(sim.entity_positions());
        }
        if let Some(s) = steps.as_mut() {
            s.push(m);
        }
    }
    let agent_steps = (cfg.n_agents * cfg.n_steps).max(1) as f64;
    ReplicationResult {
        seed,
        min_distances,
        steps,
        trajectory,
        wall_time_s: start.elapsed().as_secs_f64(),
        mean_apt_s: apt_sum / agent_steps,
        final_targets: sim.targets.clone(),
        final_agents: sim.agents.iter().map(|a| a.truth).collect(),
        final_tracks: sim.agents.into_iter().map(|a| a.tracks).collect(),
    }
}

/// Replication `r` uses seed `base_seed + r`; results come back in replication order
/// whatever the thread count.
pub fn run_replications(
    cfg: &ScenarioConfig,
    n_reps: usize,
    base_seed: u64,
    parallelism: usize,
    opts: RunOptions,
) -> Vec<ReplicationResult> {
    let run = |r: usize| {
        run_replication(cfg, base_seed.wrapping_add(r as u64), opts.keep_steps, opts.keep_first_trajectory && r == 0)
    };
    if parallelism <= 1 {
        return (0..n_reps).map(run).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(parallelism).build().expect("thread pool");
    pool.install(|| (0..n_reps).into_par_iter().map(run).collect())
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// The `m_k` series.
pub fn median_min_distance(results: &[ReplicationResult], pooling: MedianPooling) -> Vec<f64> {
    let Some(first) = results.first() else {
        return vec![];
    };
    let n_steps = results.iter().map(|r| r.min_distances.len()).min().unwrap_or(0);
    let n_targets = first.min_distances.first().map_or(0, Vec::len);
    (0..n_steps)
        .map(|k| match pooling {
            MedianPooling::Pooled => {
                let mut all: Vec<f64> = results.iter().flat_map(|r| r.min_distances[k].iter().copied()).collect();
                median(&mut all)
            }
            MedianPooling::PerTarget => {
                let per: f64 = (0..n_targets)
                    .map(|i| {
                        let mut col: Vec<f64> = results.iter().map(|r| r.min_distances[k][i]).collect();
                        median(&mut col)
                    })
                    .sum();
                per / n_targets as f64
            }
        })
        .collect()
}
