//! Fisher-information bookkeeping and the information-gain loss.
//!
//! Each agent sums what it and its peers know about a target under an
//! independence assumption, so Fisher information matrices simply add:
//!
//! ```text
//! F_pre(i)  = F_own(i) + Σ_{l communicated} F_l(i)
//! F̂_post(i) = F_pre(i) + π̂_own · ĤᵀR⁻¹Ĥ + Σ_{l known} π̂_l · Ĥ_lᵀR⁻¹Ĥ_l
//! L̂         = −Σ_i [ log|F̂_post(i)| − log|F_pre(i)| ]
//! ```
//!
//! The Jacobians `Ĥ` and detection probabilities `π̂` are evaluated at a
//! *simulated true state*: the one-step prediction plus a Gaussian draw with
//! the prediction covariance.

use nalgebra::{Matrix3, Matrix6};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ekf2::{NoiseModel, StateVector, TrackEstimate};
use crate::linalg::{log_det_spd, psd_sqrt};
use crate::measurement::{position_jacobian, wrap_angle, EnuVector};

pub type Fim = Matrix6<f64>;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum InformationError {
    #[error("information matrix for target {target} is not positive definite")]
    NonPositiveDefiniteInformation { target: usize },
    #[error("pre- and post-action totals cover different numbers of targets ({pre} vs {post})")]
    LengthMismatch { pre: usize, post: usize },
}

/// An agent's decision: heading `γ` (radians) and vertical position `y^U`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ActionVector {
    pub gamma: f64,
    pub y_u: f64,
}

impl ActionVector {
    pub fn new(gamma: f64, y_u: f64) -> Self {
        Self { gamma: wrap_angle(gamma), y_u }
    }
}

/// Position reached from `pos` after executing `action` at horizontal `speed`.
pub fn post_action_position(pos: EnuVector, action: ActionVector, speed: f64) -> EnuVector {
    let (s, c) = action.gamma.sin_cos();
    EnuVector::new(pos.e + speed * c, pos.n + speed * s, action.y_u)
}

/// A draw of the target state consistent with the filter's prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulatedTrueState(pub StateVector);

impl SimulatedTrueState {
    pub fn position(&self) -> EnuVector {
        EnuVector::new(self.0[0], self.0[1], self.0[2])
    }
}

/// What a peer last told this agent.
#[derive(Debug, Clone, PartialEq)]
pub struct PeerFisher {
    pub peer: usize,
    /// The peer's pre-action information per target (`None` where it has no track).
    pub fims: Vec<Option<Fim>>,
    /// Whether the peer reached this agent in the latest communication round.
    pub communicated: bool,
}

/// The message a peer delivers on a successful link.
#[derive(Debug, Clone, PartialEq)]
pub struct PeerSnapshot {
    pub peer: usize,
    /// Time step at which the message was sent.
    pub step: usize,
    pub position: EnuVector,
    /// The sender's most recent executed action.
    pub action: ActionVector,
    pub tracks: Vec<Option<TrackEstimate>>,
    /// One-step-ahead information `P⁻¹` per target.
    pub fims: Vec<Option<Fim>>,
}

/// One agent's view of the pre-action information on every target.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FisherView {
    /// The agent's own pre-action information per target; `None` before first detection.
    pub own: Vec<Option<Fim>>,
    pub peers: Vec<PeerFisher>,
}

impl FisherView {
    pub fn n_targets(&self) -> usize {
        self.own.len()
    }

    pub fn has_any_track(&self) -> bool {
        self.own.iter().any(Option::is_some)
    }

    /// Total pre-action information on `target`: own plus communicated peers.
    pub fn preaction_total(&self, target: usize) -> Option<Fim> {
        let own = self.own.get(target)?.as_ref()?;
        let mut parts = vec![*own];
        parts.extend(
            self.peers
                .iter()
                .filter(|p| p.communicated)
                .filter_map(|p| p.fims.get(target).copied().flatten()),
        );
        Some(total_preaction_fim(&parts))
    }
}

/// A peer's predicted action and the position it will have after taking it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeerPrediction {
    pub peer: usize,
    pub action: ActionVector,
    pub position: EnuVector,
}

/// Everything one agent needs to evaluate `F̂` and `L̂` as a function of its own action.
#[derive(Debug, Clone, Copy)]
pub struct LossContext<'a> {
    pub view: &'a FisherView,
    /// Current (pre-action) position of the deciding agent.
    pub own_position: EnuVector,
    pub agent_speed: f64,
    /// Predicted post-action positions of peers this agent knows about.
    pub peers: &'a [PeerPrediction],
    /// One simulated true state per target; `None` where the agent has no track.
    pub sim_states: &'a [Option<SimulatedTrueState>],
    pub noise: &'a NoiseModel,
    pub detect_scale: f64,
}

impl LossContext<'_> {
    pub fn post_action_position(&self, action: ActionVector) -> EnuVector {
        post_action_position(self.own_position, action, self.agent_speed)
    }
}

/// Element-wise sum of per-agent information matrices.
pub fn total_preaction_fim(per_agent_fims: &[Fim]) -> Fim {
    per_agent_fims.iter().fold(Fim::zeros(), |acc, f| acc + f)
}

/// `x̂ + ε`, `ε ~ N(0, P)`.
pub fn sample_simulated_true_state<R: Rng + ?Sized>(est: &TrackEstimate, rng: &mut R) -> SimulatedTrueState {
    let z = StateVector::from_fn(|_, _| rng.sample(StandardNormal));
    let root = psd_sqrt(&est.p);
    SimulatedTrueState(est.x_hat + root * z)
}

/// `exp(−|Δ|²/scale)`.
pub fn predicted_detection_prob(rel: EnuVector, scale: f64) -> f64 {
    (-rel.norm_squared() / scale).exp()
}

/// `ĤᵀR⁻¹Ĥ` for the relative vector `rel`, or `None` at a singular geometry.
pub fn measurement_information(rel: EnuVector, noise: &NoiseModel) -> Option<Fim> {
    let jac = position_jacobian(rel).ok()?;
    Some(embed_position_block(&(jac.transpose() * noise.information() * jac)))
}

/// `π̂ · ĤᵀR⁻¹Ĥ` for an observer at `observer` looking at `target`.
pub fn detection_information(target: EnuVector, observer: EnuVector, noise: &NoiseModel, detect_scale: f64) -> Option<Fim> {
    let rel = target - observer;
    let info = measurement_information(rel, noise)?;
    Some(info * predicted_detection_prob(rel, detect_scale))
}

pub(crate) fn embed_position_block(block: &Matrix3<f64>) -> Fim {
    let mut m = Fim::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(block);
    m
}

/// Sum of the terms of `F̂` that do not depend on the deciding agent's action.
pub(crate) fn action_independent_part(ctx: &LossContext<'_>, target: usize) -> Option<Fim> {
    let sim = ctx.sim_states.get(target).copied().flatten()?;
    let mut total = ctx.view.preaction_total(target)?;
    let s = sim.position();
    for peer in ctx.peers {
        if let Some(term) = detection_information(s, peer.position, ctx.noise, ctx.detect_scale) {
            total += term;
        }
    }
    Some(total)
}

/// Predicted post-action information on `target` if the agent takes `own_action`.
///
/// Returns `None` when the agent holds no track on the target.
pub fn predicted_postaction_fim(ctx: &LossContext<'_>, target: usize, own_action: ActionVector) -> Option<Fim> {
    let mut total = action_independent_part(ctx, target)?;
    let sim = ctx.sim_states[target]?;
    if let Some(term) = detection_information(sim.position(), ctx.post_action_position(own_action), ctx.noise, ctx.detect_scale) {
        total += term;
    }
    Some(total)
}

/// `L̂ = −Σ_i [log|F̂_post(i)| − log|F_pre(i)|]` over the targets the agent tracks.
pub fn estimated_loss(ctx: &LossContext<'_>, own_action: ActionVector) -> Result<f64, InformationError> {
    let mut loss = 0.0;
    for target in 0..ctx.view.n_targets() {
        let (Some(pre), Some(post)) = (ctx.view.preaction_total(target), predicted_postaction_fim(ctx, target, own_action))
        else {
            continue;
        };
        loss -= log_det_gain(&pre, &post, target)?;
    }
    Ok(loss)
}

/// `−Σ_i [log|post_i| − log|pre_i|]`.
pub fn true_loss(pre_totals: &[Fim], post_totals: &[Fim]) -> Result<f64, InformationError> {
    if pre_totals.len() != post_totals.len() {
        return Err(InformationError::LengthMismatch { pre: pre_totals.len(), post: post_totals.len() });
    }
    let mut loss = 0.0;
    for (target, (pre, post)) in pre_totals.iter().zip(post_totals).enumerate() {
        loss -= log_det_gain(pre, post, target)?;
    }
    Ok(loss)
}

fn log_det_gain(pre: &Fim, post: &Fim, target: usize) -> Result<f64, InformationError> {
    let err = InformationError::NonPositiveDefiniteInformation { target };
    let post = log_det_spd(post).ok_or(err)?;
    let pre = log_det_spd(pre).ok_or(err)?;
    Ok(post - pre)
}
