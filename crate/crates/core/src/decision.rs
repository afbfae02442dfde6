//! The DECIDE step.
//!
//! An agent at `y` choosing heading `γ` and vertical position `y^U` ends at
//! `y + v·(cos γ, sin γ, ·)` with its up coordinate set to `y^U`. Only its own
//! measurement term `π̂ ĤᵀR⁻¹Ĥ` in `F̂` depends on that choice, so
//!
//! ```text
//! ∂F̂/∂ξ = ∂π̂/∂ξ · ĤᵀR⁻¹Ĥ + π̂ (∂Ĥᵀ R⁻¹Ĥ + ĤᵀR⁻¹ ∂Ĥ)
//! ∂π̂/∂ξ = −π̂ · (2r̂/scale) · ∂r̂/∂ξ
//! ∂L̂/∂ξ = −Σ_i tr(F̂_i⁻¹ ∂F̂_i/∂ξ)
//! ```
//!
//! The relative vector moves as `∂Δ/∂γ = v·(sin γ, −cos γ, 0)` and
//! `∂Δ/∂y^U = (0, 0, −1)`; row `l` of `∂Ĥ` is `∇²h_l · ∂Δ`.
//!
//! The action update is one gradient step per coordinate, heading first:
//! `γ ← wrap(γ − a ∂L̂/∂γ)`, then `y^U ← y^U − b ∂L̂/∂y^U` evaluated at the new heading.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::ekf2::{predict, MotionModel, TrackEstimate};
use crate::information::{
    action_independent_part, embed_position_block, post_action_position, predicted_detection_prob, ActionVector, Fim,
    InformationError, LossContext, PeerPrediction, PeerSnapshot,
};
use crate::linalg::{inverse_spd, log_det_spd};
use crate::measurement::position_derivatives;

/// Which derivative of the information measure drives the step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientForm {
    /// `−Σ tr(F̂⁻¹ ∂F̂)`, the derivative of the log-determinant loss.
    #[default]
    LogDet,
    /// `−Σ |F̂| tr(F̂⁻¹ ∂F̂)`, the derivative of the determinant itself.
    Determinant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientStepConfig {
    pub a_k: f64,
    pub b_k: f64,
    pub seesaw_iters: usize,
    pub agent_speed: f64,
    pub form: GradientForm,
}

impl Default for GradientStepConfig {
    fn default() -> Self {
        Self { a_k: 1.0, b_k: 0.1, seesaw_iters: 2, agent_speed: 1.0, form: GradientForm::LogDet }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coordinate {
    Heading,
    Vertical,
}

/// The agent's own term of `F̂` and its derivatives with respect to both action coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OwnTerm {
    pub value: Fim,
    pub d_gamma: Fim,
    pub d_yu: Fim,
}

impl OwnTerm {
    fn zero() -> Self {
        Self { value: Fim::zeros(), d_gamma: Fim::zeros(), d_yu: Fim::zeros() }
    }

    fn derivative(&self, coord: Coordinate) -> &Fim {
        match coord {
            Coordinate::Heading => &self.d_gamma,
            Coordinate::Vertical => &self.d_yu,
        }
    }
}

/// `π̂ ĤᵀR⁻¹Ĥ` for the agent's own post-action position and its action derivatives.
///
/// Returns `None` without a track; a singular geometry contributes zero.
pub fn own_term(ctx: &LossContext<'_>, target: usize, action: ActionVector) -> Option<OwnTerm> {
    let sim = ctx.sim_states.get(target).copied().flatten()?;
    let rel = sim.position() - ctx.post_action_position(action);
    let Ok((jac, hess)) = position_derivatives(rel) else {
        return Some(OwnTerm::zero());
    };
    let w = ctx.noise.information();
    let pi = predicted_detection_prob(rel, ctx.detect_scale);
    let info = jac.transpose() * w * jac;
    let delta = rel.to_vector();

    let d_rel_gamma = heading_sensitivity(action.gamma, ctx.agent_speed);
    let d_rel_yu = Vector3::new(0.0, 0.0, -1.0);

    let r = delta.norm();
    let directional = |d_rel: &Vector3<f64>| -> Matrix3<f64> {
        let d_pi = detection_prob_derivative(pi, r, range_derivative(&delta, d_rel), ctx.detect_scale);
        let mut d_jac = Matrix3::zeros();
        for (l, h) in hess.iter().enumerate() {
            d_jac.set_row(l, &(h * d_rel).transpose());
        }
        let jt_w_djac = jac.transpose() * w * d_jac;
        info * d_pi + (jt_w_djac + jt_w_djac.transpose()) * pi
    };

    Some(OwnTerm {
        value: embed_position_block(&(info * pi)),
        d_gamma: embed_position_block(&directional(&d_rel_gamma)),
        d_yu: embed_position_block(&directional(&d_rel_yu)),
    })
}

/// `∂r̂ = Δ·∂Δ / r̂`.
pub fn range_derivative(rel: &Vector3<f64>, d_rel: &Vector3<f64>) -> f64 {
    rel.dot(d_rel) / rel.norm()
}

/// `∂π̂ = −π̂ · (2r̂/scale) · ∂r̂`.
pub fn detection_prob_derivative(pi: f64, range: f64, d_range: f64, detect_scale: f64) -> f64 {
    -pi * (2.0 * range / detect_scale) * d_range
}

/// Relative-vector velocity `∂Δ/∂γ` for an agent moving at `speed`.
pub fn heading_sensitivity(gamma: f64, speed: f64) -> Vector3<f64> {
    let (s, c) = gamma.sin_cos();
    Vector3::new(s, -c, 0.0) * speed
}

/// `∂F̂/∂γ` for one target.
pub fn dfhat_dgamma(ctx: &LossContext<'_>, target: usize, action: ActionVector) -> Option<Fim> {
    own_term(ctx, target, action).map(|t| t.d_gamma)
}

/// `∂F̂/∂y^U` for one target.
pub fn dfhat_dyu(ctx: &LossContext<'_>, target: usize, action: ActionVector) -> Option<Fim> {
    own_term(ctx, target, action).map(|t| t.d_yu)
}

/// `−Σ_i w_i tr(F̂_i⁻¹ ∂F̂_i)` with `w_i = 1` (log-det) or `|F̂_i|` (determinant).
pub fn loss_gradient_from(fhat: &[Fim], dfhat: &[Fim], form: GradientForm) -> Result<f64, InformationError> {
    let mut grad = 0.0;
    for (target, (f, df)) in fhat.iter().zip(dfhat).enumerate() {
        let inv = inverse_spd(f).ok_or(InformationError::NonPositiveDefiniteInformation { target })?;
        let trace = (inv * df).trace();
        let weight = match form {
            GradientForm::LogDet => 1.0,
            GradientForm::Determinant => {
                log_det_spd(f).ok_or(InformationError::NonPositiveDefiniteInformation { target })?.exp()
            }
        };
        grad -= weight * trace;
    }
    Ok(grad)
}

fn dlhat(ctx: &LossContext<'_>, action: ActionVector, form: GradientForm, coord: Coordinate) -> Result<f64, InformationError> {
    let mut fhat = Vec::with_capacity(ctx.view.n_targets());
    let mut dfhat = Vec::with_capacity(ctx.view.n_targets());
    for target in 0..ctx.view.n_targets() {
        let (Some(base), Some(term)) = (action_independent_part(ctx, target), own_term(ctx, target, action)) else {
            continue;
        };
        fhat.push(base + term.value);
        dfhat.push(*term.derivative(coord));
    }
    loss_gradient_from(&fhat, &dfhat, form)
}

/// `∂L̂/∂γ` at `action`.
pub fn dlhat_dgamma(ctx: &LossContext<'_>, action: ActionVector, form: GradientForm) -> Result<f64, InformationError> {
    dlhat(ctx, action, form, Coordinate::Heading)
}

/// `∂L̂/∂y^U` at `action`.
pub fn dlhat_dyu(ctx: &LossContext<'_>, action: ActionVector, form: GradientForm) -> Result<f64, InformationError> {
    dlhat(ctx, action, form, Coordinate::Vertical)
}

/// One stochastic-gradient improvement of the agent's action.
///
/// Without any track, or when a gradient cannot be evaluated, the
/// corresponding coordinate is held.
pub fn decide(ctx: &LossContext<'_>, previous: ActionVector, cfg: &GradientStepConfig) -> ActionVector {
    if !ctx.view.has_any_track() {
        return previous;
    }
    let gamma = match dlhat_dgamma(ctx, previous, cfg.form) {
        Ok(g) if g.is_finite() => previous.gamma - cfg.a_k * g,
        _ => previous.gamma,
    };
    let turned = ActionVector::new(gamma, previous.y_u);
    let y_u = match dlhat_dyu(ctx, turned, cfg.form) {
        Ok(g) if g.is_finite() => previous.y_u - cfg.b_k * g,
        _ => previous.y_u,
    };
    ActionVector::new(gamma, y_u)
}

/// Cyclic block-coordinate improvement.
///
/// For each of `iters` sweeps, every block in slice order is replaced by
/// `improve(j, blocks)`, which sees the most recent value of every other
/// block. `on_update(j, blocks)` runs after each sub-update.
pub fn seesaw<B: Clone>(
    blocks: &mut [B],
    iters: usize,
    mut improve: impl FnMut(usize, &[B]) -> B,
    mut on_update: impl FnMut(usize, &[B]),
) {
    for _ in 0..iters {
        for j in 0..blocks.len() {
            let next = improve(j, blocks);
            blocks[j] = next;
            on_update(j, blocks);
        }
    }
}

/// Where a peer that has gone quiet is expected to be after this step:
/// its last reported position advanced once along its last reported heading,
/// vertical position held.
pub fn predict_peer_action(snapshot: &PeerSnapshot, agent_speed: f64) -> PeerPrediction {
    PeerPrediction {
        peer: snapshot.peer,
        action: snapshot.action,
        position: post_action_position(snapshot.position, snapshot.action, agent_speed),
    }
}

pub fn predict_peer_actions(snapshots: &[PeerSnapshot], agent_speed: f64) -> Vec<PeerPrediction> {
    snapshots.iter().map(|s| predict_peer_action(s, agent_speed)).collect()
}

/// Constant-velocity one-step prediction of every track.
pub fn predict_targets(tracks: &[Option<TrackEstimate>], model: &MotionModel) -> Vec<Option<TrackEstimate>> {
    tracks.iter().map(|t| t.as_ref().map(|t| predict(t, model))).collect()
}
