//! Oracles and random instances shared by the integration suites.
#![allow(dead_code)]

pub mod filter;

use std::f64::consts::PI;

use cso_swarm::decision::{dfhat_dgamma, dfhat_dyu, dlhat_dgamma, dlhat_dyu, GradientForm};
use cso_swarm::ekf2::{NoiseModel, StateVector};
use cso_swarm::information::{
    estimated_loss, predicted_postaction_fim, ActionVector, Fim, FisherView, LossContext, PeerFisher, PeerPrediction,
    SimulatedTrueState,
};
use cso_swarm::measurement::{hessians, jacobian, measure_relative, wrap_angle, EnuVector};
use nalgebra::{Matrix3x6, Matrix6};
use rand::Rng;

pub const FD_STEP: f64 = 1e-6;

/// A relative vector with range in `[r_lo, r_hi]` and `|Δu/r| ≤ 0.95`.
pub fn random_rel<R: Rng>(rng: &mut R, r_lo: f64, r_hi: f64) -> EnuVector {
    let r = rng.random_range(r_lo..=r_hi);
    let c: f64 = rng.random_range(-0.95..=0.95);
    let az = rng.random_range(-PI..PI);
    let s = (1.0 - c * c).sqrt();
    EnuVector::new(r * s * az.cos(), r * s * az.sin(), r * c)
}

pub fn random_spd<R: Rng>(rng: &mut R, scale: f64) -> Fim {
    let a = Matrix6::from_fn(|_, _| rng.random_range(-1.0..1.0));
    (a * a.transpose() + Fim::identity() * 0.5) * scale
}

fn max_abs(m: impl IntoIterator<Item = f64>) -> f64 {
    m.into_iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Central differences of the measurement in the target position.
pub fn fd_jacobian(rel: EnuVector) -> Matrix3x6<f64> {
    let mut out = Matrix3x6::zeros();
    for c in 0..3 {
        let mut d = EnuVector::ZERO;
        match c {
            0 => d.e = FD_STEP,
            1 => d.n = FD_STEP,
            _ => d.u = FD_STEP,
        }
        let hi = measure_relative(rel + d).unwrap();
        let lo = measure_relative(rel - d).unwrap();
        out[(0, c)] = (hi.r - lo.r) / (2.0 * FD_STEP);
        out[(1, c)] = wrap_angle(hi.phi - lo.phi) / (2.0 * FD_STEP);
        out[(2, c)] = (hi.theta - lo.theta) / (2.0 * FD_STEP);
    }
    out
}

/// Central differences of Jacobian row `l` in the target position.
pub fn fd_hessian(rel: EnuVector, l: usize) -> Matrix6<f64> {
    let mut out = Matrix6::zeros();
    for c in 0..3 {
        let mut d = EnuVector::ZERO;
        match c {
            0 => d.e = FD_STEP,
            1 => d.n = FD_STEP,
            _ => d.u = FD_STEP,
        }
        let hi = jacobian(rel + d).unwrap();
        let lo = jacobian(rel - d).unwrap();
        for b in 0..6 {
            out[(c, b)] = (hi[(l, b)] - lo[(l, b)]) / (2.0 * FD_STEP);
        }
    }
    out
}

/// Worst normwise relative error of the analytic Jacobian over `n` random geometries.
pub fn jacobian_oracle_error<R: Rng>(rng: &mut R, n: usize) -> f64 {
    (0..n)
        .map(|_| {
            let rel = random_rel(rng, 0.5, 50.0);
            let fd = fd_jacobian(rel);
            let an = jacobian(rel).unwrap();
            max_abs((an - fd).iter().copied()) / max_abs(fd.iter().copied())
        })
        .fold(0.0, f64::max)
}

pub fn hessian_oracle_error<R: Rng>(rng: &mut R, n: usize) -> f64 {
    (0..n)
        .map(|_| {
            let rel = random_rel(rng, 0.5, 50.0);
            let an = hessians(rel).unwrap();
            (0..3)
                .map(|l| {
                    let fd = fd_hessian(rel, l);
                    max_abs((an.0[l] - fd).iter().copied()) / max_abs(fd.iter().copied())
                })
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// A self-contained decision snapshot: one agent, some targets, some peers.
pub struct Snapshot {
    pub view: FisherView,
    pub own_position: EnuVector,
    pub peers: Vec<PeerPrediction>,
    pub sims: Vec<Option<SimulatedTrueState>>,
    pub noise: NoiseModel,
    pub action: ActionVector,
}

impl Snapshot {
    pub fn random<R: Rng>(rng: &mut R, n_targets: usize, n_peers: usize) -> Self {
        let own_position = EnuVector::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
        let action = ActionVector::new(rng.random_range(-PI..PI), own_position.u + rng.random_range(-1.0..1.0));
        let after = own_position + EnuVector::new(action.gamma.cos(), action.gamma.sin(), 0.0);
        let after = EnuVector { u: action.y_u, ..after };
        let sims = (0..n_targets)
            .map(|_| {
                let p = after + random_rel(rng, 1.0, 12.0);
                Some(SimulatedTrueState(StateVector::new(p.e, p.n, p.u, 0.0, 0.0, 0.0)))
            })
            .collect::<Vec<_>>();
        let own = (0..n_targets)
            .map(|_| {
                let scale = rng.random_range(1.0..50.0);
                Some(random_spd(rng, scale))
            })
            .collect();
        let mut peer_fishers = Vec::new();
        let mut peers = Vec::new();
        for l in 0..n_peers {
            // keep every peer clear of the poles of every target
            let pos = loop {
                let cand = EnuVector::new(rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0));
                let clear = sims.iter().flatten().all(|s| {
                    let rel = s.position() - cand;
                    rel.norm() > 1.0 && (rel.u / rel.norm()).abs() < 0.95
                });
                if clear {
                    break cand;
                }
            };
            peers.push(PeerPrediction { peer: l + 1, action: ActionVector::new(0.0, pos.u), position: pos });
            peer_fishers.push(PeerFisher {
                peer: l + 1,
                fims: (0..n_targets).map(|_| Some(random_spd(rng, 10.0))).collect(),
                communicated: rng.random_bool(0.5),
            });
        }
        Snapshot {
            view: FisherView { own, peers: peer_fishers },
            own_position,
            peers,
            sims,
            noise: NoiseModel::from_sigmas(0.01, 0.01, 0.01),
            action,
        }
    }

    pub fn ctx(&self) -> LossContext<'_> {
        LossContext {
            view: &self.view,
            own_position: self.own_position,
            agent_speed: 1.0,
            peers: &self.peers,
            sim_states: &self.sims,
            noise: &self.noise,
            detect_scale: 100.0,
        }
    }
}

fn shifted(a: ActionVector, dg: f64, du: f64) -> ActionVector {
    ActionVector { gamma: a.gamma + dg, y_u: a.y_u + du }
}

/// Worst absolute error of `∂F̂/∂γ` and `∂F̂/∂y^U` against central differences.
pub fn dfhat_oracle_error(s: &Snapshot) -> f64 {
    let ctx = s.ctx();
    let mut worst: f64 = 0.0;
    for i in 0..s.sims.len() {
        let fd = |dg: f64, du: f64| {
            let hi = predicted_postaction_fim(&ctx, i, shifted(s.action, dg, du)).unwrap();
            let lo = predicted_postaction_fim(&ctx, i, shifted(s.action, -dg, -du)).unwrap();
            (hi - lo) / (2.0 * FD_STEP)
        };
        let g = dfhat_dgamma(&ctx, i, s.action).unwrap();
        let u = dfhat_dyu(&ctx, i, s.action).unwrap();
        worst = worst.max(max_abs((g - fd(FD_STEP, 0.0)).iter().copied()));
        worst = worst.max(max_abs((u - fd(0.0, FD_STEP)).iter().copied()));
    }
    worst
}

/// Worst relative error `|a − fd| / (|fd| + 1e−8)` of `∂L̂/∂γ` and `∂L̂/∂y^U`.
pub fn dlhat_oracle_error(s: &Snapshot) -> f64 {
    let ctx = s.ctx();
    let loss = |a: ActionVector| estimated_loss(&ctx, a).unwrap();
    let fd_g = (loss(shifted(s.action, FD_STEP, 0.0)) - loss(shifted(s.action, -FD_STEP, 0.0))) / (2.0 * FD_STEP);
    let fd_u = (loss(shifted(s.action, 0.0, FD_STEP)) - loss(shifted(s.action, 0.0, -FD_STEP))) / (2.0 * FD_STEP);
    let g = dlhat_dgamma(&ctx, s.action, GradientForm::LogDet).unwrap();
    let u = dlhat_dyu(&ctx, s.action, GradientForm::LogDet).unwrap();
    ((g - fd_g).abs() / (fd_g.abs() + 1e-8)).max((u - fd_u).abs() / (fd_u.abs() + 1e-8))
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}
