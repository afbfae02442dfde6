//! Second-order extended Kalman filter for one agent's estimate of one target.
//!
//! The time update is the linear constant-velocity model
//! `x̂ ← Φx̂`, `P ← ΦPΦᵀ + Q`. The measurement update keeps the Hessian
//! trace corrections of the range/azimuth/polar model:
//!
//! ```text
//! S[l,m] = (HPHᵀ + R)[l,m] + ½ tr(∇²h_l P ∇²h_m P)
//! u[l]   = z[l] − h(x̂)[l] − ½ tr(∇²h_l P)        (azimuth wrapped)
//! K      = PHᵀS⁻¹,  x̂ ← x̂ + Ku,  P ← (I − KH)P
//! ```
//!
//! The updated covariance is symmetrized and its eigenvalues floored at
//! [`COVARIANCE_FLOOR`].

use nalgebra::{Matrix3, Matrix3x6, Matrix6, SymmetricEigen, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{floor_eigenvalues, inverse_spd, symmetrize};
use crate::measurement::{
    embed_hessian, embed_jacobian, measure_relative, position_derivatives, wrap_angle, EnuVector, Measurement, MeasurementError,
};

pub const COVARIANCE_FLOOR: f64 = 1e-12;
/// Innovation covariances with a larger condition number are rejected.
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;

pub type StateVector = Vector6<f64>;
pub type Covariance = Matrix6<f64>;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum FilterError {
    #[error("innovation covariance is singular (condition number {0:e})")]
    SingularInnovation(f64),
    #[error("covariance is not positive definite")]
    SingularCovariance,
    #[error("filter stage mismatch: expected {expected:?}")]
    StageMismatch { expected: Stage },
    #[error(transparent)]
    Geometry(#[from] MeasurementError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    /// `k|k−1`
    Predicted,
    /// `k|k`
    Updated,
}

/// State estimate `(e, n, u, ė, ṅ, u̇)` with its error covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackEstimate {
    pub x_hat: StateVector,
    pub p: Covariance,
    pub stage: Stage,
}

impl TrackEstimate {
    pub fn new(x_hat: StateVector, p: Covariance, stage: Stage) -> Self {
        Self { x_hat, p, stage }
    }

    pub fn position(&self) -> EnuVector {
        EnuVector::new(self.x_hat[0], self.x_hat[1], self.x_hat[2])
    }

    /// Starts a track from a first detection: position from the inverted
    /// measurement, zero velocity, covariance `variance · I`.
    pub fn from_first_detection(z: &Measurement, agent_pos: EnuVector, variance: f64) -> Self {
        let pos = agent_pos + z.to_relative();
        let x_hat = StateVector::new(pos.e, pos.n, pos.u, 0.0, 0.0, 0.0);
        Self::new(x_hat, Covariance::identity() * variance, Stage::Updated)
    }
}

/// Constant-velocity transition with additive Gaussian process noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionModel {
    pub phi: Matrix6<f64>,
    pub q: Matrix6<f64>,
}

impl MotionModel {
    pub fn constant_velocity(dt: f64, q_diag: [f64; 6]) -> Self {
        let mut phi = Matrix6::identity();
        for i in 0..3 {
            phi[(i, i + 3)] = dt;
        }
        Self { phi, q: Matrix6::from_diagonal(&Vector6::from(q_diag)) }
    }

    pub fn propagate_state(&self, x: &StateVector) -> StateVector {
        self.phi * x
    }
}

/// `R = diag(σ_r², σ_φ², σ_θ²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub r_cov: Matrix3<f64>,
}

impl NoiseModel {
    pub fn from_sigmas(sigma_r: f64, sigma_phi: f64, sigma_theta: f64) -> Self {
        Self { r_cov: Matrix3::from_diagonal(&Vector3::new(sigma_r.powi(2), sigma_phi.powi(2), sigma_theta.powi(2))) }
    }

    pub fn sigmas(&self) -> Vector3<f64> {
        self.r_cov.diagonal().map(f64::sqrt)
    }

    /// `R⁻¹` (diagonal).
    pub fn information(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&self.r_cov.diagonal().map(|v| 1.0 / v))
    }
}

/// Time update `k|k → k+1|k`.
pub fn predict(est: &TrackEstimate, model: &MotionModel) -> TrackEstimate {
    debug_assert_eq!(est.stage, Stage::Updated);
    let x_hat = model.propagate_state(&est.x_hat);
    let p = symmetrize(&(model.phi * est.p * model.phi.transpose() + model.q));
    TrackEstimate::new(x_hat, p, Stage::Predicted)
}

/// Measurement update `k|k−1 → k|k`.
///
/// A missed detection passes the prediction through. Singular measurement
/// geometry is reported as [`FilterError::Geometry`]; callers treat it as a
/// missed detection.
pub fn update(
    est: &TrackEstimate,
    z: Option<&Measurement>,
    agent_pos: EnuVector,
    noise: &NoiseModel,
) -> Result<TrackEstimate, FilterError> {
    if est.stage != Stage::Predicted {
        return Err(FilterError::StageMismatch { expected: Stage::Predicted });
    }
    let Some(z) = z else {
        return Ok(TrackEstimate { stage: Stage::Updated, ..*est });
    };

    let rel = est.position() - agent_pos;
    let predicted = measure_relative(rel)?;
    let (jac, hess) = position_derivatives(rel)?;
    let lin = Linearization {
        residual: z.to_vector() - predicted.to_vector(),
        jacobian: embed_jacobian(&jac),
        hessians: hess.map(|h| embed_hessian(&h)),
    };
    second_order_update(est, &lin, &noise.r_cov, Some(1))
}

/// A measurement model evaluated at the prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    /// `z − h(x̂)`, before the second-order bias correction.
    pub residual: Vector3<f64>,
    pub jacobian: Matrix3x6<f64>,
    /// `∇²h_l` for each measurement component.
    pub hessians: [Matrix6<f64>; 3],
}

/// The second-order update for an arbitrary three-component measurement model.
///
/// `angle_component` names a residual entry to wrap into `(−π, π]`.
pub fn second_order_update(
    est: &TrackEstimate,
    lin: &Linearization,
    r_cov: &Matrix3<f64>,
    angle_component: Option<usize>,
) -> Result<TrackEstimate, FilterError> {
    if est.stage != Stage::Predicted {
        return Err(FilterError::StageMismatch { expected: Stage::Predicted });
    }
    let p = &est.p;
    let h = &lin.jacobian;
    let hp: [Matrix6<f64>; 3] = lin.hessians.map(|hl| hl * p);
    let mut s = h * p * h.transpose() + r_cov;
    for l in 0..3 {
        for m in 0..3 {
            s[(l, m)] += 0.5 * (hp[l] * hp[m]).trace();
        }
    }
    let s = (s + s.transpose()) * 0.5;

    let eig = SymmetricEigen::new(s);
    let (lo, hi) = eig.eigenvalues.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &l| (lo.min(l), hi.max(l.abs())));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if condition > MAX_INNOVATION_CONDITION {
        return Err(FilterError::SingularInnovation(condition));
    }
    let s_inv = s.try_inverse().ok_or(FilterError::SingularInnovation(condition))?;

    let mut innov = lin.residual;
    for l in 0..3 {
        innov[l] -= 0.5 * hp[l].trace();
    }
    if let Some(i) = angle_component {
        innov[i] = wrap_angle(innov[i]);
    }

    let k = p * h.transpose() * s_inv;
    let x_hat = est.x_hat + k * innov;
    let p_new = (Matrix6::identity() - k * h) * p;
    let p_new = floor_eigenvalues(&symmetrize(&p_new), COVARIANCE_FLOOR);
    Ok(TrackEstimate::new(x_hat, p_new, Stage::Updated))
}

/// Fisher information `P⁻¹` of an estimate.
pub fn fisher_contribution(est: &TrackEstimate) -> Result<Matrix6<f64>, FilterError> {
    inverse_spd(&est.p).ok_or(FilterError::SingularCovariance)
}
