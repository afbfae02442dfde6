//! Range / azimuth / polar-angle sensor model.
//!
//! An agent at position `y` observes a target at position `x` through the
//! relative vector `Δ = x − y` (east, north, up):
//!
//! ```text
//! r = |Δ|,   φ = atan2(Δn, Δe),   θ = arccos(Δu / r)
//! ```
//!
//! The target state is the 6-vector `(e, n, u, ė, ṅ, u̇)`. The sensor does not
//! see velocity, so every velocity column of the Jacobian and every velocity
//! row/column of the Hessians is zero. Derivatives with respect to the target
//! position equal derivatives with respect to `Δ`; derivatives with respect to
//! the agent position are their negation.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{Matrix3, Matrix3x6, Matrix6, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Horizontal-range threshold below which the azimuth derivatives are undefined.
pub const MIN_HORIZONTAL_RANGE: f64 = 1e-9;
/// Lower bound on `1 − (Δu/r)²`; below it the polar-angle derivatives blow up.
pub const MIN_POLAR_SINE_SQ: f64 = 1e-12;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum MeasurementError {
    #[error("target and agent positions coincide")]
    DegenerateGeometry,
    #[error("relative vector lies on the vertical axis (horizontal range {horizontal:e}, |Δu/r| = {cos_polar})")]
    GimbalSingularity { horizontal: f64, cos_polar: f64 },
}

/// A point or displacement in local east/north/up coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnuVector {
    pub e: f64,
    pub n: f64,
    pub u: f64,
}

impl EnuVector {
    pub const ZERO: EnuVector = EnuVector { e: 0.0, n: 0.0, u: 0.0 };

    pub const fn new(e: f64, n: f64, u: f64) -> Self {
        Self { e, n, u }
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.e, self.n, self.u)
    }

    pub fn norm_squared(self) -> f64 {
        self.e * self.e + self.n * self.n + self.u * self.u
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn horizontal_norm(self) -> f64 {
        self.e.hypot(self.n)
    }

    pub fn is_finite(self) -> bool {
        self.e.is_finite() && self.n.is_finite() && self.u.is_finite()
    }

    /// Rotates the horizontal components counter-clockwise (east towards north) by `alpha`.
    pub fn rotate_about_up(self, alpha: f64) -> Self {
        let (s, c) = alpha.sin_cos();
        Self::new(c * self.e - s * self.n, s * self.e + c * self.n, self.u)
    }

    pub fn distance(self, other: EnuVector) -> f64 {
        (self - other).norm()
    }
}

impl Add for EnuVector {
    type Output = EnuVector;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.e + rhs.e, self.n + rhs.n, self.u + rhs.u)
    }
}

impl Sub for EnuVector {
    type Output = EnuVector;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.e - rhs.e, self.n - rhs.n, self.u - rhs.u)
    }
}

impl Neg for EnuVector {
    type Output = EnuVector;
    fn neg(self) -> Self {
        Self::new(-self.e, -self.n, -self.u)
    }
}

impl Mul<f64> for EnuVector {
    type Output = EnuVector;
    fn mul(self, rhs: f64) -> Self {
        Self::new(self.e * rhs, self.n * rhs, self.u * rhs)
    }
}

/// One range/azimuth/polar observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub r: f64,
    pub phi: f64,
    pub theta: f64,
}

impl Measurement {
    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.r, self.phi, self.theta)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self { r: v[0], phi: v[1], theta: v[2] }
    }

    /// Relative vector that would produce this observation.
    pub fn to_relative(self) -> EnuVector {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        EnuVector::new(self.r * st * cp, self.r * st * sp, self.r * ct)
    }
}

/// Rows are `∂(r, φ, θ)/∂x` for the 6-dim target state.
pub type MeasurementJacobian = Matrix3x6<f64>;

/// `∇²r`, `∇²φ`, `∇²θ` with respect to the 6-dim target state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementHessians(pub [Matrix6<f64>; 3]);

impl MeasurementHessians {
    pub fn range(&self) -> &Matrix6<f64> {
        &self.0[0]
    }
    pub fn azimuth(&self) -> &Matrix6<f64> {
        &self.0[1]
    }
    pub fn polar(&self) -> &Matrix6<f64> {
        &self.0[2]
    }

    /// Position blocks only, as 3×3 matrices.
    pub fn position_blocks(&self) -> [Matrix3<f64>; 3] {
        self.0.map(|h| h.fixed_view::<3, 3>(0, 0).into_owned())
    }
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut w = a.rem_euclid(two_pi);
    if w > PI {
        w -= two_pi;
    }
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if w <= -PI {
        w += two_pi;
    }
    w
}

/// Noise-free observation of `target_pos` from `agent_pos`.
///
/// On the vertical axis the azimuth is reported as 0 and `θ ∈ {0, π}`.
pub fn measure(target_pos: EnuVector, agent_pos: EnuVector) -> Result<Measurement, MeasurementError> {
    measure_relative(target_pos - agent_pos)
}

pub fn measure_relative(rel: EnuVector) -> Result<Measurement, MeasurementError> {
    let r = rel.norm();
    if r == 0.0 {
        return Err(MeasurementError::DegenerateGeometry);
    }
    let phi = if rel.e == 0.0 && rel.n == 0.0 { 0.0 } else { rel.n.atan2(rel.e) };
    let theta = (rel.u / r).clamp(-1.0, 1.0).acos();
    Ok(Measurement { r, phi: wrap_angle(phi), theta })
}

/// Shared intermediate quantities of the derivative formulas.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    e: f64,
    n: f64,
    u: f64,
    r: f64,
    r2: f64,
    f: f64,
    f2: f64,
}

impl Geometry {
    fn new(rel: EnuVector) -> Result<Self, MeasurementError> {
        let r2 = rel.norm_squared();
        if r2 == 0.0 {
            return Err(MeasurementError::DegenerateGeometry);
        }
        let r = r2.sqrt();
        let f2 = rel.e * rel.e + rel.n * rel.n;
        let f = f2.sqrt();
        let cos_polar = rel.u / r;
        if f < MIN_HORIZONTAL_RANGE || 1.0 - cos_polar * cos_polar < MIN_POLAR_SINE_SQ {
            return Err(MeasurementError::GimbalSingularity { horizontal: f, cos_polar: cos_polar.abs() });
        }
        Ok(Self { e: rel.e, n: rel.n, u: rel.u, r, r2, f, f2 })
    }

    fn position_jacobian(&self) -> Matrix3<f64> {
        let Self { e, n, u, r, r2, f, f2 } = *self;
        let polar = u / (f * r2);
        Matrix3::new(
            e / r, n / r, u / r,
            -n / f2, e / f2, 0.0,
            e * polar, n * polar, -f / r2,
        )
    }

    fn position_hessians(&self) -> [Matrix3<f64>; 3] {
        let Self { e, n, u, r, r2, f, f2 } = *self;
        let r3 = r2 * r;
        let range = Matrix3::new(
            (r2 - e * e) / r3, -e * n / r3, -e * u / r3,
            -e * n / r3, (r2 - n * n) / r3, -n * u / r3,
            -e * u / r3, -n * u / r3, (r2 - u * u) / r3,
        );

        let f4 = f2 * f2;
        let az_ee = 2.0 * e * n / f4;
        let az_en = (n * n - e * e) / f4;
        let azimuth = Matrix3::new(
            az_ee, az_en, 0.0,
            az_en, -az_ee, 0.0,
            0.0, 0.0, 0.0,
        );

        let r4 = r2 * r2;
        let f3 = f2 * f;
        let base = u / (f * r2);
        let k = u * (r2 + 2.0 * f2) / (f3 * r4);
        let pol_ee = base - e * e * k;
        let pol_nn = base - n * n * k;
        let pol_en = -e * n * k;
        let vert = (f2 - u * u) / (f * r4);
        let pol_eu = e * vert;
        let pol_nu = n * vert;
        let pol_uu = 2.0 * f * u / r4;
        let polar = Matrix3::new(
            pol_ee, pol_en, pol_eu,
            pol_en, pol_nn, pol_nu,
            pol_eu, pol_nu, pol_uu,
        );
        [range, azimuth, polar]
    }
}

/// Position block (3×3) of the Jacobian with respect to the relative vector.
pub fn position_jacobian(rel: EnuVector) -> Result<Matrix3<f64>, MeasurementError> {
    Geometry::new(rel).map(|g| g.position_jacobian())
}

/// Position blocks of `∇²r`, `∇²φ`, `∇²θ` with respect to the relative vector.
pub fn position_hessians(rel: EnuVector) -> Result<[Matrix3<f64>; 3], MeasurementError> {
    Geometry::new(rel).map(|g| g.position_hessians())
}

/// Both the position Jacobian and position Hessians from one geometry evaluation.
pub fn position_derivatives(rel: EnuVector) -> Result<(Matrix3<f64>, [Matrix3<f64>; 3]), MeasurementError> {
    Geometry::new(rel).map(|g| (g.position_jacobian(), g.position_hessians()))
}

/// Jacobian of `(r, φ, θ)` with respect to the 6-dim target state.
pub fn jacobian(rel: EnuVector) -> Result<MeasurementJacobian, MeasurementError> {
    let block = position_jacobian(rel)?;
    Ok(embed_jacobian(&block))
}

/// Second derivatives of each measurement component with respect to the target state.
pub fn hessians(rel: EnuVector) -> Result<MeasurementHessians, MeasurementError> {
    let blocks = position_hessians(rel)?;
    Ok(MeasurementHessians(blocks.map(|b| embed_hessian(&b))))
}

pub(crate) fn embed_jacobian(block: &Matrix3<f64>) -> MeasurementJacobian {
    let mut h = MeasurementJacobian::zeros();
    h.fixed_view_mut::<3, 3>(0, 0).copy_from(block);
    h
}

pub(crate) fn embed_hessian(block: &Matrix3<f64>) -> Matrix6<f64> {
    let mut h = Matrix6::zeros();
    h.fixed_view_mut::<3, 3>(0, 0).copy_from(block);
    h
}
