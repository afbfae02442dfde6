//! Filter oracles. Each returns the worst deviation it saw so that both the
//! filter suite and the acceptance run can judge it.

use cso_swarm::ekf2::{
    predict, second_order_update, update, Covariance, Linearization, MotionModel, NoiseModel, Stage, StateVector,
    TrackEstimate,
};
use cso_swarm::linalg::{inverse_spd, is_spd, psd_sqrt};
use cso_swarm::measurement::{jacobian, measure, measure_relative, wrap_angle, EnuVector, Measurement};
use nalgebra::{Matrix3, Matrix3x6, Matrix6, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

const Q_DIAG: [f64; 6] = [0.03, 0.03, 0.03, 0.01, 0.01, 0.01];

fn normal6<R: Rng>(rng: &mut R) -> StateVector {
    StateVector::from_fn(|_, _| rng.sample(StandardNormal))
}

fn normal3<R: Rng>(rng: &mut R) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.sample(StandardNormal))
}

fn random_cov<R: Rng>(rng: &mut R) -> Covariance {
    let a = Matrix6::from_fn(|_, _| rng.random_range(-1.0..1.0));
    a * a.transpose() + Covariance::identity() * 0.1
}

fn position(x: &StateVector) -> EnuVector {
    EnuVector::new(x[0], x[1], x[2])
}

fn noisy_measurement<R: Rng>(truth: &StateVector, agent: EnuVector, noise: &NoiseModel, rng: &mut R) -> Measurement {
    let clean = measure(position(truth), agent).unwrap();
    let v = noise.sigmas().component_mul(&normal3(rng));
    Measurement { r: clean.r + v[0], phi: wrap_angle(clean.phi + v[1]), theta: clean.theta + v[2] }
}

fn relative_error(a: &Matrix6<f64>, b: &Matrix6<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

fn symmetric(m: Matrix6<f64>) -> Matrix6<f64> {
    (m + m.transpose()) * 0.5
}

/// Second-order update with zero Hessians against a textbook linear Kalman filter.
pub fn kalman_equivalence_error(seed: u64, n: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let p = random_cov(&mut rng);
        let x = normal6(&mut rng);
        let c = Matrix3x6::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let r = Matrix3::from_diagonal(&Vector3::new(0.1, 0.2, 0.3));
        let z = c * x + normal3(&mut rng);

        let est = TrackEstimate::new(x, p, Stage::Predicted);
        let lin = Linearization { residual: z - c * x, jacobian: c, hessians: [Matrix6::zeros(); 3] };
        let out = second_order_update(&est, &lin, &r, None).unwrap();

        let s = c * p * c.transpose() + r;
        let k = p * c.transpose() * s.try_inverse().unwrap();
        let x_kf = x + k * (z - c * x);
        let p_kf = symmetric((Matrix6::identity() - k * c) * p);

        worst = worst.max((out.x_hat - x_kf).amax() / (1.0 + x_kf.amax()));
        worst = worst.max(relative_error(&out.p, &p_kf));
    }
    worst
}

/// With a tiny prior covariance the curvature terms vanish, so the update must
/// agree with a plain first-order EKF.
pub fn first_order_error(seed: u64, n: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = NoiseModel::from_sigmas(0.01, 0.01, 0.01);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let p = random_cov(&mut rng) * 1e-8;
        let agent = EnuVector::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 0.0);
        let x = StateVector::new(
            agent.e + rng.random_range(2.0..10.0),
            agent.n + rng.random_range(2.0..10.0),
            rng.random_range(-3.0..3.0),
            0.1,
            -0.2,
            0.0,
        );
        let truth = x + psd_sqrt(&p) * normal6(&mut rng);
        let z = noisy_measurement(&truth, agent, &noise, &mut rng);

        let est = TrackEstimate::new(x, p, Stage::Predicted);
        let out = update(&est, Some(&z), agent, &noise).unwrap();

        let rel = position(&x) - agent;
        let h = jacobian(rel).unwrap();
        let mut innov = z.to_vector() - measure_relative(rel).unwrap().to_vector();
        innov[1] = wrap_angle(innov[1]);
        let s = h * p * h.transpose() + noise.r_cov;
        let k = p * h.transpose() * s.try_inverse().unwrap();
        let dx = k * innov;
        let p_ekf = symmetric((Matrix6::identity() - k * h) * p);

        worst = worst.max((out.x_hat - x - dx).norm() / dx.norm());
        worst = worst.max(relative_error(&out.p, &p_ekf));
    }
    worst
}

/// Final-step NEES of one matched-model run: a fixed observer, constant-velocity
/// truth with the filter's own process noise, a detection every step.
fn nees_run(seed: u64, n_steps: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = MotionModel::constant_velocity(0.1, Q_DIAG);
    let noise = NoiseModel::from_sigmas(0.01, 0.01, 0.01);
    let q_sqrt = psd_sqrt(&model.q);
    let agent = EnuVector::ZERO;
    let mut truth = StateVector::new(3.0, 4.0, 0.0, 0.0, 0.0, 0.0);
    let mut est = TrackEstimate::new(truth + normal6(&mut rng), Covariance::identity(), Stage::Updated);
    for _ in 0..n_steps {
        truth = model.phi * truth + q_sqrt * normal6(&mut rng);
        let pred = predict(&est, &model);
        let z = noisy_measurement(&truth, agent, &noise, &mut rng);
        est = update(&pred, Some(&z), agent, &noise).unwrap();
    }
    let e = truth - est.x_hat;
    (e.transpose() * inverse_spd(&est.p).unwrap() * e)[(0, 0)]
}

pub struct NeesBand {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl NeesBand {
    pub fn contains_mean(&self) -> bool {
        self.mean > self.lo && self.mean < self.hi
    }
}

/// Mean NEES over `runs` independent runs with its two-sided 95% chi-square band.
pub fn nees_band(runs: usize, n_steps: usize) -> NeesBand {
    let mean = (0..runs).map(|i| nees_run(1000 + i as u64, n_steps)).sum::<f64>() / runs as f64;
    let chi = ChiSquared::new((6 * runs) as f64).unwrap();
    NeesBand { mean, lo: chi.inverse_cdf(0.025) / runs as f64, hi: chi.inverse_cdf(0.975) / runs as f64 }
}

/// Runs a track through `n_steps` steps of wandering geometry and missed
/// detections; returns the first step whose covariance is not SPD.
pub fn first_non_spd_step(seed: u64, n_steps: usize) -> Option<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = MotionModel::constant_velocity(0.1, Q_DIAG);
    let noise = NoiseModel::from_sigmas(0.01, 0.01, 0.01);
    let q_sqrt = psd_sqrt(&model.q);
    let mut truth = StateVector::new(3.0, 4.0, 1.0, 0.0, 0.0, 0.0);
    let mut est = TrackEstimate::new(truth + normal6(&mut rng), Covariance::identity(), Stage::Updated);
    for k in 0..n_steps {
        truth = model.phi * truth + q_sqrt * normal6(&mut rng);
        let offset = EnuVector::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-2.0..2.0));
        let agent = position(&truth) + offset;
        let pred = predict(&est, &model);
        let z = rng.random_bool(0.6).then(|| noisy_measurement(&truth, agent, &noise, &mut rng));
        est = update(&pred, z.as_ref(), agent, &noise).unwrap_or(TrackEstimate { stage: Stage::Updated, ..pred });
        let symmetric = (est.p - est.p.transpose()).amax() < 1e-9;
        let min_eig = SymmetricEigen::new(est.p).eigenvalues.min();
        if !(symmetric && min_eig > 0.0 && is_spd(&est.p)) {
            return Some(k);
        }
    }
    None
}
