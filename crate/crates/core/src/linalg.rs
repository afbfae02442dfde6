//! Small dense helpers for symmetric positive (semi)definite 6×6 matrices.

use nalgebra::{Cholesky, Matrix6, SymmetricEigen};

pub type Mat6 = Matrix6<f64>;

pub fn symmetrize(m: &Mat6) -> Mat6 {
    (m + m.transpose()) * 0.5
}

/// Raises every eigenvalue of a symmetric matrix to at least `floor`.
///
/// Matrices whose smallest eigenvalue already exceeds the floor are returned
/// unchanged (detected with a shifted Cholesky, avoiding an eigendecomposition).
pub fn floor_eigenvalues(m: &Mat6, floor: f64) -> Mat6 {
    let shifted = m - Mat6::identity() * floor;
    if Cholesky::new(shifted).is_some() {
        return *m;
    }
    let mut eig = SymmetricEigen::new(*m);
    eig.eigenvalues.iter_mut().for_each(|l| *l = l.max(floor));
    symmetrize(&eig.recompose())
}

/// `log|m|` of a symmetric positive definite matrix, via Cholesky.
pub fn log_det_spd(m: &Mat6) -> Option<f64> {
    let chol = Cholesky::new(*m)?;
    let l = chol.l_dirty();
    Some(2.0 * (0..6).map(|i| l[(i, i)].ln()).sum::<f64>())
}

pub fn inverse_spd(m: &Mat6) -> Option<Mat6> {
    Cholesky::new(*m).map(|c| symmetrize(&c.inverse()))
}

/// Lower-triangular square root of a PSD matrix; falls back to the
/// eigendecomposition when Cholesky fails on a singular matrix.
pub fn psd_sqrt(m: &Mat6) -> Mat6 {
    if let Some(c) = Cholesky::new(*m) {
        return c.unpack();
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut s = Mat6::zeros();
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        s += v * v.transpose() * l.max(0.0).sqrt();
    }
    // symmetric square root: S Sᵀ = S² = m
    s
}

pub fn is_spd(m: &Mat6) -> bool {
    Cholesky::new(*m).is_some()
}
