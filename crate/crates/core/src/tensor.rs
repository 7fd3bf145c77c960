//! Orthonormal bases of deviatoric and skew 3×3 matrices and the maps that
//! connect directors to deviatoric strains and spontaneous curvatures.

use nalgebra::{Matrix3, Vector3, Vector5};
use std::f64::consts::FRAC_1_SQRT_2 as R2;

use crate::error::{Error, Result};

/// Tolerance for symmetry, skewness, trace and unit-length checks at API
/// boundaries.
pub const VALIDATION_TOL: f64 = 1e-12;

const SQRT_2_3: f64 = 0.816_496_580_927_726;
const HALF_SQRT_2_3: f64 = 0.408_248_290_463_863;

/// Row-major entries of the deviatoric basis U1..U5.
pub const DEV_BASIS: [[[f64; 3]; 3]; 5] = [
    [[0.0, 0.0, 0.0], [0.0, 0.0, R2], [0.0, R2, 0.0]],
    [[0.0, R2, 0.0], [R2, 0.0, 0.0], [0.0, 0.0, 0.0]],
    [[0.0, 0.0, R2], [0.0, 0.0, 0.0], [R2, 0.0, 0.0]],
    [[SQRT_2_3, 0.0, 0.0], [0.0, -HALF_SQRT_2_3, 0.0], [0.0, 0.0, -HALF_SQRT_2_3]],
    [[0.0, 0.0, 0.0], [0.0, R2, 0.0], [0.0, 0.0, -R2]],
];

/// Row-major entries of the skew basis K1..K3.
pub const SKEW_BASIS: [[[f64; 3]; 3]; 3] = [
    [[0.0, 0.0, 0.0], [0.0, 0.0, R2], [0.0, -R2, 0.0]],
    [[0.0, R2, 0.0], [-R2, 0.0, 0.0], [0.0, 0.0, 0.0]],
    [[0.0, 0.0, R2], [0.0, 0.0, 0.0], [-R2, 0.0, 0.0]],
];

fn to_matrix(a: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| a[i][j])
}

/// The basis matrix U_j, zero-based (`j` in 0..5).
pub fn dev_basis(j: usize) -> Matrix3<f64> {
    to_matrix(&DEV_BASIS[j])
}

/// The basis matrix K_i, zero-based (`i` in 0..3).
pub fn skew_basis(i: usize) -> Matrix3<f64> {
    to_matrix(&SKEW_BASIS[i])
}

/// Coordinates `u_j = ½ U·U_j` of a trace-free symmetric matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DevVector(pub Vector5<f64>);

/// Coordinates `k_i = K·K_i` of a skew matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewVector(pub Vector3<f64>);

impl DevVector {
    /// `Σ_j 2 u_j U_j`.
    pub fn to_matrix(&self) -> Matrix3<f64> {
        (0..5).fold(Matrix3::zeros(), |acc, j| acc + dev_basis(j) * (2.0 * self.0[j]))
    }
}

impl SkewVector {
    /// `Σ_i k_i K_i`.
    pub fn to_matrix(&self) -> Matrix3<f64> {
        (0..3).fold(Matrix3::zeros(), |acc, i| acc + skew_basis(i) * self.0[i])
    }
}

fn check_unit(n: &Vector3<f64>) -> Result<()> {
    if (n.norm() - 1.0).abs() > VALIDATION_TOL || !n.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument(format!("director {n:?} is not unit length")));
    }
    Ok(())
}

/// `U(n̂) = I/3 − n̂⊗n̂`.
pub fn dev_of_director(n: &Vector3<f64>) -> Result<Matrix3<f64>> {
    check_unit(n)?;
    Ok(Matrix3::identity() / 3.0 - n * n.transpose())
}

/// Deviatoric coordinates of a symmetric trace-free matrix.
pub fn dev_coords(u: &Matrix3<f64>) -> Result<DevVector> {
    let asym = (u - u.transpose()).abs().max();
    if asym > VALIDATION_TOL || u.trace().abs() > VALIDATION_TOL {
        return Err(Error::InvalidArgument("matrix is not symmetric trace-free".into()));
    }
    Ok(DevVector(Vector5::from_fn(|j, _| 0.5 * u.dot(&dev_basis(j)))))
}

/// Skew coordinates of a skew matrix.
pub fn skew_coords(k: &Matrix3<f64>) -> Result<SkewVector> {
    if (k + k.transpose()).abs().max() > VALIDATION_TOL {
        return Err(Error::InvalidArgument("matrix is not skew".into()));
    }
    Ok(SkewVector(Vector3::from_fn(|i, _| k.dot(&skew_basis(i)))))
}

/// Deviatoric coordinates of `U(n̂)` without the unit-length check.
///
/// Because every `U_j` is trace-free, `u_j = −½ n̂ᵀU_j n̂` whatever `|n̂|` is;
/// this is the smooth quadratic used inside energies and their derivatives.
pub fn director_dev_coords(n: &Vector3<f64>) -> Vector5<f64> {
    Vector5::from_fn(|j, _| -0.5 * n.dot(&(dev_basis(j) * n)))
}

/// Jacobian of [`director_dev_coords`]: row j is `∂u_j/∂n̂ = −U_j n̂`.
pub fn director_dev_jacobian(n: &Vector3<f64>) -> nalgebra::Matrix5x3<f64> {
    let mut jac = nalgebra::Matrix5x3::zeros();
    for j in 0..5 {
        let g = -(dev_basis(j) * n);
        jac.set_row(j, &g.transpose());
    }
    jac
}

/// `√2(β K1 + κ_b K2 + κ_d K3)`, the curvature matrix of a frame with twist
/// rate β and bending components κ_b, κ_d.
pub fn frame_curvature_matrix(beta: f64, kappa_b: f64, kappa_d: f64) -> Matrix3<f64> {
    (skew_basis(0) * beta + skew_basis(1) * kappa_b + skew_basis(2) * kappa_d)
        * std::f64::consts::SQRT_2
}
