//! Rotation representations, directional sampling and rotation averaging.
//!
//! Two-dimensional rotations are parameterised by a single angle. Three
//! dimensional rotations use generalised Euler angles, composing
//! `A = A12(θ12) · A13(θ13) · A23(θ23)` where `Aij(θ)` rotates in the
//! `(i, j)` coordinate plane. In those coordinates the Haar measure has
//! volume element `cos θ13 dθ12 dθ13 dθ23`.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, Matrix2, Matrix3, SMatrix};
use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("cannot average an empty set of rotations")]
    EmptyAverage,
    #[error("degenerate rotation average")]
    DegenerateAverage,
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta % (2.0 * PI);
    if t <= -PI {
        t += 2.0 * PI;
    } else if t > PI {
        t -= 2.0 * PI;
    }
    t
}

/// Uniform draw on `(-π, π]`.
pub fn sample_uniform_angle<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    PI - 2.0 * PI * rng.random::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation2 {
    pub theta: f64,
}

impl Rotation2 {
    pub fn new(theta: f64) -> Self {
        Self {
            theta: wrap_angle(theta),
        }
    }

    pub fn matrix(&self) -> Matrix2<f64> {
        rotation_matrix_2d(self.theta)
    }
}

/// `[[cos θ, -sin θ], [sin θ, cos θ]]`.
pub fn rotation_matrix_2d(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Which generalised Euler angle a conditional refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EulerAxis {
    A12,
    A13,
    A23,
}

impl EulerAxis {
    pub const ALL: [EulerAxis; 3] = [EulerAxis::A12, EulerAxis::A13, EulerAxis::A23];

    /// Zero-based coordinate plane `(i, j)` with `i < j`.
    pub fn plane(self) -> (usize, usize) {
        match self {
            EulerAxis::A12 => (0, 1),
            EulerAxis::A13 => (0, 2),
            EulerAxis::A23 => (1, 2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles3 {
    pub theta12: f64,
    pub theta13: f64,
    pub theta23: f64,
}

impl EulerAngles3 {
    /// Builds angles normalised to their declared ranges. `theta13` is
    /// clamped strictly inside `(-π/2, π/2)`.
    pub fn new(theta12: f64, theta13: f64, theta23: f64) -> Self {
        let lim = FRAC_PI_2 - 1e-12;
        Self {
            theta12: wrap_angle(theta12),
            theta13: theta13.clamp(-lim, lim),
            theta23: wrap_angle(theta23),
        }
    }

    pub fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn get(&self, axis: EulerAxis) -> f64 {
        match axis {
            EulerAxis::A12 => self.theta12,
            EulerAxis::A13 => self.theta13,
            EulerAxis::A23 => self.theta23,
        }
    }

    pub fn set(&mut self, axis: EulerAxis, value: f64) {
        match axis {
            EulerAxis::A12 => self.theta12 = wrap_angle(value),
            EulerAxis::A13 => self.theta13 = value,
            EulerAxis::A23 => self.theta23 = wrap_angle(value),
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        rotation_matrix_3d(self)
    }
}

/// Elementary rotation in the `(i, j)` plane: `m_ii = m_jj = cos θ`,
/// `m_ji = sin θ = -m_ij`.
pub fn elementary_rotation(axis: EulerAxis, theta: f64) -> Matrix3<f64> {
    let (i, j) = axis.plane();
    let (s, c) = theta.sin_cos();
    let mut m = Matrix3::identity();
    m[(i, i)] = c;
    m[(j, j)] = c;
    m[(i, j)] = -s;
    m[(j, i)] = s;
    m
}

pub fn rotation_matrix_3d(angles: &EulerAngles3) -> Matrix3<f64> {
    elementary_rotation(EulerAxis::A12, angles.theta12)
        * elementary_rotation(EulerAxis::A13, angles.theta13)
        * elementary_rotation(EulerAxis::A23, angles.theta23)
}

/// Recovers generalised Euler angles from a rotation matrix.
///
/// Inverse of [`rotation_matrix_3d`] away from the gimbal set `|θ13| = π/2`.
pub fn euler_angles_from_matrix(a: &Matrix3<f64>) -> EulerAngles3 {
    // Bottom row is (sin θ13, cos θ13 sin θ23, cos θ13 cos θ23); first column
    // is (cos θ12 cos θ13, sin θ12 cos θ13, sin θ13).
    let s13 = a[(2, 0)].clamp(-1.0, 1.0);
    let theta13 = s13.asin();
    let theta23 = a[(2, 1)].atan2(a[(2, 2)]);
    let theta12 = a[(1, 0)].atan2(a[(0, 0)]);
    EulerAngles3::new(theta12, theta13, theta23)
}

/// Von Mises law `∝ exp(κ cos(θ - ν))` on `(-π, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VonMisesParams {
    pub nu: f64,
    pub kappa: f64,
}

impl VonMisesParams {
    pub fn new(nu: f64, kappa: f64) -> Self {
        debug_assert!(kappa >= 0.0, "von Mises concentration must be non-negative");
        Self {
            nu: wrap_angle(nu),
            kappa: kappa.max(0.0),
        }
    }

    /// Parameters of the density `∝ exp(a cos θ + b sin θ)`.
    pub fn from_coefficients(a: f64, b: f64) -> Self {
        let kappa = a.hypot(b);
        let nu = if kappa > 0.0 { b.atan2(a) } else { 0.0 };
        Self::new(nu, kappa)
    }

    /// Unnormalised log density.
    pub fn log_kernel(&self, theta: f64) -> f64 {
        self.kappa * (theta - self.nu).cos()
    }
}

impl Distribution<f64> for VonMisesParams {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        sample_von_mises(self, rng)
    }
}

/// Best–Fisher rejection sampler for the von Mises distribution.
pub fn sample_von_mises<R: Rng + ?Sized>(params: &VonMisesParams, rng: &mut R) -> f64 {
    let kappa = params.kappa;
    if kappa == 0.0 {
        return sample_uniform_angle(rng);
    }
    // tau = 1 + sqrt(1 + 4κ²); rho = (tau - sqrt(2 tau)) / 2κ, rewritten to
    // avoid cancellation for small κ.
    let root = (1.0 + 4.0 * kappa * kappa).sqrt();
    let tau = 1.0 + root;
    let rho = 2.0 * kappa * tau / ((root + 1.0) * (tau + (2.0 * tau).sqrt()));
    let r = (1.0 + rho * rho) / (2.0 * rho);

    let f = loop {
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        let z = (PI * u1).cos();
        let f = ((1.0 + r * z) / (r + z)).clamp(-1.0, 1.0);
        let c = kappa * (r - f);
        if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
            break f;
        }
    };
    let u3: f64 = rng.random();
    let delta = f.acos();
    let theta = if u3 > 0.5 {
        params.nu + delta
    } else {
        params.nu - delta
    };
    wrap_angle(theta)
}

/// Coefficients `(a, b)` with `tr(Fᵀ A) = a cos θ + b sin θ + c` as a function
/// of the chosen Euler angle, the other two held fixed.
pub fn euler_conditional_coeffs(
    f: &Matrix3<f64>,
    angles: &EulerAngles3,
    axis: EulerAxis,
) -> (f64, f64) {
    // 1-based accessor keeps the expressions readable.
    let g = |i: usize, j: usize| f[(i - 1, j - 1)];
    let (s12, c12) = angles.theta12.sin_cos();
    let (s13, c13) = angles.theta13.sin_cos();
    let (s23, c23) = angles.theta23.sin_cos();
    match axis {
        EulerAxis::A12 => {
            let a = (g(2, 2) - s13 * g(1, 3)) * c23 + (-g(2, 3) - s13 * g(1, 2)) * s23 + c13 * g(1, 1);
            let b = (-s13 * g(2, 3) - g(1, 2)) * c23 + (g(1, 3) - s13 * g(2, 2)) * s23 + c13 * g(2, 1);
            (a, b)
        }
        EulerAxis::A13 => {
            let a = s12 * g(2, 1) + c12 * g(1, 1) + s23 * g(3, 2) + c23 * g(3, 3);
            let b = (-s23 * g(1, 2) - c23 * g(1, 3)) * c12
                + (-s23 * g(2, 2) - c23 * g(2, 3)) * s12
                + g(3, 1);
            (a, b)
        }
        EulerAxis::A23 => {
            let a = (g(2, 2) - s13 * g(1, 3)) * c12 + (-s13 * g(2, 3) - g(1, 2)) * s12 + c13 * g(3, 3);
            let b = (-g(2, 3) - s13 * g(1, 2)) * c12 + (g(1, 3) - s13 * g(2, 2)) * s12 + c13 * g(3, 2);
            (a, b)
        }
    }
}

/// Haar-uniform rotation in generalised Euler angles: `θ12, θ23` uniform and
/// `sin θ13` uniform on `(-1, 1)`.
pub fn sample_uniform_rotation_3d<R: Rng + ?Sized>(rng: &mut R) -> EulerAngles3 {
    let theta12 = sample_uniform_angle(rng);
    let theta23 = sample_uniform_angle(rng);
    let s: f64 = rng.random_range(-1.0..1.0);
    EulerAngles3::new(theta12, s.asin(), theta23)
}

/// Rotation angle between two rotations, `acos((tr(R1ᵀ R2) - (d - 2)) / 2)`.
pub fn geodesic_distance<const D: usize>(r1: &SMatrix<f64, D, D>, r2: &SMatrix<f64, D, D>) -> f64 {
    let tr = (r1.transpose() * r2).trace();
    ((tr - (D as f64 - 2.0)) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Polar part of the elementwise mean `Ā`, i.e. `Ā (ĀᵀĀ)^(-1/2)`.
pub fn polar_rotation_mean<const D: usize>(
    samples: &[SMatrix<f64, D, D>],
) -> Result<SMatrix<f64, D, D>, GeometryError> {
    if samples.is_empty() {
        return Err(GeometryError::EmptyAverage);
    }
    let mean = samples.iter().fold(SMatrix::<f64, D, D>::zeros(), |acc, r| acc + r)
        / samples.len() as f64;
    if determinant(&mean) <= 1e-12 {
        return Err(GeometryError::DegenerateAverage);
    }
    let mean_dyn = DMatrix::from_column_slice(D, D, mean.as_slice());
    let gram = mean_dyn.transpose() * &mean_dyn;
    let eig = gram.symmetric_eigen();
    let min_ev = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    if min_ev <= max_ev * 1e-14 {
        return Err(GeometryError::DegenerateAverage);
    }
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let inv_root = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();
    let polar = mean_dyn * inv_root;
    Ok(SMatrix::<f64, D, D>::from_column_slice(polar.as_slice()))
}

/// Determinant of a small square matrix of any fixed size.
pub fn determinant<const D: usize>(a: &SMatrix<f64, D, D>) -> f64 {
    match D {
        2 => a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)],
        3 => Matrix3::from_fn(|i, j| a[(i, j)]).determinant(),
        _ => DMatrix::from_column_slice(D, D, a.as_slice()).determinant(),
    }
}

/// `max |AᵀA - I|` entries.
pub fn orthogonality_residual<const D: usize>(a: &SMatrix<f64, D, D>) -> f64 {
    (a.transpose() * a - SMatrix::<f64, D, D>::identity()).abs().max()
}
