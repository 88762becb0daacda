//! SO(3) primitives: hat/vee maps, the Rodrigues exponential, the matrix
//! logarithm, geodesic interpolation, conditional vector fields, and a
//! tangent-space approximation of isotropic Gaussian rotation noise.
//!
//! Rotations are stored as 3x3 proper orthonormal matrices. Tangent vectors are
//! axis-angle rotation vectors in radians, expressed in the body frame of the
//! rotation they are attached to (left-translated coordinates): a tangent `v` at
//! base `r` corresponds to the matrix direction `r * hat(v)`.
//!
//! Numerical branches:
//! * `exp_rotvec` switches to truncated series for `sin(t)/t` and
//!   `(1-cos(t))/t^2` below [`SMALL_ANGLE`], where the direct quotients lose
//!   precision.
//! * `log_rotation` uses the second-order Taylor series of `t / (2 sin t)`
//!   below [`SMALL_ANGLE`] and rejects inputs whose trace puts the angle inside
//!   a narrow band around pi, where the axis is not identifiable.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Angle below which series expansions replace direct trigonometric quotients.
pub const SMALL_ANGLE: f64 = 1e-4;

/// `log_rotation` rejects rotations with `trace <= TRACE_AT_PI` (angle within
/// about 3e-5 rad of pi; `trace = 1 + 2 cos(angle)`).
pub const TRACE_AT_PI: f64 = -1.0 + 1e-9;

/// Elementwise tolerance on `r^T r - I` and `det(r) - 1` for a valid rotation.
pub const ROTATION_TOL: f64 = 1e-9;

/// A 3x3 proper orthonormal matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Validates orthonormality and determinant before wrapping.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let defect = rotation_defect(&m);
        if defect > ROTATION_TOL {
            return Err(Error::NotARotation { defect });
        }
        Ok(Rotation(m))
    }

    /// Wraps without validation. For internal use where the construction
    /// guarantees the invariants (products of rotations, exponentials).
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    /// Applies the rotation to a vector.
    pub fn act(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Body-frame coordinates of a spatial vector: `r^T v`.
    pub fn coact(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0.transpose() * v
    }

    /// Relative rotation `self^T other`.
    pub fn between(&self, other: &Rotation) -> Rotation {
        Rotation(self.0.transpose() * other.0)
    }

    /// Rotation angle in [0, pi], from the trace.
    pub fn angle(&self) -> f64 {
        let c = ((self.0.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

/// Max elementwise deviation of `m` from the rotation invariants.
pub fn rotation_defect(m: &Matrix3<f64>) -> f64 {
    let gram = m.transpose() * m - Matrix3::identity();
    let ortho = gram.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    ortho.max((m.determinant() - 1.0).abs())
}

/// A rotation vector attached to a base rotation (body-frame coordinates).
#[derive(Clone, Copy, Debug)]
pub struct TangentVector {
    pub v: Vector3<f64>,
    pub base: Rotation,
}

impl TangentVector {
    pub fn new(v: Vector3<f64>, base: Rotation) -> Self {
        TangentVector { v, base }
    }

    pub fn zero(base: Rotation) -> Self {
        TangentVector {
            v: Vector3::zeros(),
            base,
        }
    }
}

/// Skew-symmetric matrix of `v`: `hat(v) w = v x w`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`] on skew-symmetric matrices; reads the lower triangle.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rodrigues formula: `exp(hat(v)) = I + a K + b K^2` with `a = sin(t)/t`,
/// `b = (1-cos(t))/t^2`, `t = |v|`.
pub fn exp_rotvec(v: &Vector3<f64>) -> Rotation {
    let t2 = v.norm_squared();
    let t = t2.sqrt();
    let (a, b) = if t < SMALL_ANGLE {
        (1.0 - t2 / 6.0 + t2 * t2 / 120.0, 0.5 - t2 / 24.0 + t2 * t2 / 720.0)
    } else {
        (t.sin() / t, (1.0 - t.cos()) / t2)
    };
    let k = hat(v);
    Rotation(Matrix3::identity() + a * k + b * (k * k))
}

/// Matrix logarithm as a rotation vector.
///
/// Uses `log(r) = t/(2 sin t) * (r - r^T)` with the second-order series of
/// `t/(2 sin t)` below [`SMALL_ANGLE`]. Rejects angles inside the trace band
/// around pi ([`TRACE_AT_PI`]), where `r - r^T` no longer determines the axis.
pub fn log_rotation(r: &Rotation) -> Result<Vector3<f64>> {
    let trace = r.matrix().trace();
    if trace <= TRACE_AT_PI {
        return Err(Error::AngleAtPi { trace });
    }
    let c = ((trace - 1.0) / 2.0).clamp(-1.0, 1.0);
    let t = c.acos();
    let factor = if t < SMALL_ANGLE {
        0.5 * (1.0 + t * t / 6.0)
    } else {
        t / (2.0 * t.sin())
    };
    let m = r.matrix();
    Ok(Vector3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    ) * factor)
}

/// Geodesic between `r0` and `r1`: `r0 * exp(t * log(r0^T r1))`.
/// The endpoints `t = 0` and `t = 1` are returned exactly.
pub fn geodesic_interp(r0: &Rotation, r1: &Rotation, t: f64) -> Result<Rotation> {
    if t == 0.0 {
        return Ok(*r0);
    }
    if t == 1.0 {
        return Ok(*r1);
    }
    let rel = log_rotation(&r0.between(r1))?;
    Ok(*r0 * exp_rotvec(&(t * rel)))
}

/// Conditional vector field toward `r1` at state `rt` and time `t`:
/// `log(rt^T r1) / (1 - t)` in body coordinates at `rt`.
pub fn so3_conditional_vf(
    rt: &Rotation,
    r1: &Rotation,
    t: f64,
    eps_t: f64,
) -> Result<TangentVector> {
    if 1.0 - t < eps_t {
        return Err(Error::TimeTooClose { t, eps_t });
    }
    let rel = log_rotation(&rt.between(r1))?;
    Ok(TangentVector::new(rel / (1.0 - t), *rt))
}

/// Tangent-space approximation of isotropic Gaussian rotation noise:
/// `mean * exp(xi)` with `xi ~ N(0, variance I_3)`. Exact for `variance = 0`
/// (returns `mean` without consuming the RNG).
pub fn sample_rotation_noise<R: Rng + ?Sized>(
    mean: &Rotation,
    variance: f64,
    rng: &mut R,
) -> Rotation {
    if variance <= 0.0 {
        return *mean;
    }
    let std = variance.sqrt();
    let xi = Vector3::new(
        std * rng.sample::<f64, _>(StandardNormal),
        std * rng.sample::<f64, _>(StandardNormal),
        std * rng.sample::<f64, _>(StandardNormal),
    );
    *mean * exp_rotvec(&xi)
}

/// Euclidean norm of the rotation-vector coordinates (bi-invariant metric up
/// to a constant scale).
pub fn rotation_metric_norm(u: &TangentVector) -> f64 {
    u.v.norm()
}

/// Right Jacobian of the exponential map:
/// `exp(w + dw) = exp(w) * exp(right_jacobian(w) dw) + O(|dw|^2)`.
///
/// `J_r(w) = I - (1-cos t)/t^2 K + (t - sin t)/t^3 K^2` with `K = hat(w)`,
/// series below [`SMALL_ANGLE`].
pub fn right_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let t2 = w.norm_squared();
    let (a, b) = if t2 < SMALL_ANGLE * SMALL_ANGLE {
        (0.5 - t2 / 24.0 + t2 * t2 / 720.0, 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0)
    } else {
        let t = t2.sqrt();
        ((1.0 - t.cos()) / t2, (t - t.sin()) / (t2 * t))
    };
    let k = hat(w);
    Matrix3::identity() - a * k + b * (k * k)
}

/// Inverse of [`right_jacobian`], valid for `|w| < 2 pi`:
/// `J_r^{-1}(w) = I + K/2 + (1/t^2 - (1+cos t)/(2 t sin t)) K^2`.
pub fn right_jacobian_inv(w: &Vector3<f64>) -> Matrix3<f64> {
    let t2 = w.norm_squared();
    let c = if t2 < SMALL_ANGLE * SMALL_ANGLE {
        1.0 / 12.0 + t2 / 720.0
    } else {
        let t = t2.sqrt();
        1.0 / t2 - (1.0 + t.cos()) / (2.0 * t * t.sin())
    };
    let k = hat(w);
    Matrix3::identity() + 0.5 * k + c * (k * k)
}
