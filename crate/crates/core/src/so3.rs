//! Small SO(3) toolkit: hat/vee, Rodrigues exponential, logarithm, right
//! Jacobian, re-orthonormalization and Z-Y-X Euler extraction.
//!
//! Rotations are plain `Matrix3<f64>` so that they serialize as 3×3 arrays and
//! compose with the rest of the linear algebra without conversions.

use nalgebra::{Matrix3, Vector3};

const SMALL_ANGLE: f64 = 1e-8;

/// Skew-symmetric matrix such that `hat(w) * v == w.cross(&v)`.
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Inverse of [`hat`] applied to the skew part of `m`.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rodrigues closed form of `exp(w^)`.
pub fn exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(w);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Principal logarithm, returning the rotation vector with angle in [0, π].
pub fn log(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    if theta < SMALL_ANGLE {
        return vee(&(r - r.transpose())) * 0.5;
    }
    if std::f64::consts::PI - theta < 1e-6 {
        // Near π the skew part vanishes; recover the axis from the symmetric part.
        let b = (r + Matrix3::identity()) * 0.5;
        let diag = Vector3::new(b[(0, 0)], b[(1, 1)], b[(2, 2)]);
        let i = diag.imax();
        let mut axis = b.column(i).into_owned();
        axis /= axis.norm();
        // Fix the sign using the (tiny) skew component when available.
        let s = vee(&(r - r.transpose()));
        if s.dot(&axis) < 0.0 {
            axis = -axis;
        }
        return axis * theta;
    }
    vee(&(r - r.transpose())) * (theta / (2.0 * theta.sin()))
}

/// Right Jacobian: `exp((w + d)^) ≈ exp(w^) exp((Jr(w) d)^)`.
pub fn right_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(w);
    let (a, b) = if theta < SMALL_ANGLE {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Matrix3::identity() - k * a + k * k * b
}

/// Frobenius norm of `RᵀR − I`.
pub fn orthogonality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).norm()
}

/// Nearest rotation via two Newton iterations of the polar decomposition
/// (`R ← (R + R⁻ᵀ)/2`), which converge quadratically from a nearly orthogonal
/// start.
pub fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let mut q = *r;
    for _ in 0..3 {
        match q.try_inverse() {
            Some(inv) => q = (q + inv.transpose()) * 0.5,
            None => break,
        }
    }
    q
}

pub fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    r.iter().all(|v| v.is_finite())
        && orthogonality_error(r) <= tol
        && (r.determinant() - 1.0).abs() <= tol
}

/// Roll, pitch and yaw for `R = Rz(yaw) · Ry(pitch) · Rx(roll)`.
pub fn euler_zyx(r: &Matrix3<f64>) -> Vector3<f64> {
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    Vector3::new(roll, pitch, yaw)
}

pub fn from_euler_zyx(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    exp(&Vector3::new(0.0, 0.0, yaw))
        * exp(&Vector3::new(0.0, pitch, 0.0))
        * exp(&Vector3::new(roll, 0.0, 0.0))
}

/// Euclidean gradients (d/dR entries) of roll, pitch and yaw of [`euler_zyx`].
pub fn euler_zyx_entry_gradients(r: &Matrix3<f64>) -> [Matrix3<f64>; 3] {
    let mut g_roll = Matrix3::zeros();
    let mut g_pitch = Matrix3::zeros();
    let mut g_yaw = Matrix3::zeros();

    let (r21, r22) = (r[(2, 1)], r[(2, 2)]);
    let n = (r21 * r21 + r22 * r22).max(1e-300);
    g_roll[(2, 1)] = r22 / n;
    g_roll[(2, 2)] = -r21 / n;

    let s = r[(2, 0)].clamp(-1.0, 1.0);
    let c = (1.0 - s * s).max(1e-300).sqrt();
    g_pitch[(2, 0)] = -1.0 / c;

    let (r10, r00) = (r[(1, 0)], r[(0, 0)]);
    let n = (r10 * r10 + r00 * r00).max(1e-300);
    g_yaw[(1, 0)] = r00 / n;
    g_yaw[(0, 0)] = -r10 / n;

    [g_roll, g_pitch, g_yaw]
}

/// Converts a Euclidean gradient `G = ∂c/∂Q` into the gradient with respect to
/// a right perturbation `Q ← Q·exp(ξ^)`.
pub fn right_tangent_gradient(q: &Matrix3<f64>, g: &Matrix3<f64>) -> Vector3<f64> {
    let c = q.transpose() * g;
    vee(&(c - c.transpose()))
}

/// Camera orientation (columns: right, down, forward) looking along `forward`
/// with image-down aligned as closely as possible with `-up`.
pub fn look_rotation(forward: &Vector3<f64>, up: &Vector3<f64>) -> Matrix3<f64> {
    let z = forward.normalize();
    let down = -up;
    let mut y = down - z * z.dot(&down);
    if y.norm() < 1e-9 {
        y = z.cross(&Vector3::x());
        if y.norm() < 1e-9 {
            y = z.cross(&Vector3::y());
        }
    }
    let y = y.normalize();
    let x = y.cross(&z);
    Matrix3::from_columns(&[x, y, z])
}
