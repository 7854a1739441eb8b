//! Small linear-algebra helpers shared by the renderer and the optimizer.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3, Vector4};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Quaternion as a raw `(w, x, y, z)` vector.
pub fn quat_to_wxyz(q: &UnitQuaternion<f64>) -> Vector4<f64> {
    Vector4::new(q.w, q.i, q.j, q.k)
}

/// Normalizes a raw `(w, x, y, z)` vector into a unit quaternion.
pub fn quat_from_wxyz(v: &Vector4<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_quaternion(Quaternion::new(v[0], v[1], v[2], v[3]))
}

/// Rotation matrix of a unit quaternion, written out explicitly so the
/// backward pass below is its exact adjoint.
pub fn rotation_matrix(q: &UnitQuaternion<f64>) -> Mat3 {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls a gradient on the rotation matrix back to the raw `(w, x, y, z)`
/// components, including the normalization `q / |q|` evaluated at a unit
/// quaternion.
pub fn rotation_matrix_backward(q: &UnitQuaternion<f64>, g: &Mat3) -> Vector4<f64> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    let gw = 2.0 * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
        + x * g[(2, 1)]);
    let gx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let gy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let gz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    let grad = Vector4::new(gw, gx, gy, gz);
    let qv = quat_to_wxyz(q);
    grad - qv * qv.dot(&grad)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    (p / (1.0 - p)).ln()
}
