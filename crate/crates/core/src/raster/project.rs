//! Perspective projection of 3D Gaussians into pixel-space splats, with the
//! first-order (Jacobian) covariance transfer and its exact adjoint.

use nalgebra::{Matrix2, Matrix2x3, Vector2, Vector4};

use super::{ALPHA_MIN, COV2D_REGULARIZER};
use crate::math::{rotation_matrix, rotation_matrix_backward, Mat3, Vec3};
use crate::scene::{Camera, Gaussian3D};

/// A Gaussian after projection to the image plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Splat2D {
    /// Pixel-space mean.
    pub mean: Vector2<f64>,
    /// Regularized pixel-space covariance.
    pub cov: Matrix2<f64>,
    /// Inverse covariance as `(a, b, c)` for `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    /// Camera-space depth.
    pub depth: f64,
    pub opacity: f64,
    pub color: Vec3,
    pub semantic: Vec<f64>,
    /// Index into the Gaussian list that was projected.
    pub source: usize,
    /// Half extents of the pixel box outside which the splat's alpha is
    /// below the skip threshold.
    pub extent: Vector2<f64>,
    /// Three-sigma screen radius along the major axis, in pixels.
    pub radius: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Projection {
    pub splats: Vec<Splat2D>,
    pub culled: usize,
}

/// Quantities of the projection chain reused by the backward pass.
pub(crate) struct ProjectionFrame {
    pub cam_point: Vec3,
    pub t: Matrix2x3<f64>,
    pub sigma: Mat3,
}

pub(crate) fn projection_frame(g: &Gaussian3D, cam: &Camera, world_rot: &Mat3) -> ProjectionFrame {
    let p = world_rot * (g.mean - cam.position);
    let f = cam.focal();
    let (x, y, z) = (p.x, p.y, p.z);
    let j = Matrix2x3::new(f / z, 0.0, -f * x / (z * z), 0.0, f / z, -f * y / (z * z));
    ProjectionFrame { cam_point: p, t: j * world_rot, sigma: g.covariance() }
}

/// Projects Gaussians into splats, silently culling those in front of the
/// near plane, beyond the far plane, or too transparent to ever pass the
/// alpha threshold.
pub fn project(gaussians: &[Gaussian3D], camera: &Camera) -> Projection {
    let w = camera.rotation();
    let f = camera.focal();
    let (cx, cy) = camera.principal_point();
    let mut out = Projection::default();
    for (i, g) in gaussians.iter().enumerate() {
        let frame = projection_frame(g, camera, &w);
        let p = frame.cam_point;
        if p.z <= camera.near || p.z >= camera.far || g.opacity < ALPHA_MIN {
            out.culled += 1;
            continue;
        }
        let cov = frame.t * frame.sigma * frame.t.transpose() + Matrix2::identity() * COV2D_REGULARIZER;
        let cov = 0.5 * (cov + cov.transpose());
        let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(0, 1)];
        if !(det > 0.0) {
            out.culled += 1;
            continue;
        }
        let conic = [cov[(1, 1)] / det, -cov[(0, 1)] / det, cov[(0, 0)] / det];
        // alpha >= ALPHA_MIN  <=>  d^T conic d <= 2 ln(opacity / ALPHA_MIN)
        let q_max = 2.0 * (g.opacity / ALPHA_MIN).ln();
        let extent = Vector2::new((q_max * cov[(0, 0)]).sqrt(), (q_max * cov[(1, 1)]).sqrt()) * (1.0 + 1e-9);
        let mid = 0.5 * (cov[(0, 0)] + cov[(1, 1)]);
        let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
        out.splats.push(Splat2D {
            mean: Vector2::new(f * p.x / p.z + cx, f * p.y / p.z + cy),
            cov,
            conic,
            depth: p.z,
            opacity: g.opacity,
            color: g.color,
            semantic: g.semantic.clone(),
            source: i,
            extent,
            radius: 3.0 * lambda_max.sqrt(),
        });
    }
    out
}

/// Upstream gradient on one splat's 2D quantities.
#[derive(Clone, Debug, Default)]
pub(crate) struct SplatGrad {
    pub mean: Vector2<f64>,
    pub conic: [f64; 3],
}

/// Gradients of one Gaussian's geometric parameters.
pub(crate) struct GeometryGrad {
    pub mean: Vec3,
    /// Symmetric gradient with respect to the 3D covariance.
    pub cov: Mat3,
}

/// Adjoint of [`project`] for one splat: maps gradients on the pixel mean and
/// conic back to the world-space mean and covariance.
pub(crate) fn project_backward(g: &Gaussian3D, cam: &Camera, world_rot: &Mat3, grad: &SplatGrad) -> GeometryGrad {
    let frame = projection_frame(g, cam, world_rot);
    let f = cam.focal();
    let (x, y, z) = (frame.cam_point.x, frame.cam_point.y, frame.cam_point.z);
    let k = frame.t * frame.sigma * frame.t.transpose() + Matrix2::identity() * COV2D_REGULARIZER;
    let (k0, k1, k2) = (k[(0, 0)], k[(0, 1)], k[(1, 1)]);
    let det = k0 * k2 - k1 * k1;
    let det2 = det * det;
    let [ga, gb, gc] = grad.conic;

    // conic = (k2, -k1, k0) / det
    let gk0 = ga * (-k2 * k2 / det2) + gb * (k1 * k2 / det2) + gc * (-k1 * k1 / det2);
    let gk1 = ga * (2.0 * k1 * k2 / det2) + gb * (-1.0 / det - 2.0 * k1 * k1 / det2) + gc * (2.0 * k0 * k1 / det2);
    let gk2 = ga * (-k1 * k1 / det2) + gb * (k0 * k1 / det2) + gc * (-k0 * k0 / det2);
    let g_k = Matrix2::new(gk0, 0.5 * gk1, 0.5 * gk1, gk2);

    let g_sigma = frame.t.transpose() * g_k * frame.t;
    let g_t = g_k * frame.t * frame.sigma * 2.0;
    let g_j = g_t * world_rot.transpose();

    let z2 = z * z;
    let z3 = z2 * z;
    let mut gp = Vec3::zeros();
    gp.x += g_j[(0, 2)] * (-f / z2);
    gp.y += g_j[(1, 2)] * (-f / z2);
    gp.z += g_j[(0, 0)] * (-f / z2)
        + g_j[(0, 2)] * (2.0 * f * x / z3)
        + g_j[(1, 1)] * (-f / z2)
        + g_j[(1, 2)] * (2.0 * f * y / z3);
    gp.x += grad.mean.x * f / z;
    gp.y += grad.mean.y * f / z;
    gp.z += -grad.mean.x * f * x / z2 - grad.mean.y * f * y / z2;

    GeometryGrad { mean: world_rot.transpose() * gp, cov: 0.5 * (g_sigma + g_sigma.transpose()) }
}

/// Pulls a covariance gradient back onto `(scale, quaternion)` factors.
pub(crate) fn covariance_backward(g: &Gaussian3D, g_cov: &Mat3) -> (Vec3, Vector4<f64>) {
    let r = rotation_matrix(&g.rotation);
    let m = r * Mat3::from_diagonal(&g.scale);
    let g_m = g_cov * m * 2.0;
    let mut g_scale = Vec3::zeros();
    let mut g_r = Mat3::zeros();
    for i in 0..3 {
        for row in 0..3 {
            g_scale[i] += g_m[(row, i)] * r[(row, i)];
            g_r[(row, i)] = g_m[(row, i)] * g.scale[i];
        }
    }
    (g_scale, rotation_matrix_backward(&g.rotation, &g_r))
}
