use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use super::{Image, RenderOutput, ALPHA_MIN, COV2D_REGULARIZER, TRANSMITTANCE_MIN};
use crate::scene::{Camera, Gaussian3D};

/// Per-pixel brute-force renderer: every pixel evaluates every Gaussian and
/// sorts its own list. No tiling, no bounding boxes. It applies the same
/// alpha skip and early-termination thresholds as [`super::render`] so the
/// two agree to rounding error.
pub fn render_reference(gaussians: &[Gaussian3D], camera: &Camera, feature_dim: usize) -> RenderOutput {
    let (w, h) = (camera.width, camera.height);
    let forward = (camera.look_at - camera.position).normalize();
    let down = -(camera.up - forward * camera.up.dot(&forward)).normalize();
    let right = down.cross(&forward);
    let view = Matrix3::from_columns(&[right, down, forward]).transpose();
    let f = (h as f64 / 2.0) / (camera.fov_y / 2.0).tan();
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);

    struct Flat {
        mean: Vector2<f64>,
        inv: Matrix2<f64>,
        depth: f64,
        index: usize,
    }
    let mut flats = Vec::new();
    let mut culled = 0;
    let mut screen_radii = vec![0.0; gaussians.len()];
    for (index, g) in gaussians.iter().enumerate() {
        let p: Vector3<f64> = view * (g.mean - camera.position);
        if p.z <= camera.near || p.z >= camera.far || g.opacity < ALPHA_MIN {
            culled += 1;
            continue;
        }
        let rot = g.rotation.to_rotation_matrix().into_inner();
        let s = Matrix3::from_diagonal(&g.scale);
        let sigma = rot * s * s * rot.transpose();
        let j = Matrix2x3::new(f / p.z, 0.0, -f * p.x / (p.z * p.z), 0.0, f / p.z, -f * p.y / (p.z * p.z));
        let cov = j * view * sigma * view.transpose() * j.transpose() + Matrix2::identity() * COV2D_REGULARIZER;
        let Some(inv) = cov.try_inverse() else {
            culled += 1;
            continue;
        };
        if cov.determinant() <= 0.0 {
            culled += 1;
            continue;
        }
        let eig = cov.symmetric_eigenvalues();
        screen_radii[index] = 3.0 * eig.max().sqrt();
        flats.push(Flat { mean: Vector2::new(f * p.x / p.z + cx, f * p.y / p.z + cy), inv, depth: p.z, index });
    }

    let mut color = Image::zeros(w, h, 3);
    let mut features = Image::zeros(w, h, feature_dim);
    let mut alpha_img = Image::zeros(w, h, 1);
    let mut hits: Vec<(f64, usize, f64)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let px = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
            hits.clear();
            for fl in &flats {
                let d = px - fl.mean;
                let q = (d.transpose() * fl.inv * d)[(0, 0)];
                let a = gaussians[fl.index].opacity * (-0.5 * q).exp();
                hits.push((fl.depth, fl.index, a));
            }
            hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut t = 1.0;
            let mut c = [0.0; 3];
            let mut feat = vec![0.0; feature_dim];
            for &(_, i, a) in &hits {
                if a < ALPHA_MIN {
                    continue;
                }
                let g = &gaussians[i];
                for k in 0..3 {
                    c[k] += g.color[k] * a * t;
                }
                for (fv, s) in feat.iter_mut().zip(&g.semantic) {
                    *fv += s * a * t;
                }
                t *= 1.0 - a;
                if t < TRANSMITTANCE_MIN {
                    break;
                }
            }
            color.pixel_mut(x, y).copy_from_slice(&c);
            features.pixel_mut(x, y).copy_from_slice(&feat);
            alpha_img.pixel_mut(x, y)[0] = 1.0 - t;
        }
    }
    RenderOutput { color, features, alpha: alpha_img, culled, screen_radii, retained: None }
}
