use nalgebra::{Vector2, Vector4};
use rayon::prelude::*;

use super::project::{covariance_backward, project_backward, SplatGrad};
use super::{splat_alpha, Image, RenderError, RenderOutput, Retained, TileRecord};
use crate::math::{rotation_matrix, rotation_matrix_backward, Mat3, Vec3};

/// Gradient of the loss with respect to one Gaussian's parameters. Rotation
/// gradients are taken with respect to the raw `(w, x, y, z)` quaternion
/// components through the normalization.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianGrad {
    pub mean: Vec3,
    pub scale: Vec3,
    pub rotation: Vector4<f64>,
    pub opacity: f64,
    pub color: Vec3,
    pub semantic: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TransformGrad {
    pub scale: f64,
    pub rotation: Vector4<f64>,
    pub translation: Vec3,
}

#[derive(Clone, Debug, Default)]
pub struct RenderGradients {
    /// One entry per rendered Gaussian. For composed renders these are with
    /// respect to the object-local parameters.
    pub gaussians: Vec<GaussianGrad>,
    /// Gradient with respect to each Gaussian's pixel-space mean.
    pub view_mean: Vec<Vector2<f64>>,
    /// `(object index, gradient)` for composed renders.
    pub transforms: Vec<(usize, TransformGrad)>,
}

impl RenderGradients {
    pub fn is_finite(&self) -> bool {
        let g_ok = self.gaussians.iter().all(|g| {
            g.mean.iter().chain(g.scale.iter()).chain(g.rotation.iter()).chain(g.color.iter()).all(|v| v.is_finite())
                && g.opacity.is_finite()
                && g.semantic.iter().all(|v| v.is_finite())
        });
        let t_ok = self
            .transforms
            .iter()
            .all(|(_, t)| t.scale.is_finite() && t.rotation.iter().chain(t.translation.iter()).all(|v| v.is_finite()));
        g_ok && t_ok
    }
}

/// Gradient layout per splat inside a tile buffer.
const MEAN: usize = 0;
const CONIC: usize = 2;
const OPACITY: usize = 5;
const COLOR: usize = 6;
const SEMANTIC: usize = 9;

/// Reverse-mode pass through compositing, projection and (for composed
/// renders) the local-to-global transforms.
pub fn render_backward(out: &RenderOutput, d_color: &Image, d_features: &Image) -> Result<RenderGradients, RenderError> {
    let r = out.retained.as_ref().ok_or(RenderError::MissingState)?;
    if !d_color.same_shape(&out.color) {
        return Err(RenderError::ShapeMismatch(format!(
            "color gradient is {}x{}x{}, render is {}x{}x3",
            d_color.height, d_color.width, d_color.channels, out.color.height, out.color.width
        )));
    }
    if !d_features.same_shape(&out.features) {
        return Err(RenderError::ShapeMismatch(format!(
            "feature gradient is {}x{}x{}, render is {}x{}x{}",
            d_features.height,
            d_features.width,
            d_features.channels,
            out.features.height,
            out.features.width,
            out.features.channels
        )));
    }
    let d_f = out.features.channels;
    let stride = SEMANTIC + d_f;

    let tile_grads: Vec<Vec<f64>> =
        r.tiles.par_iter().map(|t| backward_tile(t, r, d_color, d_features, d_f)).collect();

    // Deterministic reduction in tile order.
    let mut splat_grads = vec![0.0; r.splats.len() * stride];
    for (tile, buf) in r.tiles.iter().zip(&tile_grads) {
        for (pos, &si) in tile.list.iter().enumerate() {
            let dst = &mut splat_grads[si as usize * stride..(si as usize + 1) * stride];
            for (d, s) in dst.iter_mut().zip(&buf[pos * stride..(pos + 1) * stride]) {
                *d += s;
            }
        }
    }

    let n = r.gaussians.len();
    let mut grads = RenderGradients {
        gaussians: vec![GaussianGrad { semantic: vec![0.0; d_f], ..Default::default() }; n],
        view_mean: vec![Vector2::zeros(); n],
        transforms: Vec::new(),
    };
    // Gradients on global means/covariances, needed for the transform chain.
    let mut global_cov = vec![Mat3::zeros(); n];
    let world_rot = r.camera.rotation();

    for (si, splat) in r.splats.iter().enumerate() {
        let gbuf = &splat_grads[si * stride..(si + 1) * stride];
        let src = splat.source;
        let g = &r.gaussians[src];
        let sg = SplatGrad {
            mean: Vector2::new(gbuf[MEAN], gbuf[MEAN + 1]),
            conic: [gbuf[CONIC], gbuf[CONIC + 1], gbuf[CONIC + 2]],
        };
        let geo = project_backward(g, &r.camera, &world_rot, &sg);
        let out_g = &mut grads.gaussians[src];
        out_g.mean = geo.mean;
        out_g.opacity = gbuf[OPACITY];
        out_g.color = Vec3::new(gbuf[COLOR], gbuf[COLOR + 1], gbuf[COLOR + 2]);
        out_g.semantic.copy_from_slice(&gbuf[SEMANTIC..SEMANTIC + d_f]);
        grads.view_mean[src] = sg.mean;
        global_cov[src] = geo.cov;
    }

    match &r.composition {
        None => {
            for (i, g) in r.gaussians.iter().enumerate() {
                let (gs, gq) = covariance_backward(g, &global_cov[i]);
                grads.gaussians[i].scale = gs;
                grads.gaussians[i].rotation = gq;
            }
        }
        Some(comp) => {
            for (j, range) in comp.ranges.iter().enumerate() {
                let xf = &comp.transforms[j];
                let s = xf.scale;
                let rt = rotation_matrix(&xf.rotation);
                let mut g_s = 0.0;
                let mut g_rt = Mat3::zeros();
                let mut g_t = Vec3::zeros();
                for i in range.clone() {
                    let local = &comp.locals[i];
                    let g_mu = grads.gaussians[i].mean;
                    let g_sig = global_cov[i];
                    let sigma = local.covariance();
                    // mu' = s R mu + t
                    let r_mu = rt * local.mean;
                    g_s += g_mu.dot(&r_mu);
                    g_rt += g_mu * local.mean.transpose() * s;
                    g_t += g_mu;
                    // Sigma' = s^2 R Sigma R^T
                    g_s += 2.0 * s * (rt * sigma * rt.transpose()).component_mul(&g_sig).sum();
                    g_rt += g_sig * rt * sigma * (2.0 * s * s);
                    let g_local_cov = rt.transpose() * g_sig * rt * (s * s);
                    let (gs, gq) = covariance_backward(local, &g_local_cov);
                    let gg = &mut grads.gaussians[i];
                    gg.mean = rt.transpose() * g_mu * s;
                    gg.scale = gs;
                    gg.rotation = gq;
                }
                grads.transforms.push((
                    comp.objects[j],
                    TransformGrad { scale: g_s, rotation: rotation_matrix_backward(&xf.rotation, &g_rt), translation: g_t },
                ));
            }
        }
    }
    Ok(grads)
}

fn backward_tile(tile: &TileRecord, r: &Retained, d_color: &Image, d_features: &Image, d_f: usize) -> Vec<f64> {
    let stride = SEMANTIC + d_f;
    let mut buf = vec![0.0; tile.list.len() * stride];
    let mut alphas = Vec::new();
    let mut trans = Vec::new();
    let mut acc_f = vec![0.0; d_f];
    let mut p = 0;
    for y in tile.y0..tile.y1 {
        for x in tile.x0..tile.x1 {
            let contrib = &tile.contrib[tile.offsets[p] as usize..tile.offsets[p + 1] as usize];
            p += 1;
            if contrib.is_empty() {
                continue;
            }
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let dc = d_color.pixel(x, y);
            let df = d_features.pixel(x, y);

            alphas.clear();
            trans.clear();
            let mut t = 1.0;
            for &pos in contrib {
                let s = &r.splats[tile.list[pos as usize] as usize];
                let (alpha, falloff, dx, dy) = splat_alpha(s, px, py);
                alphas.push((alpha, falloff, dx, dy));
                trans.push(t);
                t *= 1.0 - alpha;
            }

            // Color and features composited behind the current splat.
            let mut acc_c = [0.0; 3];
            acc_f.iter_mut().for_each(|v| *v = 0.0);
            for (k, &pos) in contrib.iter().enumerate().rev() {
                let s = &r.splats[tile.list[pos as usize] as usize];
                let (alpha, falloff, dx, dy) = alphas[k];
                let t_k = trans[k];
                let w = alpha * t_k;
                let g = &mut buf[pos as usize * stride..(pos as usize + 1) * stride];

                let mut d_alpha = 0.0;
                for c in 0..3 {
                    g[COLOR + c] += w * dc[c];
                    d_alpha += dc[c] * (s.color[c] - acc_c[c]);
                    acc_c[c] = s.color[c] * alpha + (1.0 - alpha) * acc_c[c];
                }
                for f in 0..d_f {
                    let sem = s.semantic.get(f).copied().unwrap_or(0.0);
                    g[SEMANTIC + f] += w * df[f];
                    d_alpha += df[f] * (sem - acc_f[f]);
                    acc_f[f] = sem * alpha + (1.0 - alpha) * acc_f[f];
                }
                d_alpha *= t_k;

                g[OPACITY] += falloff * d_alpha;
                let d_power = alpha * d_alpha;
                let [a, b, c] = s.conic;
                g[MEAN] += d_power * (a * dx + b * dy);
                g[MEAN + 1] += d_power * (b * dx + c * dy);
                g[CONIC] += d_power * (-0.5 * dx * dx);
                g[CONIC + 1] += d_power * (-dx * dy);
                g[CONIC + 2] += d_power * (-0.5 * dy * dy);
            }
        }
    }
    buf
}
