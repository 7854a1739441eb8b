#![allow(dead_code)]

pub mod http;

use nalgebra::{UnitQuaternion, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semsplat_core::raster::{project, render_backward, render_composed, render_with, Image, RenderOptions, ALPHA_MIN};
use semsplat_core::scene::{BoundingBox, Camera, Gaussian3D, ObjectModel, ObjectTransform, Region, RegionId, Scene};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_gaussian(r: &mut ChaCha8Rng, spread: f64, d_f: usize) -> Gaussian3D {
    let axis = Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
    let rotation = UnitQuaternion::from_scaled_axis(axis);
    Gaussian3D {
        mean: Vector3::new(
            r.random_range(-spread..spread),
            r.random_range(-spread..spread),
            r.random_range(-spread..spread),
        ),
        scale: Vector3::new(r.random_range(0.05..0.3), r.random_range(0.05..0.3), r.random_range(0.05..0.3)),
        rotation,
        opacity: r.random_range(0.2..0.9),
        color: Vector3::new(r.random_range(0.0..1.0), r.random_range(0.0..1.0), r.random_range(0.0..1.0)),
        semantic: (0..d_f).map(|_| r.random_range(-1.0..1.0)).collect(),
        region: RegionId::default(),
    }
}

pub fn random_camera(r: &mut ChaCha8Rng, size: usize) -> Camera {
    let az: f64 = r.random_range(0.0..std::f64::consts::TAU);
    let el: f64 = r.random_range(-0.5..0.9);
    let d = r.random_range(3.0..4.5);
    let pos = Vector3::new(d * el.cos() * az.cos(), d * el.cos() * az.sin(), d * el.sin());
    Camera::looking_at(pos, Vector3::zeros(), r.random_range(0.6..1.0), size, size).unwrap()
}

/// Random weights for a scalar loss `sum(w_c * I) + sum(w_f * F)`.
pub fn random_weights(r: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> Image {
    let mut img = Image::zeros(w, h, c);
    for v in img.data.iter_mut() {
        *v = r.random_range(-1.0..1.0);
    }
    img
}

fn dot(a: &Image, b: &Image) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
}

/// One scalar parameter of a scene that can be read and written.
#[derive(Clone, Copy, Debug)]
pub enum Param {
    Mean(usize, usize, usize),
    Scale(usize, usize, usize),
    Rot(usize, usize, usize),
    Opacity(usize, usize),
    Color(usize, usize, usize),
    XfScale(usize),
    XfRot(usize, usize),
    XfTrans(usize, usize),
}

fn quat_vec(q: &UnitQuaternion<f64>) -> Vector4<f64> {
    Vector4::new(q.w, q.i, q.j, q.k)
}

fn quat_set(q: &mut UnitQuaternion<f64>, v: Vector4<f64>) {
    *q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(v[0], v[1], v[2], v[3]));
}

fn get(scene: &Scene, p: Param) -> f64 {
    let o = &scene.objects;
    match p {
        Param::Mean(k, i, c) => o[k].gaussians[i].mean[c],
        Param::Scale(k, i, c) => o[k].gaussians[i].scale[c],
        Param::Rot(k, i, c) => quat_vec(&o[k].gaussians[i].rotation)[c],
        Param::Opacity(k, i) => o[k].gaussians[i].opacity,
        Param::Color(k, i, c) => o[k].gaussians[i].color[c],
        Param::XfScale(k) => o[k].transform.scale,
        Param::XfRot(k, c) => quat_vec(&o[k].transform.rotation)[c],
        Param::XfTrans(k, c) => o[k].transform.translation[c],
    }
}

/// Returns a copy of `scene` with one parameter moved by `delta`.
/// Quaternion components are perturbed raw and renormalized.
fn perturbed(scene: &Scene, p: Param, delta: f64) -> Scene {
    let mut s = scene.clone();
    let o = &mut s.objects;
    match p {
        Param::Mean(k, i, c) => o[k].gaussians[i].mean[c] += delta,
        Param::Scale(k, i, c) => o[k].gaussians[i].scale[c] += delta,
        Param::Rot(k, i, c) => {
            let g = &mut o[k].gaussians[i];
            let mut v = quat_vec(&g.rotation);
            v[c] += delta;
            quat_set(&mut g.rotation, v);
        }
        Param::Opacity(k, i) => o[k].gaussians[i].opacity += delta,
        Param::Color(k, i, c) => o[k].gaussians[i].color[c] += delta,
        Param::XfScale(k) => o[k].transform.scale += delta,
        Param::XfRot(k, c) => {
            let mut v = quat_vec(&o[k].transform.rotation);
            v[c] += delta;
            quat_set(&mut o[k].transform.rotation, v);
        }
        Param::XfTrans(k, c) => o[k].transform.translation[c] += delta,
    }
    s
}

pub struct GradCheck {
    pub total: usize,
    pub passed: usize,
    pub worst: Vec<(String, f64, f64)>,
}

impl GradCheck {
    pub fn fraction(&self) -> f64 {
        self.passed as f64 / self.total.max(1) as f64
    }
}

/// Compares the analytic gradient of `<wc, I> + <wf, F>` with central finite
/// differences for every parameter of the scene, rendering the objects
/// composed through their transforms.
pub fn finite_difference_check(scene: &Scene, cam: &Camera, wc: &Image, wf: &Image) -> GradCheck {
    let objects: Vec<usize> = (0..scene.objects.len()).collect();
    let opts = RenderOptions { retain: true, feature_dim: Some(wf.channels) };
    let loss = |s: &Scene| {
        let out = render_composed(s, &objects, cam, &RenderOptions { retain: false, ..opts.clone() });
        dot(&out.color, wc) + dot(&out.features, wf)
    };
    let out = render_composed(scene, &objects, cam, &opts);
    let grads = render_backward(&out, wc, wf).unwrap();
    assert!(grads.is_finite());

    let mut params = Vec::new();
    let mut offset = 0;
    for (k, obj) in scene.objects.iter().enumerate() {
        for i in 0..obj.gaussians.len() {
            let g = &grads.gaussians[offset + i];
            for c in 0..3 {
                params.push((Param::Mean(k, i, c), g.mean[c]));
                params.push((Param::Scale(k, i, c), g.scale[c]));
                params.push((Param::Color(k, i, c), g.color[c]));
            }
            for c in 0..4 {
                params.push((Param::Rot(k, i, c), g.rotation[c]));
            }
            params.push((Param::Opacity(k, i), g.opacity));
        }
        offset += obj.gaussians.len();
    }
    for (k, tg) in &grads.transforms {
        params.push((Param::XfScale(*k), tg.scale));
        for c in 0..4 {
            params.push((Param::XfRot(*k, c), tg.rotation[c]));
        }
        for c in 0..3 {
            params.push((Param::XfTrans(*k, c), tg.translation[c]));
        }
    }

    let mut check = GradCheck { total: 0, passed: 0, worst: Vec::new() };
    for (p, analytic) in params {
        let theta = get(scene, p);
        let h = 1e-4 * theta.abs().max(1.0);
        let numeric = (loss(&perturbed(scene, p, h)) - loss(&perturbed(scene, p, -h))) / (2.0 * h);
        let err = (analytic - numeric).abs();
        let ok = err <= 1e-3 * analytic.abs().max(numeric.abs()) || err <= 1e-6;
        check.total += 1;
        if ok {
            check.passed += 1;
        } else {
            check.worst.push((format!("{p:?}"), analytic, numeric));
        }
    }
    check
}

/// Random scene with `objects` objects of `per_object` Gaussians each and
/// random non-trivial transforms.
pub fn random_scene(r: &mut ChaCha8Rng, objects: usize, per_object: usize, d_f: usize) -> Scene {
    let objs = (0..objects)
        .map(|k| {
            let mut gaussians: Vec<Gaussian3D> = (0..per_object).map(|_| random_gaussian(r, 0.5, d_f)).collect();
            for g in &mut gaussians {
                g.region = RegionId::new(k, 0);
            }
            let axis = Vector3::new(r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), r.random_range(-0.5..0.5));
            ObjectModel {
                id: format!("obj{k}"),
                prompt: format!("object {k}"),
                regions: vec![Region { subprompt: format!("object {k}"), bbox: BoundingBox::centered(Vector3::repeat(1.0)) }],
                gaussians,
                transform: ObjectTransform::new(
                    r.random_range(0.7..1.3),
                    UnitQuaternion::from_scaled_axis(axis),
                    Vector3::new(r.random_range(-0.4..0.4), r.random_range(-0.4..0.4), r.random_range(-0.4..0.4)),
                )
                .unwrap(),
            }
        })
        .collect();
    Scene::new("random scene", objs).unwrap()
}

/// Renders a flat Gaussian list without retention.
pub fn render_plain(gs: &[Gaussian3D], cam: &Camera, d_f: usize) -> semsplat_core::raster::RenderOutput {
    render_with(gs, cam, &RenderOptions { retain: false, feature_dim: Some(d_f) })
}

/// A scene and camera for gradient checks. Compositing has two true
/// discontinuities: the depth sort and the alpha skip threshold. Scenes
/// where a finite-difference step could cross either are resampled: two
/// Gaussians within 1e-3 in depth, or a pixel whose alpha lies within 0.2%
/// of the threshold.
pub fn gradient_scene(seed: u64, objects: usize, per_object: usize, size: usize) -> (Scene, Camera) {
    let mut r = rng(seed);
    loop {
        let scene = random_scene(&mut r, objects, per_object, 2);
        let cam = random_camera(&mut r, size);
        let mut depths: Vec<f64> = scene.compose(None).unwrap().iter().map(|g| cam.world_to_camera(&g.mean).z).collect();
        depths.sort_by(f64::total_cmp);
        if depths.windows(2).all(|w| w[1] - w[0] > 1e-3) && !near_alpha_threshold(&scene, &cam) {
            return (scene, cam);
        }
    }
}

fn near_alpha_threshold(scene: &Scene, cam: &Camera) -> bool {
    let splats = project(&scene.compose(None).unwrap(), cam).splats;
    for y in 0..cam.height {
        for x in 0..cam.width {
            for s in &splats {
                let dx = x as f64 + 0.5 - s.mean.x;
                let dy = y as f64 + 0.5 - s.mean.y;
                let [a, b, c] = s.conic;
                let alpha = s.opacity * (-0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy)).exp();
                if (alpha / ALPHA_MIN - 1.0).abs() < 2e-3 {
                    return true;
                }
            }
        }
    }
    false
}
