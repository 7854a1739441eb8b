//! Self-checks runnable outside the test harness: renderer gradients
//! against central differences, tiled compositing against the reference
//! renderer, mask partition and pooling properties, and layout tiling.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Quaternion, UnitQuaternion, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::layout::{decompose, execute_program_with, CannedPlanner, Planner, RegionTree, ValidationOptions};
use crate::raster::{project, render_backward, render_composed, render_reference, render_with, Image, RenderOptions, ALPHA_MIN};
use crate::scene::{BoundingBox, Camera, Gaussian3D, ObjectModel, ObjectTransform, Region, RegionId, Scene};
use crate::semantic::{masks, pool_masks, probabilities, PseudoEmbedder, Subprompt, SubpromptSet, EmbeddingProvider};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Gradients,
    Compositing,
    Masks,
    Layout,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Gradients, Suite::Compositing, Suite::Masks, Suite::Layout];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Gradients => "gradients",
            Suite::Compositing => "compositing",
            Suite::Masks => "masks",
            Suite::Layout => "layout",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown suite '{s}' (expected gradients, compositing, masks or layout)"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub passed: bool,
    pub cases: Vec<CaseResult>,
}

impl SuiteReport {
    fn new(suite: Suite, cases: Vec<CaseResult>) -> Self {
        Self { suite, passed: cases.iter().all(|c| c.passed), cases }
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> SuiteReport {
    let cases = match suite {
        Suite::Gradients => gradients(seed),
        Suite::Compositing => compositing(seed),
        Suite::Masks => mask_properties(seed),
        Suite::Layout => layout(),
    };
    SuiteReport::new(suite, cases)
}

fn case(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> CaseResult {
    CaseResult { name: name.into(), passed, detail: detail.into() }
}

fn random_gaussian(r: &mut ChaCha8Rng, spread: f64, d_f: usize) -> Gaussian3D {
    let axis = Vector3::from_fn(|_, _| r.random_range(-1.0..1.0));
    Gaussian3D {
        mean: Vector3::from_fn(|_, _| r.random_range(-spread..spread)),
        scale: Vector3::from_fn(|_, _| r.random_range(0.05..0.3)),
        rotation: UnitQuaternion::from_scaled_axis(axis),
        opacity: r.random_range(0.2..0.9),
        color: Vector3::from_fn(|_, _| r.random_range(0.0..1.0)),
        semantic: (0..d_f).map(|_| r.random_range(-1.0..1.0)).collect(),
        region: RegionId::default(),
    }
}

fn random_camera(r: &mut ChaCha8Rng, size: usize) -> Camera {
    let az: f64 = r.random_range(0.0..std::f64::consts::TAU);
    let el: f64 = r.random_range(-0.5..0.9);
    let d = r.random_range(3.0..4.5);
    let pos = Vector3::new(d * el.cos() * az.cos(), d * el.cos() * az.sin(), d * el.sin());
    Camera::looking_at(pos, Vector3::zeros(), r.random_range(0.6..1.0), size, size).expect("valid camera")
}

fn random_scene(r: &mut ChaCha8Rng, objects: usize, per_object: usize) -> Scene {
    let objs = (0..objects)
        .map(|k| {
            let gaussians = (0..per_object)
                .map(|_| Gaussian3D { region: RegionId::new(k, 0), ..random_gaussian(r, 0.5, 2) })
                .collect();
            let axis = Vector3::from_fn(|_, _| r.random_range(-0.5..0.5));
            let translation = Vector3::from_fn(|_, _| r.random_range(-0.4..0.4));
            ObjectModel {
                id: format!("obj{k}"),
                prompt: format!("object {k}"),
                regions: vec![Region { subprompt: format!("object {k}"), bbox: BoundingBox::centered(Vector3::repeat(1.0)) }],
                gaussians,
                transform: ObjectTransform::new(r.random_range(0.7..1.3), UnitQuaternion::from_scaled_axis(axis), translation)
                    .expect("valid transform"),
            }
        })
        .collect();
    Scene::new("random scene", objs).expect("valid scene")
}

/// Scenes where a difference step could cross the depth order or the
/// alpha skip threshold are redrawn; both are true discontinuities.
fn smooth_scene(r: &mut ChaCha8Rng, objects: usize, per_object: usize, size: usize) -> (Scene, Camera) {
    loop {
        let scene = random_scene(r, objects, per_object);
        let cam = random_camera(r, size);
        let flat = scene.compose(None).expect("all objects");
        let mut depths: Vec<f64> = flat.iter().map(|g| cam.world_to_camera(&g.mean).z).collect();
        depths.sort_by(f64::total_cmp);
        if depths.windows(2).all(|w| w[1] - w[0] > 1e-3) && !near_alpha_threshold(&flat, &cam) {
            return (scene, cam);
        }
    }
}

fn near_alpha_threshold(flat: &[Gaussian3D], cam: &Camera) -> bool {
    let splats = project(flat, cam).splats;
    (0..cam.height).any(|y| {
        (0..cam.width).any(|x| {
            splats.iter().any(|s| {
                let (dx, dy) = (x as f64 + 0.5 - s.mean.x, y as f64 + 0.5 - s.mean.y);
                let [a, b, c] = s.conic;
                let alpha = s.opacity * (-0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy)).exp();
                (alpha / ALPHA_MIN - 1.0).abs() < 2e-3
            })
        })
    })
}

fn dot(a: &Image, b: &Image) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
}

fn quat_vec(q: &UnitQuaternion<f64>) -> Vector4<f64> {
    Vector4::new(q.w, q.i, q.j, q.k)
}

fn nudge_quat(q: &mut UnitQuaternion<f64>, c: usize, d: f64) {
    let mut v = quat_vec(q);
    v[c] += d;
    *q = UnitQuaternion::from_quaternion(Quaternion::new(v[0], v[1], v[2], v[3]));
}

/// Parameter addressed as (object, gaussian or none, slot).
#[derive(Clone, Copy, Debug)]
enum Param {
    Gauss(usize, usize, usize),
    Xf(usize, usize),
}

/// Gaussian slots: mean 0..3, scale 3..6, color 6..9, rotation 9..13,
/// opacity 13. Transform slots: scale 0, rotation 1..5, translation 5..8.
fn nudge(scene: &mut Scene, p: Param, d: f64) -> f64 {
    match p {
        Param::Gauss(k, i, s) => {
            let g = &mut scene.objects[k].gaussians[i];
            match s {
                0..3 => g.mean[s] += d,
                3..6 => g.scale[s - 3] += d,
                6..9 => g.color[s - 6] += d,
                9..13 => nudge_quat(&mut g.rotation, s - 9, d),
                _ => g.opacity += d,
            }
            match s {
                0..3 => g.mean[s],
                3..6 => g.scale[s - 3],
                6..9 => g.color[s - 6],
                9..13 => quat_vec(&g.rotation)[s - 9],
                _ => g.opacity,
            }
        }
        Param::Xf(k, s) => {
            let t = &mut scene.objects[k].transform;
            match s {
                0 => t.scale += d,
                1..5 => nudge_quat(&mut t.rotation, s - 1, d),
                _ => t.translation[s - 5] += d,
            }
            match s {
                0 => t.scale,
                1..5 => quat_vec(&t.rotation)[s - 1],
                _ => t.translation[s - 5],
            }
        }
    }
}

/// Share of parameters whose analytic derivative of `<wc, I> + <wf, F>`
/// agrees with a central difference to relative 1e-3 (absolute 1e-6 for
/// parameters with no measurable influence).
fn gradient_agreement(scene: &Scene, cam: &Camera, wc: &Image, wf: &Image) -> (usize, usize) {
    let objects: Vec<usize> = (0..scene.objects.len()).collect();
    let loss = |s: &Scene| {
        let out = render_composed(s, &objects, cam, &RenderOptions { retain: false, feature_dim: Some(wf.channels) });
        dot(&out.color, wc) + dot(&out.features, wf)
    };
    let out = render_composed(scene, &objects, cam, &RenderOptions { retain: true, feature_dim: Some(wf.channels) });
    let grads = render_backward(&out, wc, wf).expect("retained render");
    let mut params = Vec::new();
    let mut offset = 0;
    for (k, obj) in scene.objects.iter().enumerate() {
        for i in 0..obj.gaussians.len() {
            let g = &grads.gaussians[offset + i];
            for s in 0..14 {
                let a = match s {
                    0..3 => g.mean[s],
                    3..6 => g.scale[s - 3],
                    6..9 => g.color[s - 6],
                    9..13 => g.rotation[s - 9],
                    _ => g.opacity,
                };
                params.push((Param::Gauss(k, i, s), a));
            }
        }
        offset += obj.gaussians.len();
    }
    for (k, tg) in &grads.transforms {
        params.push((Param::Xf(*k, 0), tg.scale));
        for c in 0..4 {
            params.push((Param::Xf(*k, 1 + c), tg.rotation[c]));
        }
        for c in 0..3 {
            params.push((Param::Xf(*k, 5 + c), tg.translation[c]));
        }
    }
    let mut passed = 0;
    for &(p, analytic) in &params {
        let mut probe = scene.clone();
        let theta = nudge(&mut probe, p, 0.0);
        let h = 1e-4 * theta.abs().max(1.0);
        let mut up = scene.clone();
        nudge(&mut up, p, h);
        let mut down = scene.clone();
        nudge(&mut down, p, -h);
        let numeric = (loss(&up) - loss(&down)) / (2.0 * h);
        let err = (analytic - numeric).abs();
        if err <= 1e-3 * analytic.abs().max(numeric.abs()) || err <= 1e-6 {
            passed += 1;
        }
    }
    (passed, params.len())
}

fn gradients(seed: u64) -> Vec<CaseResult> {
    (0..10)
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1000).wrapping_add(i));
            let per = 1 + (i as usize % 10);
            let (scene, cam) = smooth_scene(&mut r, 2, per, 32);
            let wc = Image::from_fn(32, 32, 3, |_, _, _| r.random_range(-1.0..1.0));
            let wf = Image::from_fn(32, 32, 2, |_, _, _| r.random_range(-1.0..1.0));
            let (ok, total) = gradient_agreement(&scene, &cam, &wc, &wf);
            let share = ok as f64 / total.max(1) as f64;
            case(format!("scene {i} ({} gaussians)", 2 * per), share >= 0.95, format!("{ok}/{total} parameters agree"))
        })
        .collect()
}

fn compositing(seed: u64) -> Vec<CaseResult> {
    (0..50)
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1000).wrapping_add(i));
            let n = 1 + (i as usize * 4) % 200;
            let size = [16, 33, 48, 64][i as usize % 4];
            let gs: Vec<Gaussian3D> = (0..n).map(|_| random_gaussian(&mut r, 0.8, 3)).collect();
            let cam = random_camera(&mut r, size);
            let fast = render_with(&gs, &cam, &RenderOptions { retain: false, feature_dim: Some(3) });
            let slow = render_reference(&gs, &cam, 3);
            let err = fast
                .color
                .max_abs_diff(&slow.color)
                .max(fast.features.max_abs_diff(&slow.features))
                .max(fast.alpha.max_abs_diff(&slow.alpha));
            case(format!("{n} gaussians at {size}x{size}"), err <= 1e-5, format!("L-inf {err:.3e}"))
        })
        .collect()
}

fn mask_properties(seed: u64) -> Vec<CaseResult> {
    let d = 16;
    (0..100)
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1000).wrapping_add(i));
            let n = r.random_range(1..7);
            let e = PseudoEmbedder::new(i, d);
            let entries = (0..n)
                .map(|j| Subprompt {
                    object: j / 2,
                    region: j % 2,
                    text: format!("region {j}"),
                    embedding: e.encode(&format!("region {j}")).expect("pseudo embedding"),
                })
                .collect();
            let a = SubpromptSet::new(entries, 0.05).expect("valid prompts");
            let b = SubpromptSet { tau: a.tau / 10.0, ..a.clone() };
            let size = 64;
            let field = Image::from_fn(size, size, d, |_, _, _| r.random_range(-1.0..1.0));
            let alpha = Image::from_fn(size, size, 1, |_, _, _| r.random_range(0.0..1.0));
            let ma = masks(&probabilities(&field, &a).expect("shapes"), Some(&alpha), 0.05).expect("masks");
            let mb = masks(&probabilities(&field, &b).expect("shapes"), Some(&alpha), 0.05).expect("masks");
            let partition = (0..size * size).all(|p| (0..=n).map(|k| ma.mask(k)[p] as u32).sum::<u32>() == 1);
            let invariant = ma == mb;
            let pooled = pool_masks(&ma, 8, 8, 5).expect("pooling");
            let dilation = (0..n).all(|k| {
                let m = ma.mask(k);
                (0..64).all(|c| {
                    let (cy, cx) = (c / 8, c % 8);
                    let touched = (0..8).any(|dy| (0..8).any(|dx| m[(cy * 8 + dy) * size + cx * 8 + dx] == 1));
                    !touched || pooled.masks[k][c] == 1
                })
            });
            case(
                format!("field {i} ({n} prompts)"),
                partition && invariant && dilation,
                format!("partition {partition}, tau invariance {invariant}, pooled superset {dilation}"),
            )
        })
        .collect()
}

#[derive(Deserialize)]
struct TreeFixture {
    name: String,
    bounds: BoundingBox,
    tree: RegionTree,
}

#[derive(Deserialize)]
struct TreeFile {
    trees: Vec<TreeFixture>,
}

const REGION_TREES: &str = include_str!("../fixtures/region_trees.json");

/// Hand-traced placements of the built-in desk plan: scale, z rotation in
/// degrees, translation.
const DESK_TRACE: [(&str, f64, f64, [f64; 3]); 5] = [
    ("desk", 1.0, 0.0, [0.0, 0.0, 0.375]),
    ("monitor", 1.0, 180.0, [0.0, 0.2, 0.975]),
    ("lamp", 1.0, -30.0, [0.625, 0.15, 1.0]),
    ("mug", 1.2, 15.0, [-0.45, -0.1, 0.822]),
    ("chair", 0.9, 0.0, [0.0, -0.77, 0.45]),
];

fn layout() -> Vec<CaseResult> {
    let mut out = Vec::new();
    let trees: TreeFile = serde_json::from_str(REGION_TREES).expect("bundled fixture");
    for f in trees.trees {
        let c = match decompose(&f.bounds, &f.tree) {
            Ok(regions) => {
                let total: f64 = regions.iter().map(|r| r.bbox.volume()).sum();
                let parent = f.bounds.volume();
                let rel = (total - parent).abs() / parent;
                let overlaps = (0..regions.len())
                    .flat_map(|i| (i + 1..regions.len()).map(move |j| (i, j)))
                    .filter(|&(i, j)| regions[i].bbox.intersection_volume(&regions[j].bbox) != 0.0)
                    .count();
                case(
                    f.name,
                    rel <= 1e-9 && overlaps == 0,
                    format!("{} leaves, volume error {rel:.1e}, {overlaps} overlapping pairs", regions.len()),
                )
            }
            Err(e) => case(f.name, false, e.to_string()),
        };
        out.push(c);
    }
    let desk = CannedPlanner::default().plan("desk_scene").and_then(|p| {
        let placed = execute_program_with(&p.parse_program()?, &p.bindings())?;
        let report = p.resolve()?.validate(&ValidationOptions::default());
        Ok((placed, report))
    });
    match desk {
        Ok((placed, report)) => {
            let mut worst: f64 = 0.0;
            let mut missing = Vec::new();
            for (id, s, deg, t) in DESK_TRACE {
                let Some(xf) = placed.get(id) else {
                    missing.push(id);
                    continue;
                };
                let want = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), deg.to_radians()).to_rotation_matrix();
                worst = worst
                    .max((xf.scale - s).abs())
                    .max((xf.rotation_matrix() - want.matrix()).amax())
                    .max((xf.translation - Vector3::from(t)).amax());
            }
            out.push(case(
                "desk program",
                missing.is_empty() && placed.len() == 5 && worst <= 1e-12,
                format!("max deviation {worst:.1e} from the hand trace{}", if missing.is_empty() { String::new() } else { format!(", missing {missing:?}") }),
            ));
            out.push(case("desk layout", report.is_clean(), format!("{} pairs checked", report.pairs.len())));
        }
        Err(e) => out.push(case("desk program", false, e.to_string())),
    }
    out
}
