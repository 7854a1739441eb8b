//! Object-specific view descriptors and training camera sampling.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{CameraConfig, ViewConfig};
use super::OptimError;
use crate::math::Vec3;
use crate::scene::{Camera, Scene};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewLabel {
    Front,
    Back,
    Side,
    Overhead,
}

impl ViewLabel {
    pub fn text(self) -> &'static str {
        match self {
            ViewLabel::Front => "front view",
            ViewLabel::Back => "back view",
            ViewLabel::Side => "side view",
            ViewLabel::Overhead => "overhead view",
        }
    }
}

impl fmt::Display for ViewLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.text())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewDescriptor {
    pub object: String,
    pub label: ViewLabel,
}

/// Elevation and azimuth in degrees of `position` seen from `center`.
/// Azimuth is measured from `+x` toward `+y` in `(-180, 180]`.
pub fn view_angles(position: &Vec3, center: &Vec3) -> Result<(f64, f64), OptimError> {
    let d = position - center;
    let n = d.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(OptimError::InvalidInput("camera coincides with the object center".into()));
    }
    let d = d / n;
    let elevation = d.z.clamp(-1.0, 1.0).asin().to_degrees();
    let azimuth = d.y.atan2(d.x).to_degrees();
    Ok((elevation, azimuth))
}

/// Overhead above `overhead_deg` elevation, otherwise front or back within
/// `front_half_width_deg` of `+x` or `-x`, and side in between.
pub fn view_label(elevation: f64, azimuth: f64, views: &ViewConfig) -> ViewLabel {
    if elevation > views.overhead_deg {
        ViewLabel::Overhead
    } else if azimuth.abs() <= views.front_half_width_deg {
        ViewLabel::Front
    } else if azimuth.abs() >= 180.0 - views.front_half_width_deg {
        ViewLabel::Back
    } else {
        ViewLabel::Side
    }
}

pub fn select_view_descriptor(
    camera: &Camera,
    object: &str,
    center: &Vec3,
    views: &ViewConfig,
) -> Result<ViewDescriptor, OptimError> {
    let (el, az) = view_angles(&camera.position, center)?;
    Ok(ViewDescriptor { object: object.to_string(), label: view_label(el, az, views) })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "objects")]
pub enum CameraMode {
    Scene,
    Pair(usize, usize),
    /// Object `k` in global coordinates.
    Object(usize),
    /// Object `k` in its own local frame, used by local steps.
    Local(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledView {
    pub camera: Camera,
    pub mode: CameraMode,
    pub elevation: f64,
    pub azimuth: f64,
    pub distance: f64,
}

/// Look-at point and framed radius for a mode.
pub fn framing(scene: &Scene, mode: CameraMode) -> Result<(Vec3, f64), OptimError> {
    let n = scene.objects.len();
    let check = |k: usize| {
        if k < n {
            Ok(())
        } else {
            Err(OptimError::InvalidInput(format!("object index {k} out of range for {n} objects")))
        }
    };
    match mode {
        CameraMode::Scene => {
            let b = scene.global_bounds().ok_or_else(|| OptimError::InvalidInput("scene has no extent".into()))?;
            Ok((b.center(), 0.5 * b.diagonal()))
        }
        CameraMode::Pair(i, j) => {
            check(i)?;
            check(j)?;
            let (a, b) = (&scene.objects[i], &scene.objects[j]);
            let (ca, cb) = (a.global_center(), b.global_center());
            let r = a.global_radius().max(b.global_radius()) + 0.5 * (ca - cb).norm();
            Ok(((ca + cb) * 0.5, r))
        }
        CameraMode::Object(k) => {
            check(k)?;
            let o = &scene.objects[k];
            Ok((o.global_center(), o.global_radius()))
        }
        CameraMode::Local(k) => {
            check(k)?;
            let b = scene.objects[k]
                .local_bounds()
                .ok_or_else(|| OptimError::InvalidInput(format!("object '{}' is empty", scene.objects[k].id)))?;
            Ok((b.center(), 0.5 * b.diagonal()))
        }
    }
}

/// Places a camera on a sphere around the framed point. Draws elevation,
/// azimuth, field of view and distance factor from `rng`, in that order.
pub fn sample_camera<R: Rng>(
    scene: &Scene,
    mode: CameraMode,
    ranges: &CameraConfig,
    width: usize,
    height: usize,
    rng: &mut R,
) -> Result<SampledView, OptimError> {
    let (center, radius) = framing(scene, mode)?;
    let draw = |r: [f64; 2], rng: &mut R| if r[0] < r[1] { rng.random_range(r[0]..r[1]) } else { r[0] };
    let elevation = draw(ranges.elevation_deg, rng);
    let azimuth = draw(ranges.azimuth_deg, rng);
    let fov = draw(ranges.fov_deg, rng);
    let factor = draw(ranges.distance_factor, rng);
    let distance = factor * radius.max(1e-6);
    let camera = orbit_camera(&center, distance, elevation, azimuth, fov, width, height)?;
    Ok(SampledView { camera, mode, elevation, azimuth, distance })
}

pub fn orbit_camera(
    center: &Vec3,
    distance: f64,
    elevation_deg: f64,
    azimuth_deg: f64,
    fov_deg: f64,
    width: usize,
    height: usize,
) -> Result<Camera, OptimError> {
    let (el, az) = (elevation_deg.to_radians(), azimuth_deg.to_radians());
    let dir = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
    Ok(Camera::looking_at(center + dir * distance, *center, fov_deg.to_radians(), width, height)?)
}

/// `views` cameras evenly spaced in azimuth around the whole scene at a fixed
/// elevation, starting on `+x`.
pub fn turntable(
    scene: &Scene,
    ranges: &CameraConfig,
    views: usize,
    elevation_deg: f64,
    width: usize,
    height: usize,
) -> Result<Vec<Camera>, OptimError> {
    let (center, radius) = framing(scene, CameraMode::Scene)?;
    let factor = 0.5 * (ranges.distance_factor[0] + ranges.distance_factor[1]);
    let fov = 0.5 * (ranges.fov_deg[0] + ranges.fov_deg[1]);
    (0..views)
        .map(|i| {
            let az = 360.0 * i as f64 / views as f64;
            orbit_camera(&center, factor * radius, elevation_deg, az, fov, width, height)
        })
        .collect()
}
