//! Procedural Gaussian initializers and point-cloud import.

use std::path::Path;

use nalgebra::UnitQuaternion;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};

use super::{BoundingBox, Gaussian3D, Region, RegionId, SceneError};
use crate::math::Vec3;

/// Default number of Gaussians seeded per object.
pub const DEFAULT_GAUSSIANS_PER_OBJECT: usize = 12288;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    /// Uniform inside each region box, counts proportional to volume.
    UniformBox,
    /// Uniform on the sphere inscribed in the object box.
    SphereSurface,
    /// Uniform inside the ellipsoid inscribed in the object box.
    Ellipsoid,
}

pub fn uniform_in_box<R: Rng>(bbox: &BoundingBox, n: usize, rng: &mut R) -> Vec<Vec3> {
    (0..n)
        .map(|_| {
            let u = Vec3::new(rng.random(), rng.random(), rng.random());
            bbox.min + bbox.extent().component_mul(&u)
        })
        .collect()
}

pub fn sphere_surface<R: Rng>(center: &Vec3, radius: f64, n: usize, rng: &mut R) -> Vec<Vec3> {
    (0..n)
        .map(|_| {
            let d: [f64; 3] = UnitSphere.sample(rng);
            center + Vec3::from(d) * radius
        })
        .collect()
}

/// Uniform samples inside an axis-aligned ellipsoid.
pub fn ellipsoid<R: Rng>(center: &Vec3, radii: &Vec3, n: usize, rng: &mut R) -> Vec<Vec3> {
    (0..n)
        .map(|_| {
            let d = Vec3::new(
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
            )
            .normalize();
            let r: f64 = rng.random::<f64>().cbrt();
            center + radii.component_mul(&d) * r
        })
        .collect()
}

/// A point with an optional RGB color, as read from a point cloud.
pub type ColoredPoint = (Vec3, Option<Vec3>);

/// Reads whitespace-separated `x y z [r g b]` lines; `#` starts a comment.
/// Colors above 1 are taken to be 8-bit and rescaled.
pub fn read_point_cloud(path: &Path) -> Result<Vec<ColoredPoint>, SceneError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals = line
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| SceneError::Format(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        match vals.len() {
            3 => out.push((Vec3::new(vals[0], vals[1], vals[2]), None)),
            6 => {
                let mut c = Vec3::new(vals[3], vals[4], vals[5]);
                if c.max() > 1.0 {
                    c /= 255.0;
                }
                out.push((Vec3::new(vals[0], vals[1], vals[2]), Some(c)));
            }
            n => {
                return Err(SceneError::Format(format!(
                    "{}:{}: expected 3 or 6 values, found {n}",
                    path.display(),
                    lineno + 1
                )))
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct SeedParams {
    pub opacity: f64,
    pub color: Vec3,
    /// Gaussian scale as a multiple of the mean point spacing.
    pub scale_factor: f64,
}

impl Default for SeedParams {
    fn default() -> Self {
        Self { opacity: 0.7, color: Vec3::repeat(0.5), scale_factor: 0.8 }
    }
}

/// Index of the region containing `p`, falling back to the nearest box.
pub fn region_of(regions: &[Region], p: &Vec3) -> usize {
    if let Some(i) = regions.iter().position(|r| r.bbox.contains(p)) {
        return i;
    }
    regions
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let clamped = p.sup(&r.bbox.min).inf(&r.bbox.max);
            (i, (clamped - p).norm_squared())
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Samples `n` positions for an object with the given sampler.
pub fn sample_positions<R: Rng>(regions: &[Region], sampler: Sampler, n: usize, rng: &mut R) -> Vec<Vec3> {
    let Some(bounds) = regions.iter().map(|r| r.bbox).reduce(|a, b| a.union(&b)) else {
        return Vec::new();
    };
    match sampler {
        Sampler::UniformBox => {
            let total: f64 = regions.iter().map(|r| r.bbox.volume()).sum();
            let mut out = Vec::with_capacity(n);
            let mut assigned = 0;
            for (i, r) in regions.iter().enumerate() {
                let count = if i + 1 == regions.len() {
                    n - assigned
                } else if total > 0.0 {
                    ((r.bbox.volume() / total) * n as f64).round() as usize
                } else {
                    n / regions.len()
                };
                let count = count.min(n - assigned);
                assigned += count;
                out.extend(uniform_in_box(&r.bbox, count, rng));
            }
            out
        }
        Sampler::SphereSurface => sphere_surface(&bounds.center(), 0.5 * bounds.extent().min(), n, rng),
        Sampler::Ellipsoid => ellipsoid(&bounds.center(), &(bounds.extent() * 0.5), n, rng),
    }
}

/// Builds Gaussians at the given positions, labelling each with the region
/// that contains it and that region's compressed embedding.
pub fn seed_gaussians(
    object: usize,
    regions: &[Region],
    points: &[ColoredPoint],
    region_semantics: &[Vec<f64>],
    params: &SeedParams,
) -> Vec<Gaussian3D> {
    let bounds = regions
        .iter()
        .map(|r| r.bbox)
        .reduce(|a, b| a.union(&b))
        .or_else(|| BoundingBox::from_points(points.iter().map(|p| p.0)));
    let volume = bounds.map(|b| b.volume()).unwrap_or(1.0).max(1e-12);
    let spacing = (volume / points.len().max(1) as f64).cbrt();
    let scale = (spacing * params.scale_factor).max(super::MIN_SCALE);
    points
        .iter()
        .map(|(p, c)| {
            let l = if regions.is_empty() { 0 } else { region_of(regions, p) };
            Gaussian3D {
                mean: *p,
                scale: Vec3::repeat(scale),
                rotation: UnitQuaternion::identity(),
                opacity: params.opacity,
                color: c.unwrap_or(params.color),
                semantic: region_semantics.get(l).cloned().unwrap_or_default(),
                region: RegionId::new(object, l),
            }
        })
        .collect()
}
