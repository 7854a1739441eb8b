//! Scene representation: Gaussians, objects, transforms, cameras and boxes,
//! plus the local-to-global composition math.

mod bbox;
mod camera;
mod gaussian;
pub mod init;
pub mod io;
mod transform;

pub use bbox::BoundingBox;
pub use camera::Camera;
pub use gaussian::{covariance_from_factors, Gaussian3D, RegionId, MIN_SCALE};
pub use transform::{transform_to_global, ObjectTransform};

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A named sub-volume of an object, labelled by its subprompt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub subprompt: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

/// A set of Gaussians in object-local coordinates plus its placement.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectModel {
    pub id: String,
    pub prompt: String,
    pub regions: Vec<Region>,
    pub gaussians: Vec<Gaussian3D>,
    pub transform: ObjectTransform,
}

impl ObjectModel {
    /// Local bounding box: the union of the region boxes, or the Gaussian
    /// means when the object has no regions.
    pub fn local_bounds(&self) -> Option<BoundingBox> {
        let boxes = self.regions.iter().map(|r| r.bbox);
        let from_regions = boxes.reduce(|a, b| a.union(&b));
        from_regions.or_else(|| BoundingBox::from_points(self.gaussians.iter().map(|g| g.mean)))
    }

    /// Object center in global coordinates.
    pub fn global_center(&self) -> crate::math::Vec3 {
        let local = self.local_bounds().map(|b| b.center()).unwrap_or_default();
        self.transform.apply_point(&local)
    }

    /// Radius of the object's global bounding sphere around its center.
    pub fn global_radius(&self) -> f64 {
        self.local_bounds()
            .map(|b| 0.5 * b.diagonal() * self.transform.scale)
            .unwrap_or(0.0)
    }

    fn check_regions(&self, k: usize) -> Result<(), SceneError> {
        for g in &self.gaussians {
            if g.region.object as usize != k || g.region.region as usize >= self.regions.len() {
                return Err(SceneError::InvalidParameter(format!(
                    "object '{}' holds a Gaussian with region ({}, {}) that does not exist",
                    self.id, g.region.object, g.region.region
                )));
            }
        }
        Ok(())
    }
}

/// A full scene: the user prompt plus its placed objects.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub prompt: String,
    pub objects: Vec<ObjectModel>,
}

impl Scene {
    pub fn new(prompt: impl Into<String>, objects: Vec<ObjectModel>) -> Result<Self, SceneError> {
        let scene = Self { prompt: prompt.into(), objects };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.objects.is_empty() {
            return Err(SceneError::InvalidParameter("scene has no objects".into()));
        }
        let mut seen = HashSet::new();
        for (k, obj) in self.objects.iter().enumerate() {
            if !seen.insert(obj.id.as_str()) {
                return Err(SceneError::InvalidParameter(format!("duplicate object id '{}'", obj.id)));
            }
            obj.transform.validate()?;
            obj.check_regions(k)?;
            for g in &obj.gaussians {
                g.validate()?;
            }
        }
        Ok(())
    }

    pub fn object_index(&self, id: &str) -> Result<usize, SceneError> {
        self.objects
            .iter()
            .position(|o| o.id == id)
            .ok_or_else(|| SceneError::NotFound(format!("object '{id}'")))
    }

    pub fn gaussian_count(&self) -> usize {
        self.objects.iter().map(|o| o.gaussians.len()).sum()
    }

    /// Resolves an optional id subset into object indices, in scene order.
    pub fn select(&self, subset: Option<&[&str]>) -> Result<Vec<usize>, SceneError> {
        match subset {
            None => Ok((0..self.objects.len()).collect()),
            Some(ids) => {
                let mut idx = ids.iter().map(|id| self.object_index(id)).collect::<Result<Vec<_>, _>>()?;
                idx.sort_unstable();
                idx.dedup();
                Ok(idx)
            }
        }
    }

    /// Transforms the selected objects into global coordinates and
    /// concatenates them (object order, then Gaussian order).
    pub fn compose(&self, subset: Option<&[&str]>) -> Result<Vec<Gaussian3D>, SceneError> {
        let idx = self.select(subset)?;
        Ok(self.compose_indices(&idx))
    }

    pub fn compose_indices(&self, objects: &[usize]) -> Vec<Gaussian3D> {
        objects
            .iter()
            .flat_map(|&k| {
                let obj = &self.objects[k];
                obj.gaussians.iter().map(move |g| transform_to_global(g, &obj.transform))
            })
            .collect()
    }

    /// Bounding box of the global object boxes.
    pub fn global_bounds(&self) -> Option<BoundingBox> {
        self.objects
            .iter()
            .filter_map(|o| o.local_bounds().map(|b| b.transformed(&o.transform)))
            .reduce(|a, b| a.union(&b))
    }
}

/// Free-function form of [`Scene::compose`].
pub fn compose_scene(scene: &Scene, subset: Option<&[&str]>) -> Result<Vec<Gaussian3D>, SceneError> {
    scene.compose(subset)
}
