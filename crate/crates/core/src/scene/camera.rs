use serde::{Deserialize, Serialize};

use super::bbox::vec3_array;
use super::SceneError;
use crate::math::{Mat3, Vec3};

/// Pinhole camera. Camera space is right-handed with `x` right, `y` down and
/// `z` along the viewing direction; pixel `(i, j)` has its center at
/// `(i + 0.5, j + 0.5)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    #[serde(with = "vec3_array")]
    pub position: Vec3,
    #[serde(with = "vec3_array")]
    pub look_at: Vec3,
    #[serde(with = "vec3_array")]
    pub up: Vec3,
    /// Vertical field of view in radians.
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        position: Vec3,
        look_at: Vec3,
        up: Vec3,
        fov_y: f64,
        width: usize,
        height: usize,
        near: f64,
        far: f64,
    ) -> Result<Self, SceneError> {
        let cam = Self { position, look_at, up, fov_y, width, height, near, far };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `position` looking at `look_at` with `+z` up, 0.01..100 clip.
    pub fn looking_at(position: Vec3, look_at: Vec3, fov_y: f64, width: usize, height: usize) -> Result<Self, SceneError> {
        Self::new(position, look_at, Vec3::z(), fov_y, width, height, 0.01, 100.0)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(SceneError::InvalidParameter(format!(
                "need 0 < near < far, got near={} far={}",
                self.near, self.far
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(SceneError::InvalidParameter("image size must be positive".into()));
        }
        if !(self.fov_y > 0.0 && self.fov_y < std::f64::consts::PI) {
            return Err(SceneError::InvalidParameter(format!("field of view {} out of range", self.fov_y)));
        }
        let forward = self.look_at - self.position;
        if forward.norm() == 0.0 || forward.cross(&self.up).norm() <= 1e-12 * forward.norm() * self.up.norm() {
            return Err(SceneError::InvalidParameter("view direction is parallel to up".into()));
        }
        Ok(())
    }

    /// World-to-camera rotation; rows are the camera's right, down and
    /// forward axes expressed in world coordinates.
    pub fn rotation(&self) -> Mat3 {
        let forward = (self.look_at - self.position).normalize();
        let right = forward.cross(&self.up).normalize();
        let down = forward.cross(&right);
        Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()])
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation() * (p - self.position)
    }

    /// Focal length in pixels (square pixels).
    pub fn focal(&self) -> f64 {
        0.5 * self.height as f64 / (0.5 * self.fov_y).tan()
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (0.5 * self.width as f64, 0.5 * self.height as f64)
    }

    pub fn image_diagonal(&self) -> f64 {
        ((self.width * self.width + self.height * self.height) as f64).sqrt()
    }

    /// Same camera with a different output size.
    pub fn with_size(&self, width: usize, height: usize) -> Self {
        Self { width, height, ..self.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_cameras() {
        let ok = Camera::looking_at(Vec3::new(3.0, 0.0, 0.0), Vec3::zeros(), 0.8, 32, 32);
        assert!(ok.is_ok());
        assert!(Camera::looking_at(Vec3::new(0.0, 0.0, 3.0), Vec3::zeros(), 0.8, 32, 32).is_err());
        assert!(Camera::new(Vec3::x(), Vec3::zeros(), Vec3::z(), 0.8, 32, 32, 1.0, 0.5).is_err());
        assert!(Camera::new(Vec3::x(), Vec3::zeros(), Vec3::z(), 0.8, 0, 32, 0.1, 5.0).is_err());
    }

    #[test]
    fn rotation_is_proper_and_looks_forward() {
        let cam = Camera::looking_at(Vec3::new(2.0, -1.0, 0.5), Vec3::new(0.0, 0.3, 0.1), 0.8, 16, 16).unwrap();
        let r = cam.rotation();
        assert!((r.determinant() - 1.0).abs() < 1e-12);
        let p = cam.world_to_camera(&cam.look_at);
        assert!(p.x.abs() < 1e-12 && p.y.abs() < 1e-12 && p.z > 0.0);
    }
}
