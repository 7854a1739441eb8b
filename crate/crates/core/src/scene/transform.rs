use nalgebra::UnitQuaternion;

use super::{Gaussian3D, SceneError};
use crate::math::{rotation_matrix, Mat3, Vec3};

/// Similarity transform taking object-local coordinates to the scene:
/// `x_global = s R x_local + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectTransform {
    pub scale: f64,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vec3,
}

impl Default for ObjectTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl ObjectTransform {
    pub fn identity() -> Self {
        Self { scale: 1.0, rotation: UnitQuaternion::identity(), translation: Vec3::zeros() }
    }

    pub fn new(scale: f64, rotation: UnitQuaternion<f64>, translation: Vec3) -> Result<Self, SceneError> {
        let xf = Self { scale, rotation, translation };
        xf.validate()?;
        Ok(xf)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(SceneError::InvalidParameter(format!("transform scale {} must be positive", self.scale)));
        }
        if (self.rotation_matrix().determinant() - 1.0).abs() > 1e-6 {
            return Err(SceneError::InvalidParameter("transform rotation is not proper".into()));
        }
        Ok(())
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        rotation_matrix(&self.rotation)
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.rotation_matrix() * p * self.scale + self.translation
    }

    /// `(1/s, R^T, -(1/s) R^T t)`.
    pub fn inverse(&self) -> Self {
        let inv_rot = self.rotation.inverse();
        Self {
            scale: 1.0 / self.scale,
            rotation: inv_rot,
            translation: -(rotation_matrix(&inv_rot) * self.translation) / self.scale,
        }
    }
}

/// Moves a local Gaussian into global coordinates:
/// `mu' = s R mu + t`, `Sigma' = s^2 R Sigma R^T`.
pub fn transform_to_global(g: &Gaussian3D, xf: &ObjectTransform) -> Gaussian3D {
    Gaussian3D {
        mean: xf.apply_point(&g.mean),
        scale: g.scale * xf.scale,
        rotation: xf.rotation * g.rotation,
        opacity: g.opacity,
        color: g.color,
        semantic: g.semantic.clone(),
        region: g.region,
    }
}
