use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};

use super::SceneError;
use crate::math::{rotation_matrix, Mat3, Vec3};

/// Lower bound applied to every per-axis scale after an update.
pub const MIN_SCALE: f64 = 1e-6;

/// Which object region a Gaussian was seeded from: object index `k` within
/// the scene and region index `l` within that object.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RegionId {
    pub object: u32,
    pub region: u32,
}

impl RegionId {
    pub fn new(object: usize, region: usize) -> Self {
        Self { object: object as u32, region: region as u32 }
    }
}

/// One anisotropic Gaussian. The covariance is kept factored as
/// `R diag(scale)^2 R^T` so it stays positive definite.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian3D {
    pub mean: Vec3,
    pub scale: Vec3,
    pub rotation: UnitQuaternion<f64>,
    /// In `[0, 1]`.
    pub opacity: f64,
    pub color: Vec3,
    /// Compressed semantic embedding.
    pub semantic: Vec<f64>,
    pub region: RegionId,
}

impl Gaussian3D {
    /// Unit isotropic, fully opaque Gaussian at `mean` with an empty embedding.
    pub fn isotropic(mean: Vec3, scale: f64) -> Self {
        Self {
            mean,
            scale: Vec3::repeat(scale),
            rotation: UnitQuaternion::identity(),
            opacity: 1.0,
            color: Vec3::repeat(1.0),
            semantic: Vec::new(),
            region: RegionId::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(SceneError::InvalidParameter(format!(
                "non-positive scale {:?}",
                self.scale.as_slice()
            )));
        }
        if (self.rotation.quaternion().norm() - 1.0).abs() > 1e-6 {
            return Err(SceneError::InvalidParameter("rotation is not a unit quaternion".into()));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(SceneError::InvalidParameter(format!("opacity {} outside [0, 1]", self.opacity)));
        }
        if self.mean.iter().chain(self.color.iter()).chain(self.semantic.iter()).any(|v| !v.is_finite()) {
            return Err(SceneError::InvalidParameter("non-finite Gaussian parameter".into()));
        }
        Ok(())
    }

    pub fn covariance(&self) -> Mat3 {
        let r = rotation_matrix(&self.rotation);
        let s2 = self.scale.component_mul(&self.scale);
        r * Mat3::from_diagonal(&s2) * r.transpose()
    }

    /// Unnormalized density `exp(-1/2 (x-mu)^T Sigma^-1 (x-mu))`.
    pub fn evaluate_density(&self, x: &Vec3) -> f64 {
        let r = rotation_matrix(&self.rotation);
        let local = r.transpose() * (x - self.mean);
        let m = local.component_div(&self.scale).norm_squared();
        (-0.5 * m).exp()
    }

    /// Largest standard deviation.
    pub fn max_scale(&self) -> f64 {
        self.scale.max()
    }
}

/// `Sigma = R diag(scale)^2 R^T`.
pub fn covariance_from_factors(scale: &Vec3, rotation: &UnitQuaternion<f64>) -> Result<Mat3, SceneError> {
    if scale.iter().any(|s| !(*s > 0.0)) {
        return Err(SceneError::InvalidParameter(format!(
            "scale components must be positive, got {:?}",
            scale.as_slice()
        )));
    }
    let r = rotation_matrix(rotation);
    Ok(r * Mat3::from_diagonal(&scale.component_mul(scale)) * r.transpose())
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use super::*;

    #[test]
    fn covariance_identity_and_diagonal() {
        let id = UnitQuaternion::identity();
        let c = covariance_from_factors(&Vec3::new(1.0, 1.0, 1.0), &id).unwrap();
        assert_eq!(c, Mat3::identity());
        let c = covariance_from_factors(&Vec3::new(2.0, 1.0, 1.0), &id).unwrap();
        assert_eq!(c, Mat3::from_diagonal(&Vec3::new(4.0, 1.0, 1.0)));
    }

    #[test]
    fn covariance_rotated_matches_dense_product() {
        let q = UnitQuaternion::from_axis_angle(&Vec3::z_axis(), FRAC_PI_2);
        let c = covariance_from_factors(&Vec3::new(1.0, 2.0, 3.0), &q).unwrap();
        // Rz(90) written out by hand.
        let rz = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let expected = rz * Mat3::from_diagonal(&Vec3::new(1.0, 4.0, 9.0)) * rz.transpose();
        assert!((c - expected).abs().max() < 1e-12);
        assert!((c - c.transpose()).abs().max() == 0.0);
        assert!(c.cholesky().is_some());
    }

    #[test]
    fn covariance_rejects_non_positive_scale() {
        let id = UnitQuaternion::identity();
        assert!(covariance_from_factors(&Vec3::new(1.0, 0.0, 1.0), &id).is_err());
        assert!(covariance_from_factors(&Vec3::new(1.0, -2.0, 1.0), &id).is_err());
    }

    #[test]
    fn density_values() {
        let g = Gaussian3D::isotropic(Vec3::new(0.5, -1.0, 2.0), 1.0);
        assert_eq!(g.evaluate_density(&g.mean), 1.0);
        let x = g.mean + Vec3::new(0.0, 1.0, 0.0);
        assert!((g.evaluate_density(&x) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((g.evaluate_density(&x) - 0.60653).abs() < 1e-5);
    }

    #[test]
    fn anisotropic_density_matches_explicit_inverse() {
        let mut g = Gaussian3D::isotropic(Vec3::zeros(), 1.0);
        g.scale = Vec3::new(2.0, 1.0, 1.0);
        let x = g.mean + Vec3::new(2.0, 0.0, 0.0);
        let d = x - g.mean;
        let inv = g.covariance().try_inverse().unwrap();
        let oracle = (-0.5 * (d.transpose() * inv * d)[(0, 0)]).exp();
        assert!((g.evaluate_density(&x) - oracle).abs() < 1e-15);
        assert!((oracle - (-0.5f64).exp()).abs() < 1e-15);
    }
}
