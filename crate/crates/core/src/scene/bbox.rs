use serde::{Deserialize, Serialize};

use super::{ObjectTransform, SceneError};
use crate::math::Vec3;

/// Axis-aligned box given by its min and max corners.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    #[serde(with = "vec3_array")]
    pub min: Vec3,
    #[serde(with = "vec3_array")]
    pub max: Vec3,
}

impl BoundingBox {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self, SceneError> {
        if (0..3).any(|i| !(min[i] <= max[i])) {
            return Err(SceneError::InvalidParameter(format!(
                "box min {:?} exceeds max {:?}",
                min.as_slice(),
                max.as_slice()
            )));
        }
        Ok(Self { min, max })
    }

    pub fn unit() -> Self {
        Self { min: Vec3::zeros(), max: Vec3::new(1.0, 1.0, 1.0) }
    }

    /// Box of the given extents centered at the origin.
    pub fn centered(extent: Vec3) -> Self {
        Self { min: -extent * 0.5, max: extent * 0.5 }
    }

    pub fn from_points(points: impl IntoIterator<Item = Vec3>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let (min, max) = it.fold((first, first), |(lo, hi), p| (lo.inf(&p), hi.sup(&p)));
        Some(Self { min, max })
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e.x * e.y * e.z
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn union(&self, other: &Self) -> Self {
        Self { min: self.min.inf(&other.min), max: self.max.sup(&other.max) }
    }

    /// Intersection volume of two axis-aligned boxes (zero when disjoint).
    pub fn intersection_volume(&self, other: &Self) -> f64 {
        (0..3)
            .map(|i| (self.max[i].min(other.max[i]) - self.min[i].max(other.min[i])).max(0.0))
            .product()
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let (a, b) = (self.min, self.max);
        [
            Vec3::new(a.x, a.y, a.z),
            Vec3::new(b.x, a.y, a.z),
            Vec3::new(a.x, b.y, a.z),
            Vec3::new(b.x, b.y, a.z),
            Vec3::new(a.x, a.y, b.z),
            Vec3::new(b.x, a.y, b.z),
            Vec3::new(a.x, b.y, b.z),
            Vec3::new(b.x, b.y, b.z),
        ]
    }

    /// Axis-aligned bounds of this box after an object transform.
    pub fn transformed(&self, xf: &ObjectTransform) -> Self {
        Self::from_points(self.corners().iter().map(|c| xf.apply_point(c))).expect("eight corners")
    }
}

pub(crate) mod vec3_array {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::math::Vec3;

    pub fn serialize<S: Serializer>(v: &Vec3, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y, v.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec3, D::Error> {
        let a = <[f64; 3]>::deserialize(d)?;
        Ok(Vec3::new(a[0], a[1], a[2]))
    }
}
