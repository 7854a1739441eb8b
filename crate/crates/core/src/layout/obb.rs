//! Oriented boxes: exact intersection volume and surface distance.

use crate::math::{Mat3, Vec3};
use crate::scene::{BoundingBox, ObjectTransform};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientedBox {
    pub center: Vec3,
    /// Columns are the box axes in world space.
    pub axes: Mat3,
    pub half_extents: Vec3,
}

impl OrientedBox {
    pub fn from_aabb(b: &BoundingBox) -> Self {
        Self { center: b.center(), axes: Mat3::identity(), half_extents: b.extent() * 0.5 }
    }

    /// World-space box of a local box under an object transform.
    pub fn transformed(b: &BoundingBox, xf: &ObjectTransform) -> Self {
        Self {
            center: xf.apply_point(&b.center()),
            axes: xf.rotation_matrix(),
            half_extents: b.extent() * (0.5 * xf.scale),
        }
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.half_extents.x * self.half_extents.y * self.half_extents.z
    }

    pub fn corners(&self) -> [Vec3; 8] {
        std::array::from_fn(|i| {
            let s = Vec3::new(
                if i & 1 == 0 { -1.0 } else { 1.0 },
                if i & 2 == 0 { -1.0 } else { 1.0 },
                if i & 4 == 0 { -1.0 } else { 1.0 },
            );
            self.center + self.axes * self.half_extents.component_mul(&s)
        })
    }

    fn edges(&self) -> [(Vec3, Vec3); 12] {
        let c = self.corners();
        let mut out = [(Vec3::zeros(), Vec3::zeros()); 12];
        let mut n = 0;
        for i in 0..8 {
            for bit in [1, 2, 4] {
                if i & bit == 0 {
                    out[n] = (c[i], c[i | bit]);
                    n += 1;
                }
            }
        }
        out
    }

    /// Outward face planes as (normal, offset) with `n·x <= d` inside.
    fn planes(&self) -> [(Vec3, f64); 6] {
        std::array::from_fn(|i| {
            let axis: Vec3 = self.axes.column(i / 2).into();
            let n = if i % 2 == 0 { axis } else { -axis };
            (n, n.dot(&self.center) + self.half_extents[i / 2])
        })
    }

    /// Faces as (outward normal, vertex cycle).
    fn faces(&self) -> Vec<(Vec3, Vec<Vec3>)> {
        let c = self.corners();
        let ax = |i: usize| -> Vec3 { self.axes.column(i).into() };
        // Corner index bits are (x, y, z).
        [
            (-ax(0), [0, 2, 6, 4]),
            (ax(0), [1, 3, 7, 5]),
            (-ax(1), [0, 1, 5, 4]),
            (ax(1), [2, 3, 7, 6]),
            (-ax(2), [0, 1, 3, 2]),
            (ax(2), [4, 5, 7, 6]),
        ]
        .iter()
        .map(|(n, f)| (*n, f.iter().map(|&i| c[i]).collect()))
        .collect()
    }

    /// Distance from a point to the solid box (zero inside).
    pub fn point_distance(&self, p: &Vec3) -> f64 {
        let local = self.axes.transpose() * (p - self.center);
        let clamped = local.sup(&-self.half_extents).inf(&self.half_extents);
        (local - clamped).norm()
    }
}

fn clip_polygon(poly: &[Vec3], n: &Vec3, d: f64) -> (Vec<Vec3>, Vec<Vec3>) {
    let mut out = Vec::new();
    let mut on_plane = Vec::new();
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let da = n.dot(&a) - d;
        let db = n.dot(&b) - d;
        if da <= 0.0 {
            out.push(a);
        }
        if (da < 0.0 && db > 0.0) || (da > 0.0 && db < 0.0) {
            let p = a + (b - a) * (da / (da - db));
            out.push(p);
            on_plane.push(p);
        } else if da == 0.0 {
            on_plane.push(a);
        }
    }
    (out, on_plane)
}

fn polygon_area(poly: &[Vec3]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut s = Vec3::zeros();
    for i in 1..poly.len() - 1 {
        s += (poly[i] - poly[0]).cross(&(poly[i + 1] - poly[0]));
    }
    0.5 * s.norm()
}

/// Orders coplanar points into a convex cycle around their centroid.
fn order_cap(points: &[Vec3], n: &Vec3) -> Vec<Vec3> {
    if points.len() < 3 {
        return Vec::new();
    }
    let c = points.iter().sum::<Vec3>() / points.len() as f64;
    let u = if n.x.abs() < 0.9 { n.cross(&Vec3::x()) } else { n.cross(&Vec3::y()) }.normalize();
    let v = n.cross(&u);
    let mut pts: Vec<(f64, Vec3)> = points
        .iter()
        .map(|p| {
            let q = p - c;
            (q.dot(&v).atan2(q.dot(&u)), *p)
        })
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts.into_iter().map(|(_, p)| p).collect()
}

/// Volume of the intersection of two oriented boxes, found by clipping the
/// faces of `a` against each face plane of `b` and summing pyramids from an
/// interior point.
pub fn intersection_volume(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let mut faces = a.faces();
    let eps = 1e-12 * (a.half_extents.max() + b.half_extents.max() + a.center.norm() + b.center.norm());
    for (n, d) in b.planes() {
        let outside = faces.iter().flat_map(|(_, f)| f.iter()).any(|p| n.dot(p) - d > eps);
        if !outside {
            continue;
        }
        let mut next = Vec::with_capacity(faces.len() + 1);
        let mut cap: Vec<Vec3> = Vec::new();
        for (fn_, poly) in &faces {
            if poly.iter().all(|p| (n.dot(p) - d).abs() <= eps) {
                // Lies in the cutting plane; the cap replaces it.
                continue;
            }
            let (clipped, on) = clip_polygon(poly, &n, d);
            for p in on {
                if !cap.iter().any(|q| (q - p).norm() <= eps) {
                    cap.push(p);
                }
            }
            if clipped.len() >= 3 {
                next.push((*fn_, clipped));
            }
        }
        let cap = order_cap(&cap, &n);
        if cap.len() >= 3 {
            next.push((n, cap));
        }
        faces = next;
        if faces.is_empty() {
            return 0.0;
        }
    }
    let verts: Vec<Vec3> = faces.iter().flat_map(|(_, f)| f.iter().copied()).collect();
    let centroid = verts.iter().sum::<Vec3>() / verts.len() as f64;
    faces
        .iter()
        .map(|(n, f)| {
            let h = n.dot(&(f[0] - centroid)).max(0.0);
            polygon_area(f) * h / 3.0
        })
        .sum()
}

fn segment_distance(p1: &Vec3, q1: &Vec3, p2: &Vec3, q2: &Vec3) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    let (s, t);
    if a <= f64::EPSILON && e <= f64::EPSILON {
        return r.norm();
    }
    if a <= f64::EPSILON {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= f64::EPSILON {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > 0.0 { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    ((p1 + d1 * s) - (p2 + d2 * t)).norm()
}

/// Distance between the surfaces of two disjoint boxes; zero when they
/// touch or overlap.
pub fn surface_distance(a: &OrientedBox, b: &OrientedBox) -> f64 {
    if intersection_volume(a, b) > 0.0 {
        return 0.0;
    }
    let vertex_face = a
        .corners()
        .iter()
        .map(|p| b.point_distance(p))
        .chain(b.corners().iter().map(|p| a.point_distance(p)))
        .fold(f64::INFINITY, f64::min);
    let mut best = vertex_face;
    for (p1, q1) in a.edges() {
        for (p2, q2) in b.edges() {
            best = best.min(segment_distance(&p1, &q1, &p2, &q2));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use nalgebra::UnitQuaternion;

    use super::*;

    fn unit_at(c: Vec3) -> OrientedBox {
        OrientedBox::from_aabb(&BoundingBox::centered(Vec3::repeat(1.0)).transformed(&ObjectTransform {
            scale: 1.0,
            rotation: UnitQuaternion::identity(),
            translation: c,
        }))
    }

    #[test]
    fn coincident_and_disjoint() {
        let a = unit_at(Vec3::zeros());
        assert!((intersection_volume(&a, &a) - 1.0).abs() < 1e-12);
        let b = unit_at(Vec3::new(10.0, 0.0, 0.0));
        assert_eq!(intersection_volume(&a, &b), 0.0);
        assert!((surface_distance(&a, &b) - 9.0).abs() < 1e-12);
    }

    #[test]
    fn rotated_box_inside_larger_box() {
        let big = OrientedBox::from_aabb(&BoundingBox::centered(Vec3::repeat(10.0)));
        let small = OrientedBox {
            center: Vec3::new(0.5, -0.2, 0.1),
            axes: *UnitQuaternion::from_euler_angles(0.3, 0.7, -1.1).to_rotation_matrix().matrix(),
            half_extents: Vec3::new(0.5, 1.0, 0.25),
        };
        assert!((intersection_volume(&big, &small) - small.volume()).abs() < 1e-12);
        assert!((intersection_volume(&small, &big) - small.volume()).abs() < 1e-12);
    }

    #[test]
    fn diamond_overlap() {
        // A unit square rotated 45° about z against an axis box that cuts it
        // through the middle: exactly half the rotated box.
        let r = UnitQuaternion::from_euler_angles(0.0, 0.0, std::f64::consts::FRAC_PI_4);
        let d = OrientedBox { center: Vec3::zeros(), axes: *r.to_rotation_matrix().matrix(), half_extents: Vec3::repeat(0.5) };
        let half = OrientedBox::from_aabb(&BoundingBox::new(Vec3::new(0.0, -5.0, -5.0), Vec3::new(5.0, 5.0, 5.0)).unwrap());
        assert!((intersection_volume(&d, &half) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn edge_to_edge_distance() {
        // Box rotated 45° about z whose nearest feature is a vertical edge.
        let r = UnitQuaternion::from_euler_angles(0.0, 0.0, std::f64::consts::FRAC_PI_4);
        let a = unit_at(Vec3::zeros());
        let b = OrientedBox { center: Vec3::new(3.0, 0.0, 0.0), axes: *r.to_rotation_matrix().matrix(), half_extents: Vec3::repeat(0.5) };
        let expect = 3.0 - 0.5 - 0.5 * 2f64.sqrt();
        assert!((surface_distance(&a, &b) - expect).abs() < 1e-12);
    }
}
