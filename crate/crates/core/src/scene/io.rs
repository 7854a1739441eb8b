//! Scene documents (JSON) and binary Gaussian payloads (`SGS1`).
//!
//! Payload layout: a 16-byte header (`"SGS1"`, u32 count, u32 d_f,
//! u32 reserved) followed by `count` records of little-endian f32:
//! mean(3) scale(3) quat_wxyz(4) opacity(1) rgb(3) semantic(d_f)
//! region_k(1) region_l(1).

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion};
use serde::{Deserialize, Serialize};

use super::{Gaussian3D, ObjectModel, ObjectTransform, Region, RegionId, Scene, SceneError};
use crate::math::Vec3;

pub const GAUSSIAN_MAGIC: &[u8; 4] = b"SGS1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformDoc {
    pub scale: f64,
    pub rotation_quat_wxyz: [f64; 4],
    pub translation: [f64; 3],
}

impl From<&ObjectTransform> for TransformDoc {
    fn from(xf: &ObjectTransform) -> Self {
        let q = xf.rotation;
        Self {
            scale: xf.scale,
            rotation_quat_wxyz: [q.w, q.i, q.j, q.k],
            translation: [xf.translation.x, xf.translation.y, xf.translation.z],
        }
    }
}

impl TryFrom<&TransformDoc> for ObjectTransform {
    type Error = SceneError;

    fn try_from(doc: &TransformDoc) -> Result<Self, SceneError> {
        let [w, x, y, z] = doc.rotation_quat_wxyz;
        let q = Quaternion::new(w, x, y, z);
        if !(q.norm() > 0.0) {
            return Err(SceneError::InvalidParameter("zero rotation quaternion".into()));
        }
        ObjectTransform::new(doc.scale, UnitQuaternion::from_quaternion(q), Vec3::from(doc.translation))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectDoc {
    pub id: String,
    pub prompt: String,
    pub transform: TransformDoc,
    pub regions: Vec<Region>,
    pub gaussians_file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneDoc {
    pub scene_prompt: String,
    pub objects: Vec<ObjectDoc>,
}

/// Writes `scene.json` plus one payload per object into `dir`.
pub fn save_scene(scene: &Scene, dir: &Path) -> Result<PathBuf, SceneError> {
    std::fs::create_dir_all(dir)?;
    let mut objects = Vec::with_capacity(scene.objects.len());
    for (k, obj) in scene.objects.iter().enumerate() {
        let file = format!("object_{k:02}.sgs");
        write_gaussians(&dir.join(&file), &obj.gaussians)?;
        objects.push(ObjectDoc {
            id: obj.id.clone(),
            prompt: obj.prompt.clone(),
            transform: (&obj.transform).into(),
            regions: obj.regions.clone(),
            gaussians_file: file,
        });
    }
    let doc = SceneDoc { scene_prompt: scene.prompt.clone(), objects };
    let path = dir.join("scene.json");
    std::fs::write(&path, serde_json::to_string_pretty(&doc)?)?;
    Ok(path)
}

/// Loads a scene document; payload paths are relative to the document.
pub fn load_scene(path: &Path) -> Result<Scene, SceneError> {
    let doc: SceneDoc = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let objects = doc
        .objects
        .iter()
        .map(|o| {
            Ok(ObjectModel {
                id: o.id.clone(),
                prompt: o.prompt.clone(),
                regions: o.regions.clone(),
                gaussians: read_gaussians(&base.join(&o.gaussians_file))?,
                transform: ObjectTransform::try_from(&o.transform)?,
            })
        })
        .collect::<Result<Vec<_>, SceneError>>()?;
    Scene::new(doc.scene_prompt, objects)
}

pub fn write_gaussians(path: &Path, gaussians: &[Gaussian3D]) -> Result<(), SceneError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    encode_gaussians(&mut w, gaussians)?;
    w.flush()?;
    Ok(())
}

pub fn read_gaussians(path: &Path) -> Result<Vec<Gaussian3D>, SceneError> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    decode_gaussians(&mut r)
}

pub fn encode_gaussians<W: Write>(w: &mut W, gaussians: &[Gaussian3D]) -> Result<(), SceneError> {
    let d_f = gaussians.first().map_or(0, |g| g.semantic.len());
    if gaussians.iter().any(|g| g.semantic.len() != d_f) {
        return Err(SceneError::InvalidParameter("Gaussians disagree on embedding size".into()));
    }
    w.write_all(GAUSSIAN_MAGIC)?;
    for v in [gaussians.len() as u32, d_f as u32, 0u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    let mut rec = Vec::with_capacity(16 + d_f);
    for g in gaussians {
        rec.clear();
        rec.extend(g.mean.iter());
        rec.extend(g.scale.iter());
        rec.extend([g.rotation.w, g.rotation.i, g.rotation.j, g.rotation.k]);
        rec.push(g.opacity);
        rec.extend(g.color.iter());
        rec.extend(g.semantic.iter());
        rec.push(g.region.object as f64);
        rec.push(g.region.region as f64);
        for v in &rec {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn decode_gaussians<R: Read>(r: &mut R) -> Result<Vec<Gaussian3D>, SceneError> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if &header[..4] != GAUSSIAN_MAGIC {
        return Err(SceneError::Format("missing SGS1 magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap()) as usize;
    let (count, d_f) = (word(4), word(8));
    let stride = 16 + d_f;
    let mut bytes = vec![0u8; count * stride * 4];
    r.read_exact(&mut bytes)?;
    let vals: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    vals.chunks_exact(stride)
        .map(|rec| {
            let q = Quaternion::new(rec[6], rec[7], rec[8], rec[9]);
            let g = Gaussian3D {
                mean: Vec3::new(rec[0], rec[1], rec[2]),
                scale: Vec3::new(rec[3], rec[4], rec[5]),
                rotation: UnitQuaternion::from_quaternion(q),
                opacity: rec[10].clamp(0.0, 1.0),
                color: Vec3::new(rec[11], rec[12], rec[13]),
                semantic: rec[14..14 + d_f].to_vec(),
                region: RegionId { object: rec[14 + d_f] as u32, region: rec[15 + d_f] as u32 },
            };
            g.validate()?;
            Ok(g)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::BoundingBox;

    fn sample_scene() -> Scene {
        let regions = vec![Region { subprompt: "red top".into(), bbox: BoundingBox::unit() }];
        let mut g = Gaussian3D::isotropic(Vec3::new(0.25, 0.5, 0.75), 0.125);
        g.semantic = vec![0.5, -0.25, 1.0];
        g.opacity = 0.75;
        g.rotation = UnitQuaternion::from_euler_angles(0.5, 0.0, 0.0);
        let obj = ObjectModel {
            id: "table".into(),
            prompt: "a wooden table".into(),
            regions,
            gaussians: vec![g.clone(), g],
            transform: ObjectTransform::new(2.0, UnitQuaternion::identity(), Vec3::new(1.0, 2.0, 3.0)).unwrap(),
        };
        Scene::new("a table", vec![obj]).unwrap()
    }

    #[test]
    fn header_layout() {
        let scene = sample_scene();
        let mut buf = Vec::new();
        encode_gaussians(&mut buf, &scene.objects[0].gaussians).unwrap();
        assert_eq!(&buf[..4], b"SGS1");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 0);
        assert_eq!(buf.len(), 16 + 2 * (16 + 3) * 4);
        let first = f32::from_le_bytes(buf[16..20].try_into().unwrap());
        assert_eq!(first, 0.25);
    }

    #[test]
    fn scene_round_trip() {
        let scene = sample_scene();
        let dir = tempfile::tempdir().unwrap();
        let path = save_scene(&scene, dir.path()).unwrap();
        let back = load_scene(&path).unwrap();
        assert_eq!(back.prompt, scene.prompt);
        assert_eq!(back.objects[0].regions, scene.objects[0].regions);
        assert_eq!(back.objects[0].transform, scene.objects[0].transform);
        for (a, b) in back.objects[0].gaussians.iter().zip(&scene.objects[0].gaussians) {
            assert!((a.mean - b.mean).abs().max() < 1e-6);
            assert!((a.rotation.angle_to(&b.rotation)).abs() < 1e-6);
            assert_eq!(a.region, b.region);
        }
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = b"XXXX".to_vec();
        bytes.extend([0u8; 12]);
        assert!(decode_gaussians(&mut bytes.as_slice()).is_err());
    }
}
