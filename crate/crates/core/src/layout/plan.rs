//! Plan files and their resolution into placed objects with regions.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dsl::{execute_program_with, LayoutProgram, Value};
use super::obb::OrientedBox;
use super::region::{decompose, RegionTree};
use super::validate::{validate_boxes, LayoutReport, ValidationOptions};
use super::LayoutError;
use crate::math::Vec3;
use crate::scene::init::{sample_positions, seed_gaussians, Sampler, SeedParams};
use crate::scene::{BoundingBox, ObjectModel, ObjectTransform, Region, Scene};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedObjectSpec {
    pub id: String,
    pub prompt: String,
    /// Extent along x, y, z of the object's local box, centered at its origin.
    pub size_estimate: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutPlan {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_prompt: Option<String>,
    pub objects: Vec<PlannedObjectSpec>,
    pub program: Vec<String>,
    pub region_trees: BTreeMap<String, RegionTree>,
}

/// An object after executing the plan: placement plus local regions.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannedObject {
    pub id: String,
    pub prompt: String,
    pub bounds: BoundingBox,
    pub transform: ObjectTransform,
    pub regions: Vec<Region>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedLayout {
    pub scene_prompt: String,
    pub objects: Vec<PlannedObject>,
}

impl LayoutPlan {
    pub fn from_json(text: &str) -> Result<Self, LayoutError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, LayoutError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Pretty JSON with a trailing newline; stable across runs.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plan serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), LayoutError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn parse_program(&self) -> Result<LayoutProgram, LayoutError> {
        LayoutProgram::parse_statements(&self.program)
    }

    /// Variables available to the program before its first statement:
    /// `<id>_size` for every object.
    pub fn bindings(&self) -> Vec<(String, Value)> {
        self.objects
            .iter()
            .map(|o| (format!("{}_size", o.id), Value::Vector(Vec3::from(o.size_estimate))))
            .collect()
    }

    /// Executes the program and decomposes every object's box.
    pub fn resolve(&self) -> Result<ResolvedLayout, LayoutError> {
        if self.objects.is_empty() {
            return Err(LayoutError::Plan("plan lists no objects".into()));
        }
        let mut ids = std::collections::HashSet::new();
        for o in &self.objects {
            if o.id.is_empty() || !o.id.chars().all(|c| c.is_alphanumeric() || c == '_') {
                return Err(LayoutError::Plan(format!("object id '{}' must be a nonempty identifier", o.id)));
            }
            if !ids.insert(o.id.as_str()) {
                return Err(LayoutError::Plan(format!("duplicate object id '{}'", o.id)));
            }
            if o.size_estimate.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                return Err(LayoutError::Plan(format!("object '{}' has a non-positive size estimate", o.id)));
            }
        }
        let placed = execute_program_with(&self.parse_program()?, &self.bindings())?;
        if let Some(extra) = placed.keys().find(|k| !ids.contains(k.as_str())) {
            return Err(LayoutError::Plan(format!("program places unknown object '{extra}'")));
        }
        if let Some(extra) = self.region_trees.keys().find(|k| !ids.contains(k.as_str())) {
            return Err(LayoutError::Plan(format!("region tree for unknown object '{extra}'")));
        }
        let mut objects = Vec::with_capacity(self.objects.len());
        for o in &self.objects {
            let transform = *placed
                .get(&o.id)
                .ok_or_else(|| LayoutError::Plan(format!("program never places object '{}'", o.id)))?;
            let tree = self
                .region_trees
                .get(&o.id)
                .ok_or_else(|| LayoutError::Plan(format!("no region tree for object '{}'", o.id)))?;
            let bounds = BoundingBox::centered(Vec3::from(o.size_estimate));
            let regions = decompose(&bounds, tree).map_err(|e| match e {
                LayoutError::RegionTree { path, message } => LayoutError::RegionTree {
                    path: path.replacen("root", &format!("region_trees.{}", o.id), 1),
                    message,
                },
                other => other,
            })?;
            objects.push(PlannedObject { id: o.id.clone(), prompt: o.prompt.clone(), bounds, transform, regions });
        }
        let scene_prompt = self
            .scene_prompt
            .clone()
            .unwrap_or_else(|| self.objects.iter().map(|o| o.prompt.as_str()).collect::<Vec<_>>().join(", "));
        Ok(ResolvedLayout { scene_prompt, objects })
    }
}

impl ResolvedLayout {
    pub fn boxes(&self) -> Vec<(String, OrientedBox)> {
        self.objects.iter().map(|o| (o.id.clone(), OrientedBox::transformed(&o.bounds, &o.transform))).collect()
    }

    pub fn validate(&self, opts: &ValidationOptions) -> LayoutReport {
        validate_boxes(&self.boxes(), opts)
    }

    /// `(object, region, subprompt)` for every region, in scene order.
    pub fn subprompts(&self) -> Vec<(usize, usize, String)> {
        self.objects
            .iter()
            .enumerate()
            .flat_map(|(k, o)| o.regions.iter().enumerate().map(move |(l, r)| (k, l, r.subprompt.clone())))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct BuildOptions {
    pub gaussians_per_object: usize,
    pub sampler: Sampler,
    pub seed: SeedParams,
}

/// Seeds Gaussians inside every planned object. `semantics[k][l]` is the
/// compressed embedding for region `l` of object `k`.
pub fn build_scene<R: Rng>(
    layout: &ResolvedLayout,
    semantics: &[Vec<Vec<f64>>],
    opts: &BuildOptions,
    rng: &mut R,
) -> Result<Scene, LayoutError> {
    let mut objects = Vec::with_capacity(layout.objects.len());
    for (k, o) in layout.objects.iter().enumerate() {
        let sem = semantics.get(k).map(Vec::as_slice).unwrap_or(&[]);
        if sem.len() != o.regions.len() {
            return Err(LayoutError::Plan(format!(
                "object '{}' has {} regions but {} region embeddings",
                o.id,
                o.regions.len(),
                sem.len()
            )));
        }
        let points: Vec<_> = sample_positions(&o.regions, opts.sampler, opts.gaussians_per_object, rng)
            .into_iter()
            .map(|p| (p, None))
            .collect();
        let gaussians = seed_gaussians(k, &o.regions, &points, sem, &opts.seed);
        objects.push(ObjectModel {
            id: o.id.clone(),
            prompt: o.prompt.clone(),
            regions: o.regions.clone(),
            gaussians,
            transform: o.transform,
        });
    }
    Ok(Scene::new(layout.scene_prompt.clone(), objects)?)
}
