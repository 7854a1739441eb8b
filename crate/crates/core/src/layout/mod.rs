//! Layout planning: placement programs, region trees, validation, planners.

pub mod dsl;
pub mod obb;
pub mod plan;
pub mod planner;
pub mod region;
pub mod validate;

pub use dsl::{execute_program, execute_program_with, LayoutProgram, Value};
pub use obb::OrientedBox;
pub use plan::{build_scene, BuildOptions, LayoutPlan, PlannedObject, PlannedObjectSpec, ResolvedLayout};
pub use planner::{CannedPlanner, Planner, RemotePlanner, RemotePlannerConfig};
pub use region::{decompose, RegionTree, SplitAxis};
pub use validate::{validate_layout, LayoutReport, PairReport, ValidationOptions};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("statement {statement}: {message}")]
    Program { statement: usize, message: String },
    #[error("region tree {path}: {message}")]
    RegionTree { path: String, message: String },
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("planner transport: {0}")]
    Transport(String),
    #[error(transparent)]
    Scene(#[from] crate::scene::SceneError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
