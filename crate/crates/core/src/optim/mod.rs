//! Optimization: configuration, camera and view sampling, the Adam update,
//! density control, the training loop and checkpoints.

pub mod adam;
mod checkpoint;
pub mod config;
pub mod density;
mod train;
pub mod views;

pub use config::TrainConfig;
pub use density::{compactness, densify, prune, DensityEvent, DensityReport, EventKind, GaussStats};
pub use train::{
    analytic_oracle, partition_holds, scene_subprompts, EvalReport, LoopState, Phase, RegionEval, Session, StepMetrics,
    TrainSummary, TURNTABLE_ELEVATION,
};
pub use views::{sample_camera, select_view_descriptor, CameraMode, SampledView, ViewDescriptor, ViewLabel};

use thiserror::Error;

use crate::guidance::GuidanceError;
use crate::layout::LayoutError;
use crate::raster::{ImageError, RenderError};
use crate::scene::SceneError;
use crate::semantic::SemanticError;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("object '{0}' lost all of its Gaussians")]
    ObjectVanished(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("bad checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Semantic(#[from] SemanticError),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
