//! Noise schedule, guidance oracles, masked score composition and the
//! score-distillation gradients.

mod compose;
pub mod oracle;
mod schedule;

pub use compose::{
    area_downsample, area_downsample_backward, compose_scores, plain_sds_grad, semantic_sds_grad, ComposedScore,
    ScoreTerm, SdsStep,
};
pub use oracle::{AnalyticOracle, GuidanceOracle, RecordedOracle, RecordingOracle, RemoteOracle, Target};
pub use schedule::{add_noise, NoiseSchedule, Weighting};

use thiserror::Error;

use crate::service::ServiceError;

#[derive(Debug, Error)]
pub enum GuidanceError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("oracle call not recorded: {0}")]
    NotRecorded(String),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
