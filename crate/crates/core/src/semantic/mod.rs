//! Text to masks: embedding providers, the compression autoencoder,
//! semantic-map decoding, per-pixel subprompt probabilities, argmax masks
//! and their pooling to the guidance resolution.

mod codec;
pub mod embed;
mod masks;

pub use codec::{reconstruction_loss, train_codec, CodecConfig, EmbeddingCodec};
pub use embed::{EmbeddingProvider, FileEmbedder, PseudoEmbedder, RemoteEmbedder};
pub use masks::{
    argmax, decode_map, masks, masks_from_features, pool_masks, probabilities, MaskSet, PooledMasks, Subprompt,
    SubpromptSet,
};

use thiserror::Error;

use crate::service::ServiceError;

/// Pixels whose accumulated alpha is below this belong to the background.
pub const BACKGROUND_ALPHA: f64 = 0.05;

#[derive(Debug, Error)]
pub enum SemanticError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Service(#[from] ServiceError),
}
