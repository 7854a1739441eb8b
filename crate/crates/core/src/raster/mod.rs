//! Differentiable tile-based splatting of Gaussians into a color image and a
//! semantic feature map, a brute-force reference renderer used as a testing
//! oracle, and the analytic backward pass.

mod backward;
mod forward;
pub mod image;
mod project;
mod reference;

pub use backward::{render_backward, GaussianGrad, RenderGradients, TransformGrad};
pub use forward::{render, render_composed, render_with, RenderOptions};
pub use image::{Image, ImageError};
pub use project::{project, Projection, Splat2D};
pub use reference::render_reference;

use std::ops::Range;

use thiserror::Error;

use crate::scene::{Camera, Gaussian3D, ObjectTransform};

/// Tile edge in pixels.
pub const TILE_SIZE: usize = 16;
/// Per-splat contributions with a smaller alpha are skipped.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Compositing stops once transmittance falls below this.
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
/// Added to the diagonal of every projected covariance, in pixels squared.
pub const COV2D_REGULARIZER: f64 = 0.3;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("render was called without gradient retention")]
    MissingState,
    #[error("gradient shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Result of a forward render.
#[derive(Clone, Debug)]
pub struct RenderOutput {
    /// `H x W x 3`, composited over black.
    pub color: Image,
    /// `H x W x d_f` rendered semantic embeddings.
    pub features: Image,
    /// `H x W x 1` accumulated alpha, `1 - final transmittance`.
    pub alpha: Image,
    /// Number of Gaussians dropped by projection.
    pub culled: usize,
    /// Three-sigma screen radius per input Gaussian, zero when culled.
    pub screen_radii: Vec<f64>,
    pub(crate) retained: Option<Retained>,
}

impl RenderOutput {
    pub fn has_retained_state(&self) -> bool {
        self.retained.is_some()
    }

    /// Splat indices composited at pixel `(x, y)`, front to back, as indices
    /// into the rendered Gaussian list.
    pub fn contributors(&self, x: usize, y: usize) -> Option<Vec<usize>> {
        let r = self.retained.as_ref()?;
        let tiles_x = self.color.width.div_ceil(TILE_SIZE);
        let tile = &r.tiles[(y / TILE_SIZE) * tiles_x + x / TILE_SIZE];
        let local = (y - tile.y0) * (tile.x1 - tile.x0) + (x - tile.x0);
        let range = tile.offsets[local] as usize..tile.offsets[local + 1] as usize;
        Some(tile.contrib[range].iter().map(|&p| r.splats[tile.list[p as usize] as usize].source).collect())
    }
}

/// Forward state kept for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct Retained {
    pub camera: Camera,
    pub gaussians: Vec<Gaussian3D>,
    pub splats: Vec<Splat2D>,
    pub tiles: Vec<TileRecord>,
    pub composition: Option<Composition>,
}

/// Splats binned to one tile plus the per-pixel contributor lists.
#[derive(Clone, Debug)]
pub(crate) struct TileRecord {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    /// Splat indices overlapping the tile, sorted front to back.
    pub list: Vec<u32>,
    /// CSR offsets into `contrib`, one entry per tile pixel plus one.
    pub offsets: Vec<u32>,
    /// Positions in `list` of each pixel's contributors.
    pub contrib: Vec<u32>,
}

/// How a composed render maps back onto objects.
#[derive(Clone, Debug)]
pub(crate) struct Composition {
    pub objects: Vec<usize>,
    pub ranges: Vec<Range<usize>>,
    pub locals: Vec<Gaussian3D>,
    pub transforms: Vec<ObjectTransform>,
}

/// Alpha of a splat at a pixel center, with the Gaussian falloff and the
/// offset from the splat mean.
#[inline]
pub(crate) fn splat_alpha(s: &Splat2D, px: f64, py: f64) -> (f64, f64, f64, f64) {
    let dx = px - s.mean.x;
    let dy = py - s.mean.y;
    let [a, b, c] = s.conic;
    let power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy);
    let falloff = power.exp();
    (s.opacity * falloff, falloff, dx, dy)
}
