//! Compositional text-to-3D scene generation with semantic Gaussian splats.

pub mod checks;
pub mod guidance;
pub mod layout;
pub mod math;
pub mod optim;
pub mod raster;
pub mod scene;
pub mod semantic;
pub mod service;
