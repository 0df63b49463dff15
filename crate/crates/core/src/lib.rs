//! Differentiable Gaussian-splatting inverse renderer.

pub mod diff;
pub mod error;
pub mod img;
pub mod io;
pub mod math;
pub mod metrics;
pub mod optimize;
pub mod oracle;
pub mod par;
pub mod probes;
pub mod raster;
pub mod render;
pub mod scene;
pub mod scenes;
pub mod shading;

pub use error::{Error, Result};
