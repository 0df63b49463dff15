//! Projection of particles to screen space and differentiable alpha blending.

pub mod blend;
pub mod gbuffer;
pub mod project;
pub mod pseudo_normal;

pub use blend::{blend_structure, rasterize, rasterize_backward, RasterGrad, RasterImage, TileWorkList};
pub use gbuffer::{channel, GBuffer};
pub use project::{project_backward, project_gaussian, ProjectionGrad};
pub use pseudo_normal::{depth_to_pseudo_normal, depth_to_pseudo_normal_vjp};
