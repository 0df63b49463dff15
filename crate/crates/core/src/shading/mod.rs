//! Physically based image-based shading with split-sum precomputation.

pub mod brdf;
pub mod envmap;
pub mod light;
pub mod prefilter;
pub mod shade;

pub use brdf::BrdfLut;
pub use envmap::EnvMap;
pub use light::EnvironmentLight;
pub use prefilter::{prefilter_diffuse, prefilter_specular, PrefilterConfig};
pub use shade::{shade_sample, shade_sample_vjp, ShadingGrad, ShadingModel, ShadingSample};
