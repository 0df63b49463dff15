//! Reverse-mode differentiation of the image-formation pipeline and its
//! finite-difference check.

pub mod backward;
pub mod gradcheck;
pub mod params;

pub use backward::{backward, EnvGradient, Gradients, OutputAdjoint};
pub use gradcheck::{finite_diff_check, step_sweep, GradcheckConfig, GradientReport, Problem};
pub use params::{ParamKind, ParameterVector, PARAMS_PER_PARTICLE};
