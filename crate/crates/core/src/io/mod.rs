//! File formats, dataset ingestion, configuration and reports.

pub mod binary;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod env_cache;
pub mod hdr;
pub mod image_files;
pub mod pfm;
pub mod ply;
pub mod probe_cache;
pub mod report;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use config::{reference_config, Settings};
pub use dataset::{load_dataset, DatasetManifest, Frame, Split};
pub use image_files::{read_image, write_image};

use std::path::Path;

use crate::error::Result;
use crate::math::Rgb;
use crate::shading::EnvMap;

/// Reads an environment map from `.hdr` or `.pfm` (linear radiance).
pub fn load_environment(path: &Path) -> Result<EnvMap> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    if !matches!(ext.as_str(), "hdr" | "pfm" | "rgbe" | "pic") {
        return Err(crate::Error::Format(format!("environment maps must be .hdr or .pfm, got '{ext}'")));
    }
    EnvMap::from_image(&read_image(path, &Rgb::zeros())?)
}
