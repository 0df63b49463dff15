//! Flat `key = value` settings file (TOML syntax without tables).
//!
//! Every key is optional; missing keys keep their defaults and unknown keys
//! are rejected. [`reference_config`] prints all keys with their defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diff::GradcheckConfig;
use crate::error::{Error, Result};
use crate::math::Rgb;
use crate::optimize::adam::AdamConfig;
use crate::optimize::train::{LearningRates, ProbeSpec, TrainConfig};
use crate::optimize::{LossConfig, Stage};
use crate::oracle::{OracleConfig, Sampler};
use crate::render::RenderOptions;
use crate::shading::brdf::{DEFAULT_LUT_SAMPLES, DEFAULT_LUT_SIZE};
use crate::shading::prefilter::PrefilterConfig;
use crate::shading::ShadingModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub cache_dir: String,

    pub stage1_iterations: usize,
    pub stage2_iterations: usize,
    pub lambda_dssim: f64,
    pub lambda_normal: f64,
    pub lambda_alpha: f64,
    pub lr_position: f64,
    pub lr_position_final: f64,
    pub lr_rotation: f64,
    pub lr_scale: f64,
    pub lr_opacity: f64,
    pub lr_albedo: f64,
    pub lr_specular: f64,
    pub lr_roughness: f64,
    pub lr_environment: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub learn_environment: bool,
    pub environment_width: usize,
    pub environment_height: usize,
    pub environment_refresh: usize,
    pub prune_interval: usize,
    pub prune_opacity: f64,
    pub freeze_geometry_in_stage2: bool,

    pub probe_resolution_x: usize,
    pub probe_resolution_y: usize,
    pub probe_resolution_z: usize,
    pub probe_face_resolution: usize,
    /// Occlusion distance in lattice spacings.
    pub probe_threshold_spacings: f64,
    pub bake_indirect: bool,
    pub ao_samples: usize,
    pub ao_seed: u64,

    pub specular: bool,
    pub background_r: f64,
    pub background_g: f64,
    pub background_b: f64,
    pub irradiance_width: usize,
    pub irradiance_height: usize,
    pub diffuse_source_width: usize,
    pub diffuse_subsamples: usize,
    pub specular_source_width: usize,
    pub specular_subsamples: usize,
    pub mip_count: usize,
    pub brdf_lut_size: usize,
    pub brdf_lut_samples: usize,

    pub oracle_samples: usize,
    pub oracle_sampler: String,
    pub oracle_max_particles: usize,
    pub oracle_max_pixels: usize,

    pub gradcheck_step: f64,
    pub gradcheck_tolerance: f64,
    pub gradcheck_tie_gap: f64,
}

impl Default for Settings {
    fn default() -> Self {
        let t = TrainConfig::default();
        let p = ProbeSpec::default();
        let pf = PrefilterConfig::default();
        let o = OracleConfig::default();
        let g = GradcheckConfig::default();
        Settings {
            seed: 0,
            threads: 0,
            cache_dir: String::new(),
            stage1_iterations: t.stage1_iterations,
            stage2_iterations: t.stage2_iterations,
            lambda_dssim: t.loss.lambda,
            lambda_normal: t.loss.lambda_normal,
            lambda_alpha: t.loss.lambda_alpha,
            lr_position: t.rates.position,
            lr_position_final: t.rates.position_final,
            lr_rotation: t.rates.rotation,
            lr_scale: t.rates.scale,
            lr_opacity: t.rates.opacity,
            lr_albedo: t.rates.albedo,
            lr_specular: t.rates.specular,
            lr_roughness: t.rates.roughness,
            lr_environment: t.rates.environment,
            adam_beta1: t.adam.beta1,
            adam_beta2: t.adam.beta2,
            adam_eps: t.adam.eps,
            learn_environment: t.learn_environment,
            environment_width: t.environment_width,
            environment_height: t.environment_height,
            environment_refresh: t.environment_refresh,
            prune_interval: t.prune_interval,
            prune_opacity: t.prune_opacity,
            freeze_geometry_in_stage2: t.freeze_geometry_in_stage2,
            probe_resolution_x: p.resolution[0],
            probe_resolution_y: p.resolution[1],
            probe_resolution_z: p.resolution[2],
            probe_face_resolution: p.face_resolution,
            probe_threshold_spacings: crate::probes::DEFAULT_THRESHOLD_SPACINGS,
            bake_indirect: true,
            ao_samples: crate::probes::DEFAULT_AO_SAMPLES,
            ao_seed: 0,
            specular: true,
            background_r: 0.0,
            background_g: 0.0,
            background_b: 0.0,
            irradiance_width: pf.irradiance_width,
            irradiance_height: pf.irradiance_height,
            diffuse_source_width: pf.diffuse_source_width,
            diffuse_subsamples: pf.diffuse_subsamples,
            specular_source_width: pf.specular_source_width,
            specular_subsamples: pf.specular_subsamples,
            mip_count: pf.mip_count,
            brdf_lut_size: DEFAULT_LUT_SIZE,
            brdf_lut_samples: DEFAULT_LUT_SAMPLES as usize,
            oracle_samples: o.samples,
            oracle_sampler: o.sampler.name().to_string(),
            oracle_max_particles: o.max_particles,
            oracle_max_pixels: o.max_pixels,
            gradcheck_step: g.step,
            gradcheck_tolerance: g.tolerance,
            gradcheck_tie_gap: g.tie_gap,
        }
    }
}

const FIXED_CONSTANTS: &str = "\
# Fixed constants (not configurable):
#   tile_size = 16, alpha_clamp = 0.99, min_transmittance = 1e-4,
#   cutoff = 3 sigma, projection_dilation = 0.3 px^2, coverage_alpha = 1e-5,
#   reliable_depth_alpha = 0.5, normal_loss_alpha = 0.5, alpha_loss_eps = 1e-4,
#   ssim_window = 11, ssim_sigma = 1.5, ssim_c1 = 1e-4, ssim_c2 = 9e-4,
#   display_gamma = 2.2, gradcheck_rel_floor = 1e-8
";

/// Every key with its default value.
pub fn reference_config() -> String {
    let body = toml::to_string(&Settings::default()).expect("settings serialize");
    format!("# splatir reference configuration\n{FIXED_CONSTANTS}\n{body}")
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let s: Settings = toml::from_str(text).map_err(|e| Error::InvalidParameter(format!("config: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        Sampler::parse(&self.oracle_sampler)?;
        if self.oracle_samples == 0 {
            return Err(Error::InvalidParameter("oracle_samples must be at least 1".into()));
        }
        Ok(())
    }

    pub fn cache_dir(&self) -> Option<PathBuf> {
        (!self.cache_dir.is_empty()).then(|| PathBuf::from(&self.cache_dir))
    }

    pub fn render_options(&self) -> RenderOptions {
        RenderOptions {
            background: Rgb::new(self.background_r, self.background_g, self.background_b),
            model: ShadingModel { specular: self.specular },
            ao_samples: self.ao_samples,
            ao_seed: self.ao_seed,
        }
    }

    pub fn prefilter_config(&self) -> PrefilterConfig {
        PrefilterConfig {
            irradiance_width: self.irradiance_width,
            irradiance_height: self.irradiance_height,
            diffuse_source_width: self.diffuse_source_width,
            diffuse_subsamples: self.diffuse_subsamples,
            specular_source_width: self.specular_source_width,
            specular_subsamples: self.specular_subsamples,
            mip_count: self.mip_count,
        }
    }

    pub fn probe_spec(&self) -> ProbeSpec {
        ProbeSpec {
            resolution: [self.probe_resolution_x, self.probe_resolution_y, self.probe_resolution_z],
            face_resolution: self.probe_face_resolution,
            threshold_spacings: self.probe_threshold_spacings,
            bake_indirect: self.bake_indirect,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            stage1_iterations: self.stage1_iterations,
            stage2_iterations: self.stage2_iterations,
            loss: LossConfig {
                lambda: self.lambda_dssim,
                lambda_normal: self.lambda_normal,
                lambda_alpha: self.lambda_alpha,
                stage: Stage::One,
            },
            rates: LearningRates {
                position: self.lr_position,
                position_final: self.lr_position_final,
                rotation: self.lr_rotation,
                scale: self.lr_scale,
                opacity: self.lr_opacity,
                albedo: self.lr_albedo,
                specular: self.lr_specular,
                roughness: self.lr_roughness,
                environment: self.lr_environment,
            },
            adam: AdamConfig {
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                eps: self.adam_eps,
            },
            learn_environment: self.learn_environment,
            environment_width: self.environment_width,
            environment_height: self.environment_height,
            environment_refresh: self.environment_refresh,
            prune_interval: self.prune_interval,
            prune_opacity: self.prune_opacity,
            probes: Some(self.probe_spec()),
            freeze_geometry_in_stage2: self.freeze_geometry_in_stage2,
            options: self.render_options(),
            seed: self.seed,
            checkpoint_dir: None,
        }
    }

    pub fn oracle_config(&self) -> OracleConfig {
        OracleConfig {
            samples: self.oracle_samples,
            seed: self.seed,
            sampler: Sampler::parse(&self.oracle_sampler).unwrap_or_default(),
            max_particles: self.oracle_max_particles,
            max_pixels: self.oracle_max_pixels,
        }
    }

    pub fn gradcheck_config(&self) -> GradcheckConfig {
        GradcheckConfig {
            step: self.gradcheck_step,
            tolerance: self.gradcheck_tolerance,
            subset: None,
            tie_gap: self.gradcheck_tie_gap,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_config_parses_to_defaults() {
        let text = reference_config();
        assert_eq!(Settings::parse(&text).unwrap(), Settings::default());
        assert!(text.contains("lambda_normal = 0.1"));
        assert!(text.contains("stage1_iterations = 30000"));
        assert!(text.contains("oracle_samples = 4096"));
    }

    #[test]
    fn partial_files_override_defaults() {
        let s = Settings::parse("seed = 9\nspecular = false\n# comment\n").unwrap();
        assert_eq!(s.seed, 9);
        assert!(!s.specular);
        assert_eq!(s.mip_count, 11);
    }

    #[test]
    fn unknown_and_invalid_keys_fail() {
        assert!(Settings::parse("nonsense = 1").is_err());
        assert!(Settings::parse("lambda_dssim = 3.0").is_err());
        assert!(Settings::parse("oracle_sampler = \"bogus\"").is_err());
    }
}
