//! Image-based light with its precomputed split-sum products.

use std::sync::Arc;

use crate::error::Result;
use crate::math::{Rgb, Vec3};
use crate::shading::brdf::BrdfLut;
use crate::shading::envmap::EnvMap;
use crate::shading::prefilter::{prefilter_diffuse, prefilter_specular, PrefilterConfig};

#[derive(Clone, Debug)]
pub struct EnvironmentLight {
    pub radiance: EnvMap,
    pub irradiance: EnvMap,
    pub specular_mips: Vec<EnvMap>,
    pub brdf_lut: Arc<BrdfLut>,
    pub config: PrefilterConfig,
}

/// Mip pair and blend factor used for a specular lookup at some roughness.
#[derive(Clone, Copy, Debug)]
pub struct MipBlend {
    pub lo: usize,
    pub hi: usize,
    pub t: f64,
}

impl EnvironmentLight {
    pub fn new(radiance: EnvMap) -> Result<Self> {
        Self::with_config(radiance, PrefilterConfig::default(), BrdfLut::shared())
    }

    pub fn with_config(radiance: EnvMap, config: PrefilterConfig, lut: Arc<BrdfLut>) -> Result<Self> {
        let irradiance = prefilter_diffuse(&radiance, &config)?;
        let specular_mips = prefilter_specular(&radiance, &config)?;
        Ok(EnvironmentLight {
            radiance,
            irradiance,
            specular_mips,
            brdf_lut: lut,
            config,
        })
    }

    /// Assembles a light from already prefiltered products.
    pub fn from_parts(
        radiance: EnvMap,
        irradiance: EnvMap,
        specular_mips: Vec<EnvMap>,
        lut: Arc<BrdfLut>,
        config: PrefilterConfig,
    ) -> Self {
        EnvironmentLight {
            radiance,
            irradiance,
            specular_mips,
            brdf_lut: lut,
            config,
        }
    }

    /// Re-runs prefiltering for a new radiance map, keeping the BRDF table.
    pub fn relit(&self, radiance: EnvMap) -> Result<Self> {
        Self::with_config(radiance, self.config.clone(), self.brdf_lut.clone())
    }

    /// Every product multiplied by `k` (prefiltering is linear).
    pub fn scaled(&self, k: f64) -> Self {
        EnvironmentLight {
            radiance: self.radiance.scaled(k),
            irradiance: self.irradiance.scaled(k),
            specular_mips: self.specular_mips.iter().map(|m| m.scaled(k)).collect(),
            brdf_lut: self.brdf_lut.clone(),
            config: self.config.clone(),
        }
    }

    pub fn mip_blend(&self, roughness: f64) -> MipBlend {
        let top = self.specular_mips.len() - 1;
        let level = roughness.clamp(0.0, 1.0) * top as f64;
        let lo = (level.floor() as usize).min(top.saturating_sub(1));
        let hi = (lo + 1).min(top);
        MipBlend {
            lo,
            hi,
            t: level - lo as f64,
        }
    }

    /// Prefiltered specular radiance along `dir` at `roughness`.
    pub fn specular(&self, dir: &Vec3, roughness: f64) -> Rgb {
        let b = self.mip_blend(roughness);
        self.specular_mips[b.lo].lookup(dir) * (1.0 - b.t) + self.specular_mips[b.hi].lookup(dir) * b.t
    }

    /// Gradients `(d dir, d roughness)` of `g . specular(dir, roughness)`.
    pub fn specular_vjp(&self, dir: &Vec3, roughness: f64, g: &Rgb) -> (Vec3, f64) {
        let b = self.mip_blend(roughness);
        let lo = &self.specular_mips[b.lo];
        let hi = &self.specular_mips[b.hi];
        let d_dir = lo.lookup_vjp(dir, g) * (1.0 - b.t) + hi.lookup_vjp(dir, g) * b.t;
        let d_r = if (0.0..=1.0).contains(&roughness) {
            g.dot(&(hi.lookup(dir) - lo.lookup(dir))) * (self.specular_mips.len() - 1) as f64
        } else {
            0.0
        };
        (d_dir, d_r)
    }

    pub fn diffuse(&self, n: &Vec3) -> Rgb {
        self.irradiance.lookup(n)
    }
}
