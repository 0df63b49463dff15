//! Per-pixel attribute buffer produced by blending particle attributes.

use crate::math::{Rgb, Vec3};
use crate::raster::blend::RasterImage;

/// Payload channel layout shared by the renderer and its adjoint.
pub mod channel {
    pub const NORMAL: usize = 0;
    pub const POSITION: usize = 3;
    pub const DEPTH: usize = 6;
    pub const ALBEDO: usize = 7;
    pub const SPECULAR: usize = 10;
    pub const ROUGHNESS: usize = 13;
    pub const AO: usize = 14;
    pub const INDIRECT: usize = 15;
    pub const RADIANCE: usize = 18;
    pub const COUNT: usize = 21;
}

/// Alpha above which a pixel is treated as covered.
pub const COVERAGE_THRESHOLD: f64 = 1e-5;
/// Alpha above which the accumulated depth is renormalized.
pub const RELIABLE_DEPTH_ALPHA: f64 = 0.5;

/// Reliable depth from accumulated depth `z` and alpha.
#[inline]
pub fn reliable_depth(z: f64, alpha: f64) -> f64 {
    if alpha > RELIABLE_DEPTH_ALPHA {
        z / alpha
    } else {
        z
    }
}

/// Gradients `(d_z, d_alpha)` of [`reliable_depth`].
#[inline]
pub fn reliable_depth_vjp(z: f64, alpha: f64, g: f64) -> (f64, f64) {
    if alpha > RELIABLE_DEPTH_ALPHA {
        (g / alpha, -g * z / (alpha * alpha))
    } else {
        (g, 0.0)
    }
}

/// View over a [`RasterImage`] whose payload follows [`channel`].
#[derive(Clone, Debug)]
pub struct GBuffer {
    pub raster: RasterImage,
}

/// Shading inputs of one covered pixel, materials normalized by alpha.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelAttributes {
    pub alpha: f64,
    pub position: Vec3,
    pub normal: Vec3,
    pub albedo: Rgb,
    pub specular: Rgb,
    pub roughness: f64,
    pub ao: f64,
    pub indirect: Rgb,
}

impl GBuffer {
    pub fn new(raster: RasterImage) -> Self {
        debug_assert_eq!(raster.channels, channel::COUNT);
        GBuffer { raster }
    }

    pub fn width(&self) -> usize {
        self.raster.width
    }

    pub fn height(&self) -> usize {
        self.raster.height
    }

    pub fn alpha(&self, i: usize) -> f64 {
        self.raster.alpha[i]
    }

    pub fn covered(&self, i: usize) -> bool {
        self.raster.alpha[i] > COVERAGE_THRESHOLD
    }

    fn vec3(&self, i: usize, c: usize) -> Vec3 {
        let p = self.raster.pixel(i);
        Vec3::new(p[c], p[c + 1], p[c + 2])
    }

    /// Accumulated (unnormalized) world normal.
    pub fn normal_sum(&self, i: usize) -> Vec3 {
        self.vec3(i, channel::NORMAL)
    }

    /// Unit world normal, zero where nothing was accumulated.
    pub fn normal(&self, i: usize) -> Vec3 {
        let n = self.normal_sum(i);
        let len = n.norm();
        if len > 0.0 {
            n / len
        } else {
            Vec3::zeros()
        }
    }

    pub fn depth(&self, i: usize) -> f64 {
        reliable_depth(self.raster.pixel(i)[channel::DEPTH], self.raster.alpha[i])
    }

    pub fn depth_map(&self) -> Vec<f64> {
        (0..self.raster.alpha.len()).map(|i| self.depth(i)).collect()
    }

    pub fn median_depth(&self, i: usize) -> f64 {
        self.raster.median_depth[i]
    }

    /// Normalized attributes of pixel `i`, `None` if it is not covered.
    pub fn attributes(&self, i: usize) -> Option<PixelAttributes> {
        if !self.covered(i) {
            return None;
        }
        let a = self.raster.alpha[i];
        let p = self.raster.pixel(i);
        Some(PixelAttributes {
            alpha: a,
            position: self.vec3(i, channel::POSITION) / a,
            normal: self.normal(i),
            albedo: self.vec3(i, channel::ALBEDO) / a,
            specular: self.vec3(i, channel::SPECULAR) / a,
            roughness: p[channel::ROUGHNESS] / a,
            ao: p[channel::AO] / a,
            indirect: self.vec3(i, channel::INDIRECT) / a,
        })
    }
}
