//! Real spherical harmonics up to degree 3.

use std::f64::consts::PI;

use crate::math::Vec3;

pub const MAX_DEGREE: usize = 3;

pub fn coefficient_count(deg: usize) -> usize {
    (deg + 1) * (deg + 1)
}

/// Real SH basis values `Y_lm(d)` for `l <= deg`, ordered by `l` then `m`.
pub fn basis(d: &Vec3, deg: usize) -> Vec<f64> {
    assert!(deg <= MAX_DEGREE, "SH degree above {MAX_DEGREE}");
    let (x, y, z) = (d.x, d.y, d.z);
    let mut out = Vec::with_capacity(coefficient_count(deg));
    out.push(0.282_094_791_773_878_1);
    if deg >= 1 {
        let c = 0.488_602_511_902_919_9;
        out.extend([c * y, c * z, c * x]);
    }
    if deg >= 2 {
        out.extend([
            1.092_548_430_592_079 * x * y,
            1.092_548_430_592_079 * y * z,
            0.315_391_565_252_520_05 * (3.0 * z * z - 1.0),
            1.092_548_430_592_079 * x * z,
            0.546_274_215_296_039_5 * (x * x - y * y),
        ]);
    }
    if deg >= 3 {
        out.extend([
            0.590_043_589_926_643_5 * y * (3.0 * x * x - y * y),
            2.890_611_442_640_554 * x * y * z,
            0.457_045_799_464_465_8 * y * (5.0 * z * z - 1.0),
            0.373_176_332_590_115_4 * z * (5.0 * z * z - 3.0),
            0.457_045_799_464_465_8 * x * (5.0 * z * z - 1.0),
            1.445_305_721_320_277 * z * (x * x - y * y),
            0.590_043_589_926_643_5 * x * (x * x - 3.0 * y * y),
        ]);
    }
    out
}

#[inline]
pub fn degree_of(index: usize) -> usize {
    (index as f64).sqrt() as usize
}

/// Zonal factors turning SH coefficients of a function into coefficients of
/// its clamped-cosine convolution.
pub const COSINE_LOBE: [f64; 4] = [PI, 2.0 * PI / 3.0, PI / 4.0, 0.0];

/// Zonal factors of the normalized uniform-hemisphere average.
pub const HEMISPHERE_AVERAGE: [f64; 4] = [1.0, 0.5, 0.0, -0.125];
