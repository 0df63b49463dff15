//! Microfacet specular model (GGX distribution, height-correlated Smith
//! visibility, Schlick Fresnel) and its preintegrated lookup table.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{hammersley, tangent_frame, Rgb, Vec3};
use crate::par;

/// Lower bound applied to `n . v` before the table lookup.
pub const MIN_NDOTV: f64 = 1e-4;
pub const DEFAULT_LUT_SIZE: usize = 64;
pub const DEFAULT_LUT_SAMPLES: u32 = 2048;

/// GGX width for a perceptual roughness in `[0, 1]`.
#[inline]
pub fn ggx_alpha(roughness: f64) -> f64 {
    (roughness * roughness).max(1e-6)
}

/// GGX normal distribution at `n . h`.
#[inline]
pub fn ggx_d(n_dot_h: f64, alpha: f64) -> f64 {
    if n_dot_h <= 0.0 {
        return 0.0;
    }
    let a2 = alpha * alpha;
    let d = n_dot_h * n_dot_h * (a2 - 1.0) + 1.0;
    a2 / (PI * d * d)
}

/// Height-correlated Smith visibility `G2 / (4 (n.l) (n.v))`.
#[inline]
pub fn smith_visibility(n_dot_v: f64, n_dot_l: f64, alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    let gv = n_dot_l * (n_dot_v * n_dot_v * (1.0 - a2) + a2).sqrt();
    let gl = n_dot_v * (n_dot_l * n_dot_l * (1.0 - a2) + a2).sqrt();
    0.5 / (gv + gl)
}

#[inline]
pub fn schlick_weight(v_dot_h: f64) -> f64 {
    (1.0 - v_dot_h).clamp(0.0, 1.0).powi(5)
}

#[inline]
pub fn schlick_fresnel(f0: &Rgb, v_dot_h: f64) -> Rgb {
    let w = schlick_weight(v_dot_h);
    f0.map(|f| f + (1.0 - f) * w)
}

/// Full specular BRDF value times nothing else (no cosine factor).
pub fn specular_brdf(n: &Vec3, v: &Vec3, l: &Vec3, f0: &Rgb, roughness: f64) -> Rgb {
    let nl = n.dot(l);
    let nv = n.dot(v);
    if nl <= 0.0 || nv <= 0.0 {
        return Rgb::zeros();
    }
    let h = (v + l).normalize();
    let alpha = ggx_alpha(roughness);
    let d = ggx_d(n.dot(&h), alpha);
    let vis = smith_visibility(nv, nl, alpha);
    schlick_fresnel(f0, v.dot(&h)) * (d * vis)
}

/// GGX half-vector sample around `n` for the unit-square point `(u1, u2)`.
pub fn sample_ggx_half(n: &Vec3, alpha: f64, u1: f64, u2: f64) -> Vec3 {
    let phi = 2.0 * PI * u2;
    let cos_t = ((1.0 - u1) / (1.0 + (alpha * alpha - 1.0) * u1)).max(0.0).sqrt();
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    let (t, b) = tangent_frame(n);
    t * (sin_t * phi.cos()) + b * (sin_t * phi.sin()) + n * cos_t
}

/// Tabulated split-sum scale `A` and bias `B` over `(n . v, roughness)`.
///
/// Entry `(i, j)` is integrated at `n . v = (i + 0.5) / size` and roughness
/// `(j + 0.5) / size`; lookups interpolate bilinearly and clamp at the edges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BrdfLut {
    pub size: usize,
    /// `(A, B)` pairs, row-major over roughness then `n . v`.
    pub data: Vec<[f64; 2]>,
}

impl BrdfLut {
    pub fn integrate(size: usize, samples: u32) -> Result<Self> {
        if size < 16 {
            return Err(Error::InvalidParameter("BRDF table needs at least 16x16 entries".into()));
        }
        let rows = par::map_range(size, |j| {
            let r = (j as f64 + 0.5) / size as f64;
            (0..size)
                .map(|i| integrate_split_sum((i as f64 + 0.5) / size as f64, r, samples))
                .collect::<Vec<_>>()
        });
        Ok(BrdfLut {
            size,
            data: rows.into_iter().flatten().collect(),
        })
    }

    /// Shared default-resolution table.
    pub fn shared() -> Arc<BrdfLut> {
        static LUT: OnceLock<Arc<BrdfLut>> = OnceLock::new();
        LUT.get_or_init(|| {
            Arc::new(BrdfLut::integrate(DEFAULT_LUT_SIZE, DEFAULT_LUT_SAMPLES).expect("valid size"))
        })
        .clone()
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> [f64; 2] {
        self.data[j * self.size + i]
    }

    fn coords(&self, x: f64) -> (usize, usize, f64, bool) {
        let n = self.size;
        let s = x * n as f64 - 0.5;
        let max = (n - 1) as f64;
        let free = s > 0.0 && s < max;
        let s = s.clamp(0.0, max);
        let i0 = (s.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f64, free)
    }

    /// `(A, B)` at the given `n . v` and roughness.
    pub fn lookup(&self, n_dot_v: f64, roughness: f64) -> [f64; 2] {
        let (i0, i1, fx, _) = self.coords(n_dot_v);
        let (j0, j1, fy, _) = self.coords(roughness);
        let mut out = [0.0; 2];
        for c in 0..2 {
            let a = self.entry(i0, j0)[c] * (1.0 - fx) + self.entry(i1, j0)[c] * fx;
            let b = self.entry(i0, j1)[c] * (1.0 - fx) + self.entry(i1, j1)[c] * fx;
            out[c] = a * (1.0 - fy) + b * fy;
        }
        out
    }

    /// Gradients `(d n.v, d roughness)` of `g[0] A + g[1] B`.
    pub fn lookup_vjp(&self, n_dot_v: f64, roughness: f64, g: [f64; 2]) -> (f64, f64) {
        let (i0, i1, fx, fx_free) = self.coords(n_dot_v);
        let (j0, j1, fy, fy_free) = self.coords(roughness);
        let f = |i: usize, j: usize| g[0] * self.entry(i, j)[0] + g[1] * self.entry(i, j)[1];
        let scale = self.size as f64;
        let dx = if fx_free {
            ((1.0 - fy) * (f(i1, j0) - f(i0, j0)) + fy * (f(i1, j1) - f(i0, j1))) * scale
        } else {
            0.0
        };
        let dy = if fy_free {
            ((1.0 - fx) * (f(i0, j1) - f(i0, j0)) + fx * (f(i1, j1) - f(i1, j0))) * scale
        } else {
            0.0
        };
        (dx, dy)
    }
}

/// Importance-sampled `(A, B)` for a single table entry.
pub fn integrate_split_sum(n_dot_v: f64, roughness: f64, samples: u32) -> [f64; 2] {
    let n = Vec3::z();
    let v = Vec3::new((1.0 - n_dot_v * n_dot_v).max(0.0).sqrt(), 0.0, n_dot_v);
    let alpha = ggx_alpha(roughness);
    let (mut a, mut b) = (0.0, 0.0);
    for k in 0..samples {
        let (u1, u2) = hammersley(k, samples);
        let h = sample_ggx_half(&n, alpha, u1, u2);
        let v_dot_h = v.dot(&h);
        let l = 2.0 * v_dot_h * h - v;
        let nl = l.z;
        let nh = h.z;
        if nl <= 0.0 || nh <= 0.0 || v_dot_h <= 0.0 {
            continue;
        }
        // f nl / pdf with pdf = D nh / (4 vh).
        let weight = smith_visibility(n_dot_v, nl, alpha) * 4.0 * nl * v_dot_h / nh;
        let fc = schlick_weight(v_dot_h);
        a += (1.0 - fc) * weight;
        b += fc * weight;
    }
    let (mut a, mut b) = (a / samples as f64, b / samples as f64);
    let total = a + b;
    if total > 1.0 {
        a /= total;
        b /= total;
    }
    [a, b]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ggx_distribution_is_normalized() {
        // int D(h) (n.h) dh over the hemisphere = 1.
        for alpha in [0.1, 0.4, 0.9] {
            let m = 200_000;
            let mut sum = 0.0;
            for i in 0..m {
                let ct = (i as f64 + 0.5) / m as f64;
                sum += ggx_d(ct, alpha) * ct * 2.0 * PI / m as f64;
            }
            assert!((sum - 1.0).abs() < 1e-2, "alpha {alpha}: {sum}");
        }
    }

    #[test]
    fn lut_vjp_matches_finite_differences() {
        let lut = BrdfLut::integrate(16, 256).unwrap();
        let g = [0.7, -1.3];
        let (dx, dy) = lut.lookup_vjp(0.37, 0.61, g);
        let f = |x: f64, y: f64| {
            let v = lut.lookup(x, y);
            g[0] * v[0] + g[1] * v[1]
        };
        let h = 1e-7;
        assert!((dx - (f(0.37 + h, 0.61) - f(0.37 - h, 0.61)) / (2.0 * h)).abs() < 1e-5);
        assert!((dy - (f(0.37, 0.61 + h) - f(0.37, 0.61 - h)) / (2.0 * h)).abs() < 1e-5);
    }
}
