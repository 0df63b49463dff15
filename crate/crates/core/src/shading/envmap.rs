//! Equirectangular radiance tables with bilinear lookup and its adjoints.
//!
//! World `+y` is up. A direction `d` maps to `u = (atan2(d.z, d.x) + pi) / 2pi`
//! and `v = acos(d.y) / pi`; texel `(i, j)` covers `u in [i, i+1) / W` and
//! `v in [j, j+1) / H`. Lookups wrap horizontally and clamp vertically.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::img::Image;
use crate::math::{Rgb, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<Rgb>,
}

/// Texel coordinates and bilinear footprint of a lookup.
#[derive(Clone, Copy, Debug)]
pub struct Footprint {
    pub idx: [usize; 4],
    pub w: [f64; 4],
    /// Texel-space position (continuous, texel centers at integers).
    pub s: f64,
    pub t: f64,
    /// `false` when the vertical coordinate is clamped at a pole row.
    pub t_free: bool,
}

impl EnvMap {
    pub fn new(width: usize, height: usize, data: Vec<Rgb>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} texels for a {width}x{height} environment",
                data.len()
            )));
        }
        Ok(EnvMap {
            width,
            height,
            data,
        })
    }

    pub fn constant(width: usize, height: usize, c: Rgb) -> Self {
        EnvMap {
            width,
            height,
            data: vec![c; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(&Vec3) -> Rgb) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for j in 0..height {
            for i in 0..width {
                data.push(f(&texel_direction(i, j, width, height)));
            }
        }
        EnvMap {
            width,
            height,
            data,
        }
    }

    pub fn from_image(img: &Image) -> Result<Self> {
        let env = EnvMap::new(img.width, img.height, img.pixels.clone())?;
        env.validate()?;
        Ok(env)
    }

    pub fn to_image(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            pixels: self.data.clone(),
        }
    }

    /// Rejects non-finite or negative radiance.
    pub fn validate(&self) -> Result<()> {
        for (k, c) in self.data.iter().enumerate() {
            if !c.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("environment texel {k}")));
            }
            if c.iter().any(|v| *v < 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "negative radiance at environment texel {k}"
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn texel(&self, i: usize, j: usize) -> Rgb {
        self.data[j * self.width + i]
    }

    pub fn scaled(&self, k: f64) -> Self {
        EnvMap {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|c| c * k).collect(),
        }
    }

    pub fn footprint(&self, d: &Vec3) -> Footprint {
        let (u, v) = direction_to_uv(d);
        let s = u * self.width as f64 - 0.5;
        let mut t = v * self.height as f64 - 0.5;
        let t_max = self.height as f64 - 1.0;
        let t_free = t > 0.0 && t < t_max;
        t = t.clamp(0.0, t_max);
        let x0f = s.floor();
        let fx = s - x0f;
        let w = self.width as i64;
        let x0 = (x0f as i64).rem_euclid(w) as usize;
        let x1 = (x0 + 1) % self.width;
        let y0 = (t.floor() as usize).min(self.height - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fy = t - y0 as f64;
        Footprint {
            idx: [
                y0 * self.width + x0,
                y0 * self.width + x1,
                y1 * self.width + x0,
                y1 * self.width + x1,
            ],
            w: [
                (1.0 - fx) * (1.0 - fy),
                fx * (1.0 - fy),
                (1.0 - fx) * fy,
                fx * fy,
            ],
            s,
            t,
            t_free,
        }
    }

    /// Bilinear radiance along direction `d` (need not be unit length).
    pub fn lookup(&self, d: &Vec3) -> Rgb {
        let f = self.footprint(d);
        (0..4).map(|k| self.data[f.idx[k]] * f.w[k]).sum()
    }

    /// Radiance of the texel containing `d`.
    pub fn lookup_nearest(&self, d: &Vec3) -> Rgb {
        let (u, v) = direction_to_uv(d);
        let i = ((u * self.width as f64) as usize).min(self.width - 1);
        let j = ((v * self.height as f64) as usize).min(self.height - 1);
        self.texel(i, j)
    }

    /// Gradient of `g . lookup(d)` with respect to `d`.
    pub fn lookup_vjp(&self, d: &Vec3, g: &Rgb) -> Vec3 {
        let f = self.footprint(d);
        let c = |k: usize| g.dot(&self.data[f.idx[k]]);
        let fx = f.w[1] + f.w[3];
        let fy = f.w[2] + f.w[3];
        let ds = (1.0 - fy) * (c(1) - c(0)) + fy * (c(3) - c(2));
        let dt = if f.t_free {
            (1.0 - fx) * (c(2) - c(0)) + fx * (c(3) - c(1))
        } else {
            0.0
        };
        let (du, dv) = direction_to_uv_jacobian(d);
        du * (ds * self.width as f64) + dv * (dt * self.height as f64)
    }

    /// Adds the gradient of `g . lookup(d)` with respect to the texels into `out`.
    pub fn lookup_adjoint(&self, d: &Vec3, g: &Rgb, out: &mut [Rgb]) {
        let f = self.footprint(d);
        for k in 0..4 {
            out[f.idx[k]] += g * f.w[k];
        }
    }

    /// Box-filters down so that the width is at most `max_width`, halving both
    /// axes each step (a linear operator; see [`EnvMap::downsample_adjoint`]).
    pub fn downsample_to(&self, max_width: usize) -> EnvMap {
        let mut cur = self.clone();
        while cur.width > max_width && cur.width.is_multiple_of(2) && cur.height.is_multiple_of(2) {
            cur = cur.halve();
        }
        cur
    }

    fn halve(&self) -> EnvMap {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut data = Vec::with_capacity(w * h);
        for j in 0..h {
            // Area weights: rows nearer the equator cover more solid angle.
            let a0 = row_solid_angle(2 * j, self.height);
            let a1 = row_solid_angle(2 * j + 1, self.height);
            for i in 0..w {
                let top = self.texel(2 * i, 2 * j) + self.texel(2 * i + 1, 2 * j);
                let bot = self.texel(2 * i, 2 * j + 1) + self.texel(2 * i + 1, 2 * j + 1);
                data.push((top * a0 + bot * a1) / (2.0 * (a0 + a1)));
            }
        }
        EnvMap {
            width: w,
            height: h,
            data,
        }
    }

    fn halve_adjoint(&self, g: &[Rgb], full_w: usize, full_h: usize) -> Vec<Rgb> {
        let mut out = vec![Rgb::zeros(); full_w * full_h];
        for j in 0..self.height {
            let a0 = row_solid_angle(2 * j, full_h);
            let a1 = row_solid_angle(2 * j + 1, full_h);
            let k0 = a0 / (2.0 * (a0 + a1));
            let k1 = a1 / (2.0 * (a0 + a1));
            for i in 0..self.width {
                let gi = g[j * self.width + i];
                out[2 * j * full_w + 2 * i] += gi * k0;
                out[2 * j * full_w + 2 * i + 1] += gi * k0;
                out[(2 * j + 1) * full_w + 2 * i] += gi * k1;
                out[(2 * j + 1) * full_w + 2 * i + 1] += gi * k1;
            }
        }
        out
    }

    /// Pulls a gradient on `self.downsample_to(max_width)` back to `self`.
    pub fn downsample_adjoint(&self, max_width: usize, g: &[Rgb]) -> Vec<Rgb> {
        let mut chain = vec![(self.width, self.height)];
        let (mut w, mut h) = (self.width, self.height);
        while w > max_width && w % 2 == 0 && h % 2 == 0 {
            w /= 2;
            h /= 2;
            chain.push((w, h));
        }
        let mut grad = g.to_vec();
        for k in (1..chain.len()).rev() {
            let (sw, sh) = chain[k];
            let (fw, fh) = chain[k - 1];
            let shell = EnvMap {
                width: sw,
                height: sh,
                data: Vec::new(),
            };
            grad = shell.halve_adjoint(&grad, fw, fh);
        }
        grad
    }
}

/// `(u, v)` texture coordinates of a direction.
#[inline]
pub fn direction_to_uv(d: &Vec3) -> (f64, f64) {
    let phi = d.z.atan2(d.x);
    let rho = (d.x * d.x + d.z * d.z).sqrt();
    let theta = rho.atan2(d.y);
    let mut u = (phi + PI) / (2.0 * PI);
    if u >= 1.0 {
        u -= 1.0;
    }
    (u, theta / PI)
}

/// Gradients of `u` and `v` with respect to the direction.
pub fn direction_to_uv_jacobian(d: &Vec3) -> (Vec3, Vec3) {
    let rho2 = d.x * d.x + d.z * d.z;
    if rho2 <= 1e-300 {
        return (Vec3::zeros(), Vec3::zeros());
    }
    let rho = rho2.sqrt();
    let du = Vec3::new(-d.z / rho2, 0.0, d.x / rho2) / (2.0 * PI);
    let r2 = rho2 + d.y * d.y;
    // theta = atan2(rho, y)
    let dtheta_drho = d.y / r2;
    let dtheta_dy = -rho / r2;
    let dv = Vec3::new(
        dtheta_drho * d.x / rho,
        dtheta_dy,
        dtheta_drho * d.z / rho,
    ) / PI;
    (du, dv)
}

#[inline]
pub fn uv_to_direction(u: f64, v: f64) -> Vec3 {
    let phi = 2.0 * PI * u - PI;
    let theta = PI * v;
    let st = theta.sin();
    Vec3::new(st * phi.cos(), theta.cos(), st * phi.sin())
}

/// Unit direction through the center of texel `(i, j)`.
#[inline]
pub fn texel_direction(i: usize, j: usize, width: usize, height: usize) -> Vec3 {
    uv_to_direction(
        (i as f64 + 0.5) / width as f64,
        (j as f64 + 0.5) / height as f64,
    )
}

/// Solid angle of one texel in row `j` of an equirectangular map with
/// `height` rows (independent of the column).
pub fn row_solid_angle(j: usize, height: usize) -> f64 {
    let t0 = PI * j as f64 / height as f64;
    let t1 = PI * (j + 1) as f64 / height as f64;
    t0.cos() - t1.cos()
}

/// Solid angle of a texel in a map `width` texels wide.
pub fn texel_solid_angle(j: usize, width: usize, height: usize) -> f64 {
    2.0 * PI / width as f64 * row_solid_angle(j, height)
}
