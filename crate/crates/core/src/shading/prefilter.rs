//! Split-sum environment prefiltering and the transposes of those linear maps.
//!
//! Both products are normalized weighted averages over source texels,
//! integrated with sub-texel quadrature and exact sub-texel solid angles:
//! the irradiance table uses the clamped cosine `max(n . l, 0)` scaled by
//! `pi`, and specular mip `m` uses `D(h) max(n . l, 0)` with
//! `n = v = ` the lookup direction at roughness `m / (mips - 1)`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::math::{Rgb, Vec3};
use crate::par;
use crate::shading::brdf::{ggx_alpha, ggx_d};
use crate::shading::envmap::{texel_direction, uv_to_direction, EnvMap};

#[derive(Clone, Debug, PartialEq)]
pub struct PrefilterConfig {
    pub irradiance_width: usize,
    pub irradiance_height: usize,
    /// Source resolution cap for the irradiance quadrature.
    pub diffuse_source_width: usize,
    pub diffuse_subsamples: usize,
    /// Source resolution cap for the specular quadrature.
    pub specular_source_width: usize,
    pub specular_subsamples: usize,
    pub mip_count: usize,
}

impl Default for PrefilterConfig {
    fn default() -> Self {
        PrefilterConfig {
            irradiance_width: 32,
            irradiance_height: 16,
            diffuse_source_width: 64,
            diffuse_subsamples: 4,
            specular_source_width: 128,
            specular_subsamples: 2,
            mip_count: 11,
        }
    }
}

/// Quadrature nodes over a source map: direction, texel index, solid angle.
struct Nodes {
    dirs: Vec<Vec3>,
    texel: Vec<usize>,
    domega: Vec<f64>,
    /// Node range of each source texel.
    ranges: Vec<(usize, usize)>,
}

impl Nodes {
    fn new(width: usize, height: usize, sub: usize) -> Self {
        let sub = sub.max(1);
        let mut nodes = Nodes {
            dirs: Vec::new(),
            texel: Vec::new(),
            domega: Vec::new(),
            ranges: Vec::with_capacity(width * height),
        };
        let (fw, fh) = ((width * sub) as f64, (height * sub) as f64);
        for j in 0..height {
            for i in 0..width {
                let start = nodes.dirs.len();
                for sj in 0..sub {
                    let row = j * sub + sj;
                    let t0 = PI * row as f64 / fh;
                    let t1 = PI * (row + 1) as f64 / fh;
                    let dw = 2.0 * PI / fw * (t0.cos() - t1.cos());
                    for si in 0..sub {
                        let col = i * sub + si;
                        nodes
                            .dirs
                            .push(uv_to_direction((col as f64 + 0.5) / fw, (row as f64 + 0.5) / fh));
                        nodes.texel.push(j * width + i);
                        nodes.domega.push(dw);
                    }
                }
                nodes.ranges.push((start, nodes.dirs.len()));
            }
        }
        nodes
    }
}

/// A normalized-average quadrature `out[o] = scale * sum_s k(n_o, l_s) L_s / sum_s k(n_o, l_s)`.
struct Quadrature<K> {
    out_w: usize,
    out_h: usize,
    src_w: usize,
    src_h: usize,
    nodes: Nodes,
    kernel: K,
    scale: f64,
}

impl<K: Fn(&Vec3, &Vec3) -> f64 + Sync + Send> Quadrature<K> {
    fn new(out_w: usize, out_h: usize, src_w: usize, src_h: usize, sub: usize, kernel: K, scale: f64) -> Self {
        Quadrature {
            out_w,
            out_h,
            src_w,
            src_h,
            nodes: Nodes::new(src_w, src_h, sub),
            kernel,
            scale,
        }
    }

    fn out_dir(&self, o: usize) -> Vec3 {
        texel_direction(o % self.out_w, o / self.out_w, self.out_w, self.out_h)
    }

    fn norms(&self) -> Vec<f64> {
        par::map_range(self.out_w * self.out_h, |o| {
            let n = self.out_dir(o);
            self.nodes
                .dirs
                .iter()
                .zip(&self.nodes.domega)
                .map(|(l, dw)| (self.kernel)(&n, l) * dw)
                .sum()
        })
    }

    fn apply(&self, src: &[Rgb]) -> Vec<Rgb> {
        debug_assert_eq!(src.len(), self.src_w * self.src_h);
        par::map_range(self.out_w * self.out_h, |o| {
            let n = self.out_dir(o);
            let mut acc = Rgb::zeros();
            let mut norm = 0.0;
            for (k, l) in self.nodes.dirs.iter().enumerate() {
                let w = (self.kernel)(&n, l) * self.nodes.domega[k];
                if w != 0.0 {
                    acc += src[self.nodes.texel[k]] * w;
                    norm += w;
                }
            }
            if norm > 0.0 {
                acc * (self.scale / norm)
            } else {
                Rgb::zeros()
            }
        })
    }

    fn adjoint(&self, g: &[Rgb]) -> Vec<Rgb> {
        let norms = self.norms();
        let outs: Vec<(Vec3, Rgb)> = (0..self.out_w * self.out_h)
            .map(|o| {
                let c = if norms[o] > 0.0 { self.scale / norms[o] } else { 0.0 };
                (self.out_dir(o), g[o] * c)
            })
            .collect();
        par::map_range(self.src_w * self.src_h, |t| {
            let (s0, s1) = self.nodes.ranges[t];
            let mut acc = Rgb::zeros();
            for (n, go) in &outs {
                let mut w = 0.0;
                for k in s0..s1 {
                    w += (self.kernel)(n, &self.nodes.dirs[k]) * self.nodes.domega[k];
                }
                acc += go * w;
            }
            acc
        })
    }
}

fn cosine_kernel(n: &Vec3, l: &Vec3) -> f64 {
    n.dot(l).max(0.0)
}

fn ggx_kernel(alpha: f64) -> impl Fn(&Vec3, &Vec3) -> f64 + Sync + Send {
    move |n: &Vec3, l: &Vec3| {
        let nl = n.dot(l);
        if nl <= 0.0 {
            return 0.0;
        }
        ggx_d((0.5 * (1.0 + nl)).sqrt(), alpha) * nl
    }
}

fn diffuse_quadrature(
    src: &EnvMap,
    cfg: &PrefilterConfig,
) -> Quadrature<fn(&Vec3, &Vec3) -> f64> {
    Quadrature::new(
        cfg.irradiance_width,
        cfg.irradiance_height,
        src.width,
        src.height,
        cfg.diffuse_subsamples,
        cosine_kernel as fn(&Vec3, &Vec3) -> f64,
        PI,
    )
}

/// Cosine-convolved irradiance table `I(n) = int L(l) max(n . l, 0) dl`.
pub fn prefilter_diffuse(env: &EnvMap, cfg: &PrefilterConfig) -> Result<EnvMap> {
    env.validate()?;
    let src = env.downsample_to(cfg.diffuse_source_width);
    let q = diffuse_quadrature(&src, cfg);
    EnvMap::new(cfg.irradiance_width, cfg.irradiance_height, q.apply(&src.data))
}

/// Transpose of [`prefilter_diffuse`]: maps a gradient on the irradiance
/// table to a gradient on `env`.
pub fn prefilter_diffuse_adjoint(env: &EnvMap, cfg: &PrefilterConfig, g: &[Rgb]) -> Vec<Rgb> {
    let src = env.downsample_to(cfg.diffuse_source_width);
    let q = diffuse_quadrature(&src, cfg);
    env.downsample_adjoint(cfg.diffuse_source_width, &q.adjoint(g))
}

/// Roughness stored in specular mip `m`.
pub fn mip_roughness(m: usize, mip_count: usize) -> f64 {
    m as f64 / (mip_count - 1) as f64
}

/// Mip resolution halves with roughness, never below 32x16.
fn mip_size(src: &EnvMap, roughness: f64) -> (usize, usize) {
    let level = (1.0 + 4.0 * roughness).log2().floor() as usize;
    let w = (src.width >> level).max(32);
    let h = (src.height >> level).max(16).min(w);
    (w, h)
}

/// Specular mip chain; mip 0 is `env` itself.
pub fn prefilter_specular(env: &EnvMap, cfg: &PrefilterConfig) -> Result<Vec<EnvMap>> {
    if cfg.mip_count < 2 {
        return Err(Error::InvalidParameter("specular prefiltering needs at least 2 mips".into()));
    }
    env.validate()?;
    let src = env.downsample_to(cfg.specular_source_width);
    let mut mips = vec![env.clone()];
    for m in 1..cfg.mip_count {
        let (w, h) = mip_size(&src, mip_roughness(m, cfg.mip_count));
        let alpha = ggx_alpha(mip_roughness(m, cfg.mip_count));
        let q = Quadrature::new(w, h, src.width, src.height, cfg.specular_subsamples, ggx_kernel(alpha), 1.0);
        mips.push(EnvMap::new(w, h, q.apply(&src.data))?);
    }
    Ok(mips)
}

/// Transpose of [`prefilter_specular`]: `g[m]` is the gradient on mip `m`.
pub fn prefilter_specular_adjoint(env: &EnvMap, cfg: &PrefilterConfig, g: &[Vec<Rgb>]) -> Vec<Rgb> {
    let src = env.downsample_to(cfg.specular_source_width);
    let mut src_grad = vec![Rgb::zeros(); src.data.len()];
    for (m, gm) in g.iter().enumerate().skip(1) {
        let (w, h) = mip_size(&src, mip_roughness(m, cfg.mip_count));
        let alpha = ggx_alpha(mip_roughness(m, cfg.mip_count));
        let q = Quadrature::new(w, h, src.width, src.height, cfg.specular_subsamples, ggx_kernel(alpha), 1.0);
        for (a, b) in src_grad.iter_mut().zip(q.adjoint(gm)) {
            *a += b;
        }
    }
    let mut out = env.downsample_adjoint(cfg.specular_source_width, &src_grad);
    for (a, b) in out.iter_mut().zip(&g[0]) {
        *a += b;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> PrefilterConfig {
        PrefilterConfig {
            irradiance_width: 8,
            irradiance_height: 4,
            diffuse_source_width: 16,
            diffuse_subsamples: 2,
            specular_source_width: 16,
            specular_subsamples: 1,
            mip_count: 3,
        }
    }

    #[test]
    fn constant_environment_gives_pi_c() {
        let c = Rgb::new(0.5, 1.0, 2.0);
        let irr = prefilter_diffuse(&EnvMap::constant(64, 32, c), &PrefilterConfig::default()).unwrap();
        for v in irr.data {
            assert!(((v - c * PI).norm() / (c * PI).norm()) < 1e-12);
        }
    }

    #[test]
    fn black_environment_gives_zero() {
        let cfg = small_cfg();
        let env = EnvMap::constant(16, 8, Rgb::zeros());
        assert!(prefilter_diffuse(&env, &cfg).unwrap().data.iter().all(|v| *v == Rgb::zeros()));
        for mip in prefilter_specular(&env, &cfg).unwrap() {
            assert!(mip.data.iter().all(|v| *v == Rgb::zeros()));
        }
    }

    #[test]
    fn nan_environment_is_rejected() {
        let mut env = EnvMap::constant(16, 8, Rgb::repeat(1.0));
        env.data[3].x = f64::NAN;
        assert!(matches!(prefilter_diffuse(&env, &small_cfg()), Err(Error::NonFinite(_))));
    }

    #[test]
    fn adjoints_are_transposes() {
        let cfg = small_cfg();
        let env = EnvMap::from_fn(16, 8, |d| Rgb::new(1.0 + d.x, 1.0 + d.y * d.y, 0.2 + d.z.abs()));
        let irr = prefilter_diffuse(&env, &cfg).unwrap();
        let g: Vec<Rgb> = (0..irr.data.len())
            .map(|k| Rgb::new((k as f64 * 0.3).sin(), 0.5, (k as f64).cos()))
            .collect();
        let lhs: f64 = irr.data.iter().zip(&g).map(|(a, b)| a.dot(b)).sum();
        let back = prefilter_diffuse_adjoint(&env, &cfg, &g);
        let rhs: f64 = env.data.iter().zip(&back).map(|(a, b)| a.dot(b)).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));

        let mips = prefilter_specular(&env, &cfg).unwrap();
        let gm: Vec<Vec<Rgb>> = mips
            .iter()
            .map(|m| (0..m.data.len()).map(|k| Rgb::new(1.0, (k as f64).sin(), -0.3)).collect())
            .collect();
        let lhs: f64 = mips
            .iter()
            .zip(&gm)
            .map(|(m, g)| m.data.iter().zip(g).map(|(a, b)| a.dot(b)).sum::<f64>())
            .sum();
        let back = prefilter_specular_adjoint(&env, &cfg, &gm);
        let rhs: f64 = env.data.iter().zip(&back).map(|(a, b)| a.dot(b)).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn mip_zero_is_the_environment_and_constants_survive() {
        let c = Rgb::new(0.3, 0.6, 0.9);
        let mips = prefilter_specular(&EnvMap::constant(16, 8, c), &small_cfg()).unwrap();
        assert_eq!(mips[0], EnvMap::constant(16, 8, c));
        for m in &mips {
            for v in &m.data {
                assert!((v - c).norm() < 1e-12);
            }
        }
    }
}
