//! Brute-force Monte-Carlo reference for the shading integral, free of the
//! split-sum and prefiltering approximations.
//!
//! Integrates `L(l) f(l, v) (n . l)` over the hemisphere around `n` with the
//! full Lambert + GGX BRDF. Radiance is read from the unfiltered map with
//! bilinear interpolation and is never occluded. Random numbers come from a
//! counter-based hash of `(key, sample, dimension, seed)`, so results do not
//! depend on scheduling.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::img::Image;
use crate::math::{reflect, tangent_frame, Rgb, Vec3, INV_PI};
use crate::metrics::psnr;
use crate::raster::rasterize;
use crate::render::{deferred_sample, project_scene, render_gbuffer, render_unified, shade_deferred, shade_forward, RenderMode, RenderOptions};
use crate::scene::{shortest_axis_normal, Camera, Scene};
use crate::shading::brdf::{ggx_alpha, ggx_d, sample_ggx_half, specular_brdf};
use crate::shading::{EnvMap, EnvironmentLight, ShadingModel, ShadingSample};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub enum Sampler {
    Uniform,
    Cosine,
    /// GGX half-vector sampling, mixed half and half with cosine sampling
    /// when the diffuse albedo is nonzero.
    #[default]
    Ggx,
}

impl Sampler {
    pub fn name(self) -> &'static str {
        match self {
            Sampler::Uniform => "uniform",
            Sampler::Cosine => "cosine",
            Sampler::Ggx => "ggx",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Sampler::Uniform),
            "cosine" => Ok(Sampler::Cosine),
            "ggx" => Ok(Sampler::Ggx),
            _ => Err(Error::InvalidParameter(format!("unknown sampler '{s}' (uniform, cosine, ggx)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleConfig {
    pub samples: usize,
    pub seed: u64,
    pub sampler: Sampler,
    pub max_particles: usize,
    pub max_pixels: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            samples: 4096,
            seed: 0,
            sampler: Sampler::Ggx,
            max_particles: 1000,
            max_pixels: 128 * 128,
        }
    }
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform number in `[0, 1)` determined by its coordinates alone.
#[inline]
pub fn counter_uniform(seed: u64, key: u64, sample: u64, dim: u64) -> f64 {
    let h = splitmix64(splitmix64(splitmix64(seed ^ 0x5851_F42D_4C95_7F2D).wrapping_add(key)).wrapping_add(sample) ^ dim.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Monte-Carlo estimate with per-channel standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: Rgb,
    pub std_error: Rgb,
}

fn local_to_world(n: &Vec3, x: f64, y: f64, z: f64) -> Vec3 {
    let (t, b) = tangent_frame(n);
    t * x + b * y + n * z
}

fn uniform_dir(n: &Vec3, u1: f64, u2: f64) -> Vec3 {
    let z = u1;
    let r = (1.0 - z * z).max(0.0).sqrt();
    let phi = 2.0 * PI * u2;
    local_to_world(n, r * phi.cos(), r * phi.sin(), z)
}

fn cosine_dir(n: &Vec3, u1: f64, u2: f64) -> Vec3 {
    let r = u1.sqrt();
    let phi = 2.0 * PI * u2;
    local_to_world(n, r * phi.cos(), r * phi.sin(), (1.0 - u1).max(0.0).sqrt())
}

fn ggx_pdf(n: &Vec3, v: &Vec3, l: &Vec3, alpha: f64) -> f64 {
    let h = (v + l).normalize();
    let vh = v.dot(&h).abs();
    if vh <= 0.0 {
        return 0.0;
    }
    let nh = n.dot(&h);
    ggx_d(nh, alpha) * nh.max(0.0) / (4.0 * vh)
}

/// Integrand `L(l) f(l, v) (n . l)` without any division by a density.
fn integrand(s: &ShadingSample, env: &EnvMap, model: ShadingModel, l: &Vec3) -> Rgb {
    let nl = s.normal.dot(l);
    if nl <= 0.0 {
        return Rgb::zeros();
    }
    let mut f = s.albedo * INV_PI;
    if model.specular {
        f += specular_brdf(&s.normal, &s.view, l, &s.specular, s.roughness);
    }
    env.lookup(l).component_mul(&f) * nl
}

/// Unbiased estimate of the shading integral for one sample. `key`
/// decorrelates independent calls (use the pixel or particle index).
pub fn mc_shade(s: &ShadingSample, env: &EnvMap, model: ShadingModel, cfg: &OracleConfig, key: u64) -> McEstimate {
    let n = cfg.samples.max(1);
    let alpha = ggx_alpha(s.roughness);
    let p_spec = if !model.specular {
        0.0
    } else if s.albedo == Rgb::zeros() {
        1.0
    } else {
        0.5
    };
    let mut mean = Rgb::zeros();
    let mut m2 = Rgb::zeros();
    for k in 0..n as u64 {
        let u = |d| counter_uniform(cfg.seed, key, k, d);
        let (l, pdf) = match cfg.sampler {
            Sampler::Uniform => (uniform_dir(&s.normal, u(0), u(1)), 0.5 * INV_PI),
            Sampler::Cosine => {
                let l = cosine_dir(&s.normal, u(0), u(1));
                (l, s.normal.dot(&l).max(0.0) * INV_PI)
            }
            Sampler::Ggx => {
                let l = if u(2) < p_spec {
                    let h = sample_ggx_half(&s.normal, alpha, u(0), u(1));
                    reflect(&s.view, &h)
                } else {
                    cosine_dir(&s.normal, u(0), u(1))
                };
                let cos_pdf = s.normal.dot(&l).max(0.0) * INV_PI;
                let spec_pdf = if p_spec > 0.0 { ggx_pdf(&s.normal, &s.view, &l, alpha) } else { 0.0 };
                (l, p_spec * spec_pdf + (1.0 - p_spec) * cos_pdf)
            }
        };
        let x = if pdf > 0.0 {
            integrand(s, env, model, &l) / pdf
        } else {
            Rgb::zeros()
        };
        let delta = x - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta.component_mul(&(x - mean));
    }
    let nf = n as f64;
    let var = if n > 1 {
        m2.map(|v| v.max(0.0)) / (nf - 1.0)
    } else {
        Rgb::zeros()
    };
    McEstimate {
        mean,
        std_error: var.map(|v| (v / nf).sqrt()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Branch {
    /// Integrate per particle, then blend the radiances.
    Forward,
    /// Blend attributes, then integrate once per pixel.
    Surface,
}

impl Branch {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Branch::Forward),
            "surface" => Ok(Branch::Surface),
            _ => Err(Error::InvalidParameter(format!("unknown branch '{s}' (forward, surface)"))),
        }
    }
}

pub struct McImage {
    pub image: Image,
    /// Per-pixel standard error; an upper bound in the forward branch.
    pub std_error: Image,
}

/// Refuses scenes beyond the documented size limits.
pub fn check_budget(scene: &Scene, cam: &Camera, cfg: &OracleConfig) -> Result<()> {
    let pixels = cam.width * cam.height;
    let estimate = ((pixels + scene.len()) as u64).saturating_mul(cfg.samples as u64);
    let limit = ((cfg.max_pixels + cfg.max_particles) as u64).saturating_mul(cfg.samples as u64);
    if scene.len() > cfg.max_particles || pixels > cfg.max_pixels {
        return Err(Error::Budget { estimate, limit });
    }
    Ok(())
}

/// Ground-truth image of either shading philosophy.
pub fn mc_render(
    scene: &Scene,
    cam: &Camera,
    env: &EnvMap,
    opts: &RenderOptions,
    cfg: &OracleConfig,
    branch: Branch,
) -> Result<McImage> {
    check_budget(scene, cam, cfg)?;
    cam.validate()?;
    let bg = opts.background;
    match branch {
        Branch::Forward => {
            let splats = project_scene(scene, cam);
            let eye = cam.center();
            let est = crate::par::map_slice(&splats, |sp| {
                let p = &scene.particles[sp.particle_index];
                let (normal, _, _) = shortest_axis_normal(&p.rotation, &p.log_scale, &p.position, &eye);
                let to_eye = eye - p.position;
                let view = if to_eye.norm() > 0.0 { to_eye.normalize() } else { normal };
                let s = ShadingSample {
                    position: p.position,
                    normal,
                    view,
                    albedo: p.diffuse_albedo,
                    specular: p.specular_color,
                    roughness: p.roughness(),
                    ao: 0.0,
                };
                mc_shade(&s, env, opts.model, cfg, sp.particle_index as u64)
            });
            let mut payload = Vec::with_capacity(splats.len() * 6);
            for e in &est {
                payload.extend(e.mean.iter().chain(e.std_error.iter()));
            }
            let r = rasterize(&splats, &payload, 6, cam.width, cam.height)?;
            let mut image = Image::new(cam.width, cam.height);
            let mut se = Image::new(cam.width, cam.height);
            for i in 0..image.len() {
                let p = r.pixel(i);
                image.pixels[i] = Rgb::new(p[0], p[1], p[2]) + bg * (1.0 - r.alpha[i]);
                se.pixels[i] = Rgb::new(p[3], p[4], p[5]);
            }
            Ok(McImage { image, std_error: se })
        }
        Branch::Surface => {
            let gbuffer = render_gbuffer(scene, cam, opts)?;
            let g = &gbuffer;
            let out = crate::par::map_range(cam.width * cam.height, |i| match deferred_sample(g, cam, i) {
                Some((mut s, _, a)) => {
                    s.ao = 0.0;
                    let e = mc_shade(&s, env, opts.model, cfg, i as u64);
                    (e.mean * a + bg * (1.0 - a), e.std_error * a)
                }
                None => (bg * (1.0 - g.alpha(i)), Rgb::zeros()),
            });
            let (pix, se): (Vec<_>, Vec<_>) = out.into_iter().unzip();
            Ok(McImage {
                image: Image::from_pixels(cam.width, cam.height, pix)?,
                std_error: Image::from_pixels(cam.width, cam.height, se)?,
            })
        }
    }
}

/// Error statistics of one shading scheme against the oracle.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SchemeStats {
    pub psnr: f64,
    /// Mean absolute linear error over covered pixels.
    pub mae: f64,
    /// Mean absolute linear error over the brightest tenth of covered pixels.
    pub highlight_mae: f64,
    /// Peak luminance over covered pixels.
    pub peak: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SchemeReport {
    pub forward: SchemeStats,
    pub deferred: SchemeStats,
    pub truth_peak: f64,
    /// `deferred.psnr - forward.psnr` in dB.
    pub gap_db: f64,
    pub covered_pixels: usize,
    /// `"deferred"`, `"forward"` or `"tie"` (gap within 1 dB).
    pub closer: String,
}

fn stats(img: &Image, truth: &Image, covered: &[usize], highlight: &[usize]) -> Result<SchemeStats> {
    let mae_over = |idx: &[usize]| {
        if idx.is_empty() {
            return 0.0;
        }
        idx.iter()
            .map(|&i| (img.pixels[i] - truth.pixels[i]).abs().sum() / 3.0)
            .sum::<f64>()
            / idx.len() as f64
    };
    Ok(SchemeStats {
        psnr: psnr(&img.to_display(), &truth.to_display())?,
        mae: mae_over(covered),
        highlight_mae: mae_over(highlight),
        peak: covered.iter().map(|&i| crate::math::luminance(&img.pixels[i])).fold(0.0, f64::max),
    })
}

/// Compares split-sum forward and deferred shading against the surface-branch
/// oracle. PSNR is measured on display-encoded images.
pub fn compare_schemes(
    scene: &Scene,
    cam: &Camera,
    env: &EnvironmentLight,
    opts: &RenderOptions,
    cfg: &OracleConfig,
) -> Result<SchemeReport> {
    let truth = mc_render(scene, cam, &env.radiance, opts, cfg, Branch::Surface)?.image;
    let rec = render_unified(scene, cam, env, None, opts, RenderMode::Infer)?;
    let deferred = shade_deferred(&rec.gbuffer, cam, env, false, opts);
    let forward = shade_forward(scene, cam, env, None, opts)?;
    let covered: Vec<usize> = (0..truth.len()).filter(|&i| rec.gbuffer.covered(i)).collect();
    let mut by_lum = covered.clone();
    by_lum.sort_by(|&a, &b| {
        crate::math::luminance(&truth.pixels[b]).total_cmp(&crate::math::luminance(&truth.pixels[a]))
    });
    let highlight = &by_lum[..by_lum.len().div_ceil(10)];
    let f = stats(&forward, &truth, &covered, highlight)?;
    let d = stats(&deferred, &truth, &covered, highlight)?;
    let gap = d.psnr - f.psnr;
    let closer = if gap.abs() < 1.0 {
        "tie"
    } else if gap > 0.0 {
        "deferred"
    } else {
        "forward"
    };
    Ok(SchemeReport {
        truth_peak: covered.iter().map(|&i| crate::math::luminance(&truth.pixels[i])).fold(0.0, f64::max),
        forward: f,
        deferred: d,
        gap_db: gap,
        covered_pixels: covered.len(),
        closer: closer.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(albedo: f64, spec: f64, r: f64) -> ShadingSample {
        ShadingSample {
            position: Vec3::zeros(),
            normal: Vec3::y(),
            view: Vec3::new(0.5, 1.0, 0.2).normalize(),
            albedo: Rgb::repeat(albedo),
            specular: Rgb::repeat(spec),
            roughness: r,
            ao: 0.0,
        }
    }

    #[test]
    fn black_environment_is_exactly_zero() {
        let env = EnvMap::constant(16, 8, Rgb::zeros());
        let e = mc_shade(&sample(0.5, 0.5, 0.3), &env, ShadingModel::default(), &OracleConfig::default(), 1);
        assert_eq!(e.mean, Rgb::zeros());
        assert_eq!(e.std_error, Rgb::zeros());
    }

    #[test]
    fn cosine_sampling_of_lambertian_has_zero_variance() {
        let env = EnvMap::constant(16, 8, Rgb::new(2.0, 1.0, 0.5));
        let cfg = OracleConfig {
            sampler: Sampler::Cosine,
            samples: 64,
            ..OracleConfig::default()
        };
        let e = mc_shade(&sample(0.4, 0.0, 0.5), &env, ShadingModel { specular: false }, &cfg, 3);
        assert!((e.mean - Rgb::new(0.8, 0.4, 0.2)).norm() < 1e-12);
        assert!(e.std_error.max() < 1e-12);
    }

    #[test]
    fn samplers_agree_within_combined_error() {
        let env = crate::scenes::studio_environment(64, 32);
        let s = sample(0.3, 0.6, 0.4);
        let model = ShadingModel::default();
        let run = |sampler| {
            mc_shade(
                &s,
                &env,
                model,
                &OracleConfig {
                    sampler,
                    samples: 20000,
                    ..OracleConfig::default()
                },
                9,
            )
        };
        let (a, b, c) = (run(Sampler::Uniform), run(Sampler::Cosine), run(Sampler::Ggx));
        for (x, y) in [(a, b), (a, c), (b, c)] {
            for k in 0..3 {
                let tol = 3.0 * (x.std_error[k].powi(2) + y.std_error[k].powi(2)).sqrt();
                assert!((x.mean[k] - y.mean[k]).abs() <= tol, "{x:?} {y:?}");
            }
        }
    }

    #[test]
    fn standard_error_shrinks_with_sample_count() {
        let env = crate::scenes::studio_environment(64, 32);
        let s = sample(0.5, 0.2, 0.6);
        let se = |n| {
            mc_shade(
                &s,
                &env,
                ShadingModel::default(),
                &OracleConfig {
                    samples: n,
                    sampler: Sampler::Uniform,
                    ..OracleConfig::default()
                },
                4,
            )
            .std_error
            .x
        };
        let ratio = se(20000) / se(40000);
        assert!((ratio - 2f64.sqrt()).abs() < 0.1 * 2f64.sqrt(), "{ratio}");
    }

    #[test]
    fn counter_stream_is_uniform_enough() {
        let n = 100_000;
        let mean = (0..n).map(|k| counter_uniform(1, 2, k, 0)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.005);
        assert_ne!(counter_uniform(1, 2, 3, 0), counter_uniform(1, 2, 3, 1));
    }
}
