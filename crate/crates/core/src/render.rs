//! Image formation: projection, one shared blend, and the forward and
//! deferred shading branches built on it.

use crate::error::Result;
use crate::img::Image;
use crate::math::{Rgb, Vec3};
use crate::par;
use crate::probes::ProbeGrid;
use crate::raster::gbuffer::{channel, GBuffer};
use crate::raster::{project_gaussian, rasterize};
use crate::scene::{shortest_axis_normal, Camera, GaussianParticle, Scene, Splat2D};
use crate::shading::{shade_sample, EnvironmentLight, ShadingModel, ShadingSample};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RenderMode {
    /// Both branches from one blend.
    Train,
    /// Deferred branch only.
    Infer,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct RenderOptions {
    pub background: Rgb,
    pub model: ShadingModel,
    pub ao_samples: usize,
    pub ao_seed: u64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            background: Rgb::zeros(),
            model: ShadingModel::default(),
            ao_samples: crate::probes::DEFAULT_AO_SAMPLES,
            ao_seed: 0,
        }
    }
}

/// Per-particle shading inputs of a visible particle.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleShading {
    pub index: usize,
    pub normal: Vec3,
    pub axis: usize,
    pub sign: f64,
    /// Unit direction from the particle toward the camera center.
    pub view: Vec3,
    pub ao: f64,
    pub indirect: Option<Rgb>,
    /// Forward-branch radiance (zero in inference mode).
    pub radiance: Rgb,
}

impl ParticleShading {
    pub fn sample(&self, p: &GaussianParticle) -> ShadingSample {
        ShadingSample {
            position: p.position,
            normal: self.normal,
            view: self.view,
            albedo: p.diffuse_albedo,
            specular: p.specular_color,
            roughness: p.roughness(),
            ao: self.ao,
        }
    }
}

/// Everything the backward pass needs to replay a render.
#[derive(Clone, Debug)]
pub struct RenderRecord {
    pub camera: Camera,
    pub mode: RenderMode,
    pub options: RenderOptions,
    pub particle_count: usize,
    pub splats: Vec<Splat2D>,
    /// Aligned with `splats`.
    pub shading: Vec<ParticleShading>,
    pub payload: Vec<f64>,
    pub gbuffer: GBuffer,
    pub forward: Option<Image>,
    pub deferred: Image,
    pub has_probes: bool,
}

/// Projects every particle; returns the visible splats in particle order.
pub fn project_scene(scene: &Scene, cam: &Camera) -> Vec<Splat2D> {
    par::map_range(scene.len(), |i| project_gaussian(&scene.particles[i], cam, i))
        .into_iter()
        .flatten()
        .collect()
}

/// Per-particle probe terms captured from one render, so that later renders
/// can reuse them while the particles move.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenProbeTerms {
    /// Indexed by particle; `None` for particles that were not visible.
    pub terms: Vec<Option<(f64, Rgb)>>,
}

impl FrozenProbeTerms {
    pub fn from_record(rec: &RenderRecord) -> Self {
        let mut terms = vec![None; rec.particle_count];
        if rec.has_probes {
            for s in &rec.shading {
                terms[s.index] = Some((s.ao, s.indirect.unwrap_or_else(Rgb::zeros)));
            }
        }
        FrozenProbeTerms { terms }
    }
}

/// Where a particle's ambient occlusion and indirect light come from.
#[derive(Clone, Copy, Debug)]
pub enum ProbeTerms<'a> {
    None,
    Grid(&'a ProbeGrid),
    Frozen(&'a FrozenProbeTerms),
}

impl ProbeTerms<'_> {
    fn query(&self, index: usize, p: &GaussianParticle, normal: &Vec3, opts: &RenderOptions) -> (f64, Option<Rgb>) {
        match self {
            ProbeTerms::None => (0.0, None),
            ProbeTerms::Grid(g) => (
                g.query_ao(&p.position, normal, opts.ao_samples, opts.ao_seed).value,
                Some(g.query_indirect(&p.position, normal).value),
            ),
            ProbeTerms::Frozen(f) => {
                let (ao, ind) = f.terms.get(index).copied().flatten().unwrap_or((0.0, Rgb::zeros()));
                (ao, Some(ind))
            }
        }
    }

    fn is_some(&self) -> bool {
        !matches!(self, ProbeTerms::None)
    }
}

fn particle_shading(
    p: &GaussianParticle,
    index: usize,
    eye: &Vec3,
    env: Option<&EnvironmentLight>,
    probes: ProbeTerms,
    opts: &RenderOptions,
) -> ParticleShading {
    let (normal, axis, sign) = shortest_axis_normal(&p.rotation, &p.log_scale, &p.position, eye);
    let to_eye = eye - p.position;
    let len = to_eye.norm();
    let view = if len > 0.0 { to_eye / len } else { normal };
    let (ao, indirect) = probes.query(index, p, &normal, opts);
    let mut ps = ParticleShading {
        index,
        normal,
        axis,
        sign,
        view,
        ao,
        indirect,
        radiance: Rgb::zeros(),
    };
    if let Some(env) = env {
        ps.radiance = shade_sample(&ps.sample(p), env, ps.indirect.as_ref(), opts.model);
    }
    ps
}

fn write_payload(p: &GaussianParticle, s: &ParticleShading, depth: f64, out: &mut [f64]) {
    out[channel::NORMAL..channel::NORMAL + 3].copy_from_slice(s.normal.as_slice());
    out[channel::POSITION..channel::POSITION + 3].copy_from_slice(p.position.as_slice());
    out[channel::DEPTH] = depth;
    out[channel::ALBEDO..channel::ALBEDO + 3].copy_from_slice(p.diffuse_albedo.as_slice());
    out[channel::SPECULAR..channel::SPECULAR + 3].copy_from_slice(p.specular_color.as_slice());
    out[channel::ROUGHNESS] = p.roughness();
    out[channel::AO] = s.ao;
    let ind = s.indirect.unwrap_or_else(Rgb::zeros);
    out[channel::INDIRECT..channel::INDIRECT + 3].copy_from_slice(ind.as_slice());
    out[channel::RADIANCE..channel::RADIANCE + 3].copy_from_slice(s.radiance.as_slice());
}

/// Renders both shading branches (train) or the deferred branch (infer) from
/// a single rasterization.
pub fn render_unified(
    scene: &Scene,
    cam: &Camera,
    env: &EnvironmentLight,
    probes: Option<&ProbeGrid>,
    opts: &RenderOptions,
    mode: RenderMode,
) -> Result<RenderRecord> {
    let terms = match probes {
        Some(g) => ProbeTerms::Grid(g),
        None => ProbeTerms::None,
    };
    render_with_terms(scene, cam, env, terms, opts, mode)
}

/// [`render_unified`] with an explicit source of probe terms.
pub fn render_with_terms(
    scene: &Scene,
    cam: &Camera,
    env: &EnvironmentLight,
    probes: ProbeTerms,
    opts: &RenderOptions,
    mode: RenderMode,
) -> Result<RenderRecord> {
    let shade = mode == RenderMode::Train;
    let (splats, shading, payload, gbuffer) = blend_attributes(scene, cam, shade.then_some(env), probes, opts)?;
    let forward = shade.then(|| forward_image(&gbuffer, &opts.background));
    let deferred = shade_deferred(&gbuffer, cam, env, probes.is_some(), opts);
    Ok(RenderRecord {
        camera: cam.clone(),
        mode,
        options: opts.clone(),
        particle_count: scene.len(),
        splats,
        shading,
        payload,
        gbuffer,
        forward,
        deferred,
        has_probes: probes.is_some(),
    })
}

/// Blended attribute buffer without any per-pixel shading.
pub fn render_gbuffer(scene: &Scene, cam: &Camera, opts: &RenderOptions) -> Result<GBuffer> {
    Ok(blend_attributes(scene, cam, None, ProbeTerms::None, opts)?.3)
}

fn blend_attributes(
    scene: &Scene,
    cam: &Camera,
    env: Option<&EnvironmentLight>,
    probes: ProbeTerms,
    opts: &RenderOptions,
) -> Result<(Vec<Splat2D>, Vec<ParticleShading>, Vec<f64>, GBuffer)> {
    cam.validate()?;
    let splats = project_scene(scene, cam);
    let eye = cam.center();
    let shading = par::map_slice(&splats, |s| {
        particle_shading(&scene.particles[s.particle_index], s.particle_index, &eye, env, probes, opts)
    });
    let mut payload = vec![0.0; splats.len() * channel::COUNT];
    for (k, (s, ps)) in splats.iter().zip(&shading).enumerate() {
        write_payload(
            &scene.particles[s.particle_index],
            ps,
            s.depth,
            &mut payload[k * channel::COUNT..(k + 1) * channel::COUNT],
        );
    }
    let raster = rasterize(&splats, &payload, channel::COUNT, cam.width, cam.height)?;
    Ok((splats, shading, payload, GBuffer::new(raster)))
}

fn forward_image(g: &GBuffer, bg: &Rgb) -> Image {
    let r = &g.raster;
    let pixels = (0..r.alpha.len())
        .map(|i| {
            let p = r.pixel(i);
            let c = Rgb::new(p[channel::RADIANCE], p[channel::RADIANCE + 1], p[channel::RADIANCE + 2]);
            c + bg * (1.0 - r.alpha[i])
        })
        .collect();
    Image {
        width: r.width,
        height: r.height,
        pixels,
    }
}

/// Deferred shading sample of covered pixel `i`.
pub fn deferred_sample(g: &GBuffer, cam: &Camera, i: usize) -> Option<(ShadingSample, Rgb, f64)> {
    let a = g.attributes(i)?;
    let to_eye = cam.center() - a.position;
    let len = to_eye.norm();
    let view = if len > 0.0 { to_eye / len } else { a.normal };
    Some((
        ShadingSample {
            position: a.position,
            normal: a.normal,
            view,
            albedo: a.albedo,
            specular: a.specular,
            roughness: a.roughness,
            ao: a.ao,
        },
        a.indirect,
        a.alpha,
    ))
}

/// Shades every covered G-buffer pixel once and composites over the background.
pub fn shade_deferred(
    g: &GBuffer,
    cam: &Camera,
    env: &EnvironmentLight,
    with_indirect: bool,
    opts: &RenderOptions,
) -> Image {
    let bg = opts.background;
    let pixels = par::map_range(g.raster.alpha.len(), |i| match deferred_sample(g, cam, i) {
        Some((s, ind, a)) => {
            let ind = with_indirect.then_some(ind);
            shade_sample(&s, env, ind.as_ref(), opts.model) * a + bg * (1.0 - a)
        }
        None => bg,
    });
    Image {
        width: g.width(),
        height: g.height(),
        pixels,
    }
}

/// Forward shading on its own: shades each particle, then blends radiance.
pub fn shade_forward(
    scene: &Scene,
    cam: &Camera,
    env: &EnvironmentLight,
    probes: Option<&ProbeGrid>,
    opts: &RenderOptions,
) -> Result<Image> {
    cam.validate()?;
    let splats = project_scene(scene, cam);
    let eye = cam.center();
    let terms = match probes {
        Some(g) => ProbeTerms::Grid(g),
        None => ProbeTerms::None,
    };
    let radiance: Vec<f64> = par::map_slice(&splats, |s| {
        particle_shading(&scene.particles[s.particle_index], s.particle_index, &eye, Some(env), terms, opts)
            .radiance
    })
    .into_iter()
    .flat_map(|c| [c.x, c.y, c.z])
    .collect();
    let r = rasterize(&splats, &radiance, 3, cam.width, cam.height)?;
    let pixels = (0..r.alpha.len())
        .map(|i| {
            let p = r.pixel(i);
            Rgb::new(p[0], p[1], p[2]) + opts.background * (1.0 - r.alpha[i])
        })
        .collect();
    Ok(Image {
        width: cam.width,
        height: cam.height,
        pixels,
    })
}

/// Camera-space unit normals of the G-buffer (zero where uncovered).
pub fn camera_normals(g: &GBuffer, cam: &Camera) -> Vec<Vec3> {
    (0..g.raster.alpha.len())
        .map(|i| {
            if g.covered(i) {
                cam.rotation * g.normal(i)
            } else {
                Vec3::zeros()
            }
        })
        .collect()
}
