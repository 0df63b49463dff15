//! Reverse-mode pass through shading, blending and projection.

use crate::diff::params::{ParamKind, ParameterVector};
use crate::error::{Error, Result};
use crate::math::{normalize_vjp, quat_to_rotation_vjp, Rgb, Vec3};
use crate::par;
use crate::raster::gbuffer::channel;
use crate::raster::{project_backward, rasterize_backward};
use crate::render::{deferred_sample, RenderMode, RenderRecord};
use crate::scene::Scene;
use crate::shading::shade::shade_sample_env_adjoint;
use crate::shading::{shade_sample, shade_sample_vjp, EnvironmentLight};

/// Loss gradients on the outputs of a render.
#[derive(Clone, Debug, Default)]
pub struct OutputAdjoint {
    /// Per pixel, on the forward-branch image.
    pub forward: Option<Vec<Rgb>>,
    /// Per pixel, on the deferred-branch image.
    pub deferred: Option<Vec<Rgb>>,
    /// On the raw blended payload (`channel::COUNT` values per pixel).
    pub accum: Option<Vec<f64>>,
    /// On the blended alpha.
    pub alpha: Option<Vec<f64>>,
}

/// Gradients on the prefiltered environment tables.
#[derive(Clone, Debug)]
pub struct EnvGradient {
    pub irradiance: Vec<Rgb>,
    pub mips: Vec<Vec<Rgb>>,
}

impl EnvGradient {
    pub fn zeros(env: &EnvironmentLight) -> Self {
        EnvGradient {
            irradiance: vec![Rgb::zeros(); env.irradiance.data.len()],
            mips: env
                .specular_mips
                .iter()
                .map(|m| vec![Rgb::zeros(); m.data.len()])
                .collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Gradients {
    pub params: ParameterVector,
    pub env: Option<EnvGradient>,
}

fn vec3(s: &[f64], c: usize) -> Vec3 {
    Vec3::new(s[c], s[c + 1], s[c + 2])
}

fn add3(s: &mut [f64], c: usize, v: &Vec3) {
    s[c] += v.x;
    s[c + 1] += v.y;
    s[c + 2] += v.z;
}

/// Exact gradient of `sum <adjoint, outputs>` with respect to every particle
/// parameter, optionally also with respect to the environment tables.
pub fn backward(
    record: &RenderRecord,
    scene: &Scene,
    env: &EnvironmentLight,
    adjoint: &OutputAdjoint,
    want_env: bool,
) -> Result<Gradients> {
    if record.particle_count != scene.len() {
        return Err(Error::Contract(format!(
            "record was made for {} particles, scene has {}",
            record.particle_count,
            scene.len()
        )));
    }
    let cam = &record.camera;
    let g = &record.gbuffer;
    let raster = &g.raster;
    let n = raster.alpha.len();
    let ch = channel::COUNT;
    let bg = record.options.background;
    let model = record.options.model;
    let eye = cam.center();
    let with_ind = record.has_probes;

    let check = |len: usize, what: &str| -> Result<()> {
        if len != n {
            return Err(Error::Contract(format!("{what} adjoint has {len} pixels, expected {n}")));
        }
        Ok(())
    };

    let mut d_accum = match &adjoint.accum {
        Some(a) => {
            check(a.len() / ch, "payload")?;
            a.clone()
        }
        None => vec![0.0; n * ch],
    };
    let mut d_alpha = match &adjoint.alpha {
        Some(a) => {
            check(a.len(), "alpha")?;
            a.clone()
        }
        None => vec![0.0; n],
    };

    if let Some(df) = &adjoint.forward {
        check(df.len(), "forward")?;
        if record.mode != RenderMode::Train {
            return Err(Error::Contract("forward adjoint given for an inference render".into()));
        }
        for i in 0..n {
            add3(&mut d_accum[i * ch..(i + 1) * ch], channel::RADIANCE, &df[i]);
            d_alpha[i] -= df[i].dot(&bg);
        }
    }

    let mut env_grad = want_env.then(|| EnvGradient::zeros(env));
    if let Some(dd) = &adjoint.deferred {
        check(dd.len(), "deferred")?;
        let per_pixel = par::map_range(n, |i| -> Option<([f64; channel::COUNT], f64)> {
            let gi = dd[i];
            if gi == Rgb::zeros() {
                return None;
            }
            let (s, ind, a) = deferred_sample(g, cam, i)?;
            let ind = with_ind.then_some(ind);
            let lo = shade_sample(&s, env, ind.as_ref(), model);
            let mut da = gi.dot(&(lo - bg));
            let gl = gi * a;
            let sg = shade_sample_vjp(&s, env, ind.as_ref(), model, &gl);
            let raw = raster.pixel(i);
            let mut out = [0.0; channel::COUNT];
            let dn = normalize_vjp(&vec3(raw, channel::NORMAL), &sg.normal);
            add3(&mut out, channel::NORMAL, &dn);
            // view = normalize(eye - X / a)
            let to_eye = eye - s.position;
            let dx_bar = if to_eye.norm() > 0.0 { -normalize_vjp(&to_eye, &sg.view) } else { Vec3::zeros() };
            add3(&mut out, channel::POSITION, &(dx_bar / a));
            da -= dx_bar.dot(&s.position) / a;
            // Normalized material channels q = Q / a.
            add3(&mut out, channel::ALBEDO, &(sg.albedo / a));
            da -= sg.albedo.dot(&s.albedo) / a;
            add3(&mut out, channel::SPECULAR, &(sg.specular / a));
            da -= sg.specular.dot(&s.specular) / a;
            out[channel::ROUGHNESS] += sg.roughness / a;
            da -= sg.roughness * s.roughness / a;
            if let Some(ind) = ind {
                out[channel::AO] += sg.ao / a;
                da -= sg.ao * s.ao / a;
                add3(&mut out, channel::INDIRECT, &(sg.indirect / a));
                da -= sg.indirect.dot(&ind) / a;
            }
            Some((out, da))
        });
        for (i, r) in per_pixel.into_iter().enumerate() {
            if let Some((out, da)) = r {
                for c in 0..ch {
                    d_accum[i * ch + c] += out[c];
                }
                d_alpha[i] += da;
            }
        }
        if let Some(eg) = env_grad.as_mut() {
            for i in 0..n {
                if dd[i] == Rgb::zeros() {
                    continue;
                }
                if let Some((s, ind, a)) = deferred_sample(g, cam, i) {
                    let ind = with_ind.then_some(ind);
                    shade_sample_env_adjoint(&s, env, ind.as_ref(), model, &(dd[i] * a), &mut eg.irradiance, &mut eg.mips);
                }
            }
        }
    }

    let rg = rasterize_backward(&record.splats, &record.payload, raster, &d_accum, &d_alpha)?;

    let per_splat = par::map_range(record.splats.len(), |k| {
        let splat = &record.splats[k];
        let ps = &record.shading[k];
        let p = &scene.particles[splat.particle_index];
        let gp = &rg.payload[k * ch..(k + 1) * ch];
        let mut d_pos = vec3(gp, channel::POSITION);
        let mut d_normal = vec3(gp, channel::NORMAL);
        let mut d_view = Vec3::zeros();
        let mut d_albedo = vec3(gp, channel::ALBEDO);
        let mut d_spec = vec3(gp, channel::SPECULAR);
        let mut d_rough = gp[channel::ROUGHNESS];
        let d_rad = vec3(gp, channel::RADIANCE);
        if record.mode == RenderMode::Train && d_rad != Vec3::zeros() {
            let sg = shade_sample_vjp(&ps.sample(p), env, ps.indirect.as_ref(), model, &d_rad);
            d_normal += sg.normal;
            d_view += sg.view;
            d_albedo += sg.albedo;
            d_spec += sg.specular;
            d_rough += sg.roughness;
        }
        let to_eye = eye - p.position;
        if to_eye.norm() > 0.0 {
            d_pos -= normalize_vjp(&to_eye, &d_view);
        }
        let pg = project_backward(p, cam, &rg.mean[k], &rg.conic[k], gp[channel::DEPTH]);
        let mut d_rot = pg.rotation_matrix;
        let mut col = d_rot.column(ps.axis).into_owned();
        col += d_normal * ps.sign;
        d_rot.set_column(ps.axis, &col);
        let d_q = quat_to_rotation_vjp(&p.rotation, &d_rot);
        let scale = p.scale();
        let o = p.opacity();
        let r = p.roughness();
        let mut out = [0.0; crate::diff::params::PARAMS_PER_PARTICLE];
        for a in 0..3 {
            out[ParamKind::Position(a).offset()] = d_pos[a] + pg.position[a];
            out[ParamKind::LogScale(a).offset()] = pg.scale[a] * scale[a];
            out[ParamKind::Albedo(a).offset()] = d_albedo[a];
            out[ParamKind::Specular(a).offset()] = d_spec[a];
        }
        for (kq, dq) in d_q.iter().enumerate() {
            out[ParamKind::Rotation(kq).offset()] = *dq;
        }
        out[ParamKind::OpacityLogit.offset()] = rg.opacity[k] * o * (1.0 - o);
        out[ParamKind::RoughnessLogit.offset()] = d_rough * r * (1.0 - r);
        (splat.particle_index, out)
    });

    let mut params = ParameterVector::zeros(scene.len());
    for (idx, out) in per_splat {
        for (dst, src) in params.particle_mut(idx).iter_mut().zip(out.iter()) {
            *dst += src;
        }
    }

    if let (Some(eg), true) = (env_grad.as_mut(), record.mode == RenderMode::Train) {
        // Forward branch: radiance payload gradients reach each particle's shading.
        for (k, splat) in record.splats.iter().enumerate() {
            let d_rad = vec3(&rg.payload[k * ch..(k + 1) * ch], channel::RADIANCE);
            if d_rad == Vec3::zeros() {
                continue;
            }
            let ps = &record.shading[k];
            let p = &scene.particles[splat.particle_index];
            shade_sample_env_adjoint(&ps.sample(p), env, ps.indirect.as_ref(), model, &d_rad, &mut eg.irradiance, &mut eg.mips);
        }
    }

    Ok(Gradients {
        params,
        env: env_grad,
    })
}
