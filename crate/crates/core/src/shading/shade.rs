//! Split-sum shading of a single surface sample and its adjoint.

use crate::math::{reflect, Rgb, Vec3, INV_PI};
use crate::shading::brdf::MIN_NDOTV;
use crate::shading::light::EnvironmentLight;

/// Surface attributes at one shading point.
#[derive(Clone, Debug, PartialEq)]
pub struct ShadingSample {
    pub position: Vec3,
    /// Unit surface normal.
    pub normal: Vec3,
    /// Unit direction from the surface toward the viewer.
    pub view: Vec3,
    pub albedo: Rgb,
    pub specular: Rgb,
    pub roughness: f64,
    pub ao: f64,
}

/// Which lobes contribute to shading.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub struct ShadingModel {
    pub specular: bool,
}

impl Default for ShadingModel {
    fn default() -> Self {
        ShadingModel { specular: true }
    }
}

/// Outgoing radiance
/// `albedo / pi * ((1 - O) I_d(n) + O I_ind) + (spec A + B) I_s(reflect(v, n), r)`.
///
/// Without `indirect` the occlusion term is ignored.
pub fn shade_sample(
    s: &ShadingSample,
    env: &EnvironmentLight,
    indirect: Option<&Rgb>,
    model: ShadingModel,
) -> Rgb {
    let irr = diffuse_irradiance(s, env, indirect);
    let mut out = s.albedo.component_mul(&irr) * INV_PI;
    if model.specular {
        let nv = s.normal.dot(&s.view).max(MIN_NDOTV);
        let [a, b] = env.brdf_lut.lookup(nv, s.roughness);
        let r = reflect(&s.view, &s.normal);
        let spec = env.specular(&r, s.roughness);
        out += (s.specular * a + Rgb::repeat(b)).component_mul(&spec);
    }
    out
}

fn diffuse_irradiance(s: &ShadingSample, env: &EnvironmentLight, indirect: Option<&Rgb>) -> Rgb {
    let direct = env.diffuse(&s.normal);
    match indirect {
        Some(ind) => direct * (1.0 - s.ao) + ind * s.ao,
        None => direct,
    }
}

/// Gradient of `g . shade_sample(..)` with respect to the sample attributes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ShadingGrad {
    pub normal: Vec3,
    pub view: Vec3,
    pub albedo: Rgb,
    pub specular: Rgb,
    pub roughness: f64,
    pub ao: f64,
    pub indirect: Rgb,
}

pub fn shade_sample_vjp(
    s: &ShadingSample,
    env: &EnvironmentLight,
    indirect: Option<&Rgb>,
    model: ShadingModel,
    g: &Rgb,
) -> ShadingGrad {
    let mut out = ShadingGrad {
        albedo: g.component_mul(&diffuse_irradiance(s, env, indirect)) * INV_PI,
        ..ShadingGrad::default()
    };
    let direct_weight = if indirect.is_some() { 1.0 - s.ao } else { 1.0 };
    let g_irr = g.component_mul(&s.albedo) * (INV_PI * direct_weight);
    out.normal += env.irradiance.lookup_vjp(&s.normal, &g_irr);
    if let Some(ind) = indirect {
        let ga = g.component_mul(&s.albedo) * INV_PI;
        out.ao = ga.dot(&(ind - env.diffuse(&s.normal)));
        out.indirect = ga * s.ao;
    }

    if model.specular {
        let nv_raw = s.normal.dot(&s.view);
        let nv = nv_raw.max(MIN_NDOTV);
        let [a, b] = env.brdf_lut.lookup(nv, s.roughness);
        let r = reflect(&s.view, &s.normal);
        let spec = env.specular(&r, s.roughness);
        let gs = g.component_mul(&spec);
        out.specular = gs * a;
        let g_a = gs.dot(&s.specular);
        let g_b = gs.sum();
        let (d_nv, d_r_lut) = env.brdf_lut.lookup_vjp(nv, s.roughness, [g_a, g_b]);
        let g_spec = g.component_mul(&(s.specular * a + Rgb::repeat(b)));
        let (d_refl, d_r_env) = env.specular_vjp(&r, s.roughness, &g_spec);
        out.roughness = d_r_lut + d_r_env;
        // r = 2 (n.v) n - v
        let rn = d_refl.dot(&s.normal);
        out.normal += (s.view * rn + d_refl * nv_raw) * 2.0;
        out.view += s.normal * (2.0 * rn) - d_refl;
        if nv_raw > MIN_NDOTV {
            out.normal += s.view * d_nv;
            out.view += s.normal * d_nv;
        }
    }
    out
}

/// Adds the gradient of `g . shade_sample(..)` with respect to the
/// irradiance table and specular mips into `d_irr` and `d_mips`.
pub fn shade_sample_env_adjoint(
    s: &ShadingSample,
    env: &EnvironmentLight,
    indirect: Option<&Rgb>,
    model: ShadingModel,
    g: &Rgb,
    d_irr: &mut [Rgb],
    d_mips: &mut [Vec<Rgb>],
) {
    let direct_weight = if indirect.is_some() { 1.0 - s.ao } else { 1.0 };
    let g_irr = g.component_mul(&s.albedo) * (INV_PI * direct_weight);
    env.irradiance.lookup_adjoint(&s.normal, &g_irr, d_irr);
    if model.specular {
        let nv = s.normal.dot(&s.view).max(MIN_NDOTV);
        let [a, b] = env.brdf_lut.lookup(nv, s.roughness);
        let r = reflect(&s.view, &s.normal);
        let g_spec = g.component_mul(&(s.specular * a + Rgb::repeat(b)));
        let blend = env.mip_blend(s.roughness);
        env.specular_mips[blend.lo].lookup_adjoint(&r, &(g_spec * (1.0 - blend.t)), &mut d_mips[blend.lo]);
        env.specular_mips[blend.hi].lookup_adjoint(&r, &(g_spec * blend.t), &mut d_mips[blend.hi]);
    }
}
