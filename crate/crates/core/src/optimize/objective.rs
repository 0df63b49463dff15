//! Stage-aware training objective evaluated on a render record.

use serde::{Deserialize, Serialize};

use crate::diff::OutputAdjoint;
use crate::error::{Error, Result};
use crate::img::Image;
use crate::math::{normalize_vjp, Vec3};
use crate::optimize::loss::{loss_alpha, loss_normal, loss_photometric};
use crate::raster::gbuffer::{channel, reliable_depth_vjp};
use crate::render::{camera_normals, RenderRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    /// Decomposition with geometric regularizers.
    One,
    /// Refinement with photometric terms only.
    Two,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// D-SSIM weight in the photometric loss.
    pub lambda: f64,
    pub lambda_normal: f64,
    pub lambda_alpha: f64,
    pub stage: Stage,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.2,
            lambda_normal: 0.1,
            lambda_alpha: 0.001,
            stage: Stage::One,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidParameter("lambda must lie in [0, 1]".into()));
        }
        if !(self.lambda_normal >= 0.0 && self.lambda_alpha >= 0.0) {
            return Err(Error::InvalidParameter("regularizer weights must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub forward: f64,
    pub deferred: f64,
    pub normal: f64,
    pub alpha: f64,
    pub total: f64,
    /// Pixels that entered the normal term; zero flags an empty mean.
    pub normal_pixels: usize,
}

/// `L_f + L_d + lambda_n L_n + lambda_a L_a` in stage one, `L_f + L_d` in stage two.
pub fn total_loss(forward: f64, deferred: f64, normal: f64, alpha: f64, cfg: &LossConfig) -> f64 {
    match cfg.stage {
        Stage::One => forward + deferred + cfg.lambda_normal * normal + cfg.lambda_alpha * alpha,
        Stage::Two => forward + deferred,
    }
}

/// Evaluates the objective on `record` against `reference` and returns the
/// loss terms together with the adjoint to feed into the backward pass.
pub fn evaluate(record: &RenderRecord, reference: &Image, cfg: &LossConfig) -> Result<(LossBreakdown, OutputAdjoint)> {
    cfg.validate()?;
    let mut out = LossBreakdown::default();
    let mut adj = OutputAdjoint::default();

    let d = loss_photometric(&record.deferred, reference, cfg.lambda)?;
    out.deferred = d.value;
    adj.deferred = Some(d.grad.pixels);
    if let Some(f) = &record.forward {
        let f = loss_photometric(f, reference, cfg.lambda)?;
        out.forward = f.value;
        adj.forward = Some(f.grad.pixels);
    }

    let g = &record.gbuffer;
    let alpha = &g.raster.alpha;
    let n = alpha.len();
    let cam = &record.camera;
    let la = loss_alpha(alpha);
    out.alpha = la.value;
    let normals = camera_normals(g, cam);
    let depth = g.depth_map();
    let ln = loss_normal(&normals, &depth, alpha, cam);
    out.normal = ln.value;
    out.normal_pixels = ln.grad.count;

    if cfg.stage == Stage::One {
        let mut d_alpha: Vec<f64> = la.grad.iter().map(|v| v * cfg.lambda_alpha).collect();
        let mut d_accum = vec![0.0; n * channel::COUNT];
        for i in 0..n {
            let base = i * channel::COUNT;
            let gn = ln.grad.normals[i] * cfg.lambda_normal;
            if gn != Vec3::zeros() {
                let raw = g.normal_sum(i);
                let gw = normalize_vjp(&raw, &(cam.rotation.transpose() * gn));
                for k in 0..3 {
                    d_accum[base + channel::NORMAL + k] += gw[k];
                }
            }
            let gd = ln.grad.depth[i] * cfg.lambda_normal;
            if gd != 0.0 {
                let (dz, da) = reliable_depth_vjp(g.raster.pixel(i)[channel::DEPTH], alpha[i], gd);
                d_accum[base + channel::DEPTH] += dz;
                d_alpha[i] += da;
            }
        }
        adj.accum = Some(d_accum);
        adj.alpha = Some(d_alpha);
    }
    out.total = total_loss(out.forward, out.deferred, out.normal, out.alpha, cfg);
    Ok((out, adj))
}
