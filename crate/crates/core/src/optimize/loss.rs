//! Photometric, normal-consistency and alpha regularization losses.

use crate::error::Result;
use crate::img::Image;
use crate::math::{Rgb, Vec3};
use crate::optimize::ssim::ssim_with_grad;
use crate::raster::{depth_to_pseudo_normal, depth_to_pseudo_normal_vjp};
use crate::scene::Camera;

pub const ALPHA_EPS: f64 = 1e-4;
/// Pixels with alpha above this take part in the normal loss.
pub const NORMAL_ALPHA: f64 = 0.5;

/// A loss value with its gradient on the first argument.
#[derive(Clone, Debug)]
pub struct Graded<T> {
    pub value: f64,
    pub grad: T,
}

pub fn l1(x: &Image, y: &Image) -> Result<Graded<Image>> {
    x.same_shape(y)?;
    let n = (3 * x.len()) as f64;
    let mut value = 0.0;
    let grad = Image::from_pixels(
        x.width,
        x.height,
        x.pixels
            .iter()
            .zip(&y.pixels)
            .map(|(a, b)| {
                let d = a - b;
                value += d.abs().sum();
                d.map(|v| if v > 0.0 { 1.0 / n } else if v < 0.0 { -1.0 / n } else { 0.0 })
            })
            .collect(),
    )?;
    Ok(Graded {
        value: value / n,
        grad,
    })
}

/// `(1 - lambda) L1 + lambda (1 - SSIM) / 2`.
pub fn loss_photometric(rendered: &Image, reference: &Image, lambda: f64) -> Result<Graded<Image>> {
    let l = l1(rendered, reference)?;
    let mut value = (1.0 - lambda) * l.value;
    let mut grad = l.grad.scaled(1.0 - lambda);
    if lambda > 0.0 {
        let (s, g) = ssim_with_grad(rendered, reference, true)?;
        value += lambda * 0.5 * (1.0 - s);
        let g = g.expect("requested");
        for (a, b) in grad.pixels.iter_mut().zip(&g.pixels) {
            *a -= b * (0.5 * lambda);
        }
    }
    Ok(Graded { value, grad })
}

/// Mean of `log(a) + log(1 - a)` over pixels, `a` clamped to `[eps, 1 - eps]`.
pub fn loss_alpha(alpha: &[f64]) -> Graded<Vec<f64>> {
    let n = alpha.len().max(1) as f64;
    let mut value = 0.0;
    let grad = alpha
        .iter()
        .map(|&a| {
            let t = a.clamp(ALPHA_EPS, 1.0 - ALPHA_EPS);
            value += t.ln() + (1.0 - t).ln();
            if a > ALPHA_EPS && a < 1.0 - ALPHA_EPS {
                (1.0 / t - 1.0 / (1.0 - t)) / n
            } else {
                0.0
            }
        })
        .collect();
    Graded {
        value: value / n,
        grad,
    }
}

/// Gradients of the normal loss on its two inputs.
#[derive(Clone, Debug)]
pub struct NormalLossGrad {
    pub normals: Vec<Vec3>,
    pub depth: Vec<f64>,
    /// Number of pixels that entered the mean.
    pub count: usize,
}

/// Mean over covered pixels of `1 - n(u) . n_depth(u)`, where `normals` are
/// camera-space unit normals and `n_depth` the pseudo-normals of `depth`.
/// Gradients flow into both inputs.
pub fn loss_normal(normals: &[Vec3], depth: &[f64], alpha: &[f64], cam: &Camera) -> Graded<NormalLossGrad> {
    let mask: Vec<bool> = alpha.iter().map(|&a| a > NORMAL_ALPHA).collect();
    let pseudo = depth_to_pseudo_normal(depth, &mask, cam);
    let valid: Vec<bool> = (0..normals.len())
        .map(|i| mask[i] && pseudo[i] != Vec3::zeros() && normals[i] != Vec3::zeros())
        .collect();
    let count = valid.iter().filter(|v| **v).count();
    let mut grad = NormalLossGrad {
        normals: vec![Vec3::zeros(); normals.len()],
        depth: vec![0.0; depth.len()],
        count,
    };
    if count == 0 {
        return Graded { value: 0.0, grad };
    }
    let inv = 1.0 / count as f64;
    let mut value = 0.0;
    let mut g_pseudo = vec![Vec3::zeros(); normals.len()];
    for i in 0..normals.len() {
        if valid[i] {
            value += 1.0 - normals[i].dot(&pseudo[i]);
            grad.normals[i] = -pseudo[i] * inv;
            g_pseudo[i] = -normals[i] * inv;
        }
    }
    depth_to_pseudo_normal_vjp(depth, &mask, cam, &g_pseudo, &mut grad.depth);
    Graded {
        value: value * inv,
        grad,
    }
}

/// Image of per-pixel RGB gradients, all zero.
pub fn zero_grad(w: usize, h: usize) -> Image {
    Image::filled(w, h, Rgb::zeros())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_closed_forms() {
        let half = loss_alpha(&[0.5; 4]);
        assert!((half.value - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        let lo = loss_alpha(&[ALPHA_EPS; 3]);
        assert!((lo.value - (ALPHA_EPS.ln() + (1.0 - ALPHA_EPS).ln())).abs() < 1e-12);
        assert!((lo.value + 9.2104).abs() < 1e-3);
    }

    #[test]
    fn alpha_gradient_sign() {
        assert!(loss_alpha(&[0.4]).grad[0] > 0.0);
        assert!(loss_alpha(&[0.6]).grad[0] < 0.0);
    }

    #[test]
    fn photometric_pure_l1_offset() {
        let a = Image::filled(4, 4, Rgb::new(0.2, 0.3, 0.4));
        let b = Image::filled(4, 4, Rgb::new(0.25, 0.25, 0.45));
        assert!((loss_photometric(&a, &b, 0.0).unwrap().value - 0.05).abs() < 1e-12);
        assert_eq!(loss_photometric(&a, &a, 0.2).unwrap().value, 0.0);
    }
}
