//! Image and normal-map quality metrics.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::img::Image;
use crate::math::Vec3;

/// `10 log10(1 / MSE)` over all channels of two images already in `[0, 1]`;
/// infinite for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.same_shape(b)?;
    let n = (a.len() * 3) as f64;
    let mse = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(x, y)| (x - y).norm_squared())
        .sum::<f64>()
        / n;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// Mean angle in degrees between paired normals, over pixels where `mask`
/// holds and both normals are nonzero. `None` when no pixel qualifies.
pub fn normal_mae_degrees(est: &[Vec3], reference: &[Vec3], mask: Option<&[bool]>) -> Result<Option<f64>> {
    if est.len() != reference.len() || mask.is_some_and(|m| m.len() != est.len()) {
        return Err(Error::Dimension(format!("{} vs {} normals", est.len(), reference.len())));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..est.len() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        if est[i].norm() == 0.0 || reference[i].norm() == 0.0 {
            continue;
        }
        sum += est[i].cross(&reference[i]).norm().atan2(est[i].dot(&reference[i])).to_degrees();
        count += 1;
    }
    Ok((count > 0).then(|| sum / count as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub psnr: f64,
    pub ssim: f64,
    pub normal_mae_deg: Option<f64>,
}

/// PSNR and SSIM on display-encoded (clamped, gamma 2.2) versions of the
/// linear inputs, plus the normal error when both maps are given.
pub fn metrics(
    rendered: &Image,
    reference: &Image,
    normals: Option<(&[Vec3], &[Vec3], Option<&[bool]>)>,
) -> Result<Metrics> {
    let (a, b) = (rendered.to_display(), reference.to_display());
    Ok(Metrics {
        psnr: psnr(&a, &b)?,
        ssim: crate::optimize::ssim(&a, &b)?,
        normal_mae_deg: match normals {
            Some((e, r, m)) => normal_mae_degrees(e, r, m)?,
            None => None,
        },
    })
}
