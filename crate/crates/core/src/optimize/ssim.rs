//! Structural similarity with an 11x11 Gaussian window (sigma 1.5),
//! zero-padded same-size filtering, and its gradient.

use crate::error::Result;
use crate::img::Image;
use crate::par;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

pub fn gaussian_kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable zero-padded filtering; self-adjoint because the kernel is symmetric.
pub fn blur(plane: &[f64], w: usize, h: usize) -> Vec<f64> {
    let k = gaussian_kernel();
    let r = (WINDOW / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let xx = x as isize + t as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    acc += kv * plane[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let yy = y as isize + t as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    acc += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

struct ChannelStats {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    var_x: Vec<f64>,
    var_y: Vec<f64>,
    cov: Vec<f64>,
}

fn stats(x: &[f64], y: &[f64], w: usize, h: usize) -> ChannelStats {
    let mu_x = blur(x, w, h);
    let mu_y = blur(y, w, h);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let (bxx, byy, bxy) = (blur(&xx, w, h), blur(&yy, w, h), blur(&xy, w, h));
    let n = w * h;
    ChannelStats {
        var_x: (0..n).map(|i| bxx[i] - mu_x[i] * mu_x[i]).collect(),
        var_y: (0..n).map(|i| byy[i] - mu_y[i] * mu_y[i]).collect(),
        cov: (0..n).map(|i| bxy[i] - mu_x[i] * mu_y[i]).collect(),
        mu_x,
        mu_y,
    }
}

/// Mean SSIM over pixels and channels.
pub fn ssim(x: &Image, y: &Image) -> Result<f64> {
    Ok(ssim_with_grad(x, y, false)?.0)
}

/// Mean SSIM and, if requested, its gradient with respect to `x`.
pub fn ssim_with_grad(x: &Image, y: &Image, want_grad: bool) -> Result<(f64, Option<Image>)> {
    x.same_shape(y)?;
    let (w, h) = (x.width, x.height);
    let n = w * h;
    let per_channel = par::map_range(3, |c| {
        let xc = x.channel(c);
        let yc = y.channel(c);
        let s = stats(&xc, &yc, w, h);
        let mut sum = 0.0;
        let mut g1 = vec![0.0; n];
        let mut g2 = vec![0.0; n];
        let mut g3 = vec![0.0; n];
        let scale = 1.0 / (3 * n) as f64;
        for i in 0..n {
            let (mx, my) = (s.mu_x[i], s.mu_y[i]);
            let a = 2.0 * mx * my + C1;
            let b = 2.0 * s.cov[i] + C2;
            let cc = mx * mx + my * my + C1;
            let d = s.var_x[i] + s.var_y[i] + C2;
            let v = a * b / (cc * d);
            sum += v;
            if want_grad {
                let da = b / (cc * d);
                let db = a / (cc * d);
                let dc = -v / cc;
                let dd = -v / d;
                g1[i] = scale * (da * 2.0 * my + dc * 2.0 * mx - dd * 2.0 * mx - db * 2.0 * my);
                g2[i] = scale * dd;
                g3[i] = scale * db * 2.0;
            }
        }
        let grad = want_grad.then(|| {
            let (b1, b2, b3) = (blur(&g1, w, h), blur(&g2, w, h), blur(&g3, w, h));
            (0..n)
                .map(|i| b1[i] + 2.0 * xc[i] * b2[i] + yc[i] * b3[i])
                .collect::<Vec<f64>>()
        });
        (sum, grad)
    });
    let total: f64 = per_channel.iter().map(|(s, _)| s).sum::<f64>() / (3 * n) as f64;
    let grad = want_grad.then(|| {
        let mut img = Image::new(w, h);
        for (c, (_, g)) in per_channel.iter().enumerate() {
            let g = g.as_ref().expect("requested");
            for i in 0..n {
                img.pixels[i][c] = g[i];
            }
        }
        img
    });
    Ok((total, grad))
}
