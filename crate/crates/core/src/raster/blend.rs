//! Tile-based front-to-back alpha blending of projected splats and its adjoint.

use crate::error::{Error, Result};
use crate::math::Vec2;
use crate::par;
use crate::scene::Splat2D;

pub const TILE_SIZE: usize = 16;
pub const MAX_ALPHA: f64 = 0.99;
/// Blending stops once transmittance falls below this value.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
/// Squared Mahalanobis radius beyond which a splat contributes nothing.
pub const CUTOFF_MAHALANOBIS_SQ: f64 = 9.0;
/// Opacity level at which the median depth is read.
pub const MEDIAN_OPACITY: f64 = 0.5;

/// Opacity of splat `s` at pixel position `(x, y)`; `None` outside its support.
///
/// Returns `(alpha, falloff, clamped)`, where `falloff` is the unnormalized
/// Gaussian value and `clamped` marks `alpha` saturated at [`MAX_ALPHA`].
#[inline]
pub fn splat_alpha(s: &Splat2D, x: f64, y: f64) -> Option<(f64, f64, bool)> {
    let dx = x - s.mean.x;
    let dy = y - s.mean.y;
    let q = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
    if !(q <= CUTOFF_MAHALANOBIS_SQ) {
        return None;
    }
    let g = (-0.5 * q).exp();
    let raw = g * s.opacity;
    if raw <= 0.0 {
        return None;
    }
    if raw > MAX_ALPHA {
        Some((MAX_ALPHA, g, true))
    } else {
        Some((raw, g, false))
    }
}

/// Per-tile lists of splat indices sorted front to back.
#[derive(Clone, Debug, PartialEq)]
pub struct TileWorkList {
    pub tile_size: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub width: usize,
    pub height: usize,
    pub lists: Vec<Vec<u32>>,
}

impl TileWorkList {
    pub fn build(splats: &[Splat2D], width: usize, height: usize) -> Self {
        let tiles_x = width.div_ceil(TILE_SIZE);
        let tiles_y = height.div_ceil(TILE_SIZE);
        let mut lists = vec![Vec::new(); tiles_x * tiles_y];
        for (i, s) in splats.iter().enumerate() {
            let Some((x0, x1)) = pixel_span(s.mean.x, s.extent.x, width) else {
                continue;
            };
            let Some((y0, y1)) = pixel_span(s.mean.y, s.extent.y, height) else {
                continue;
            };
            for ty in y0 / TILE_SIZE..=y1 / TILE_SIZE {
                for tx in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                    lists[ty * tiles_x + tx].push(i as u32);
                }
            }
        }
        for list in &mut lists {
            list.sort_by(|&a, &b| {
                let (sa, sb) = (&splats[a as usize], &splats[b as usize]);
                sa.depth
                    .total_cmp(&sb.depth)
                    .then(sa.particle_index.cmp(&sb.particle_index))
                    .then(a.cmp(&b))
            });
        }
        TileWorkList {
            tile_size: TILE_SIZE,
            tiles_x,
            tiles_y,
            width,
            height,
            lists,
        }
    }

    pub fn tile_count(&self) -> usize {
        self.lists.len()
    }

    /// Pixel rectangle `[x0, x1) x [y0, y1)` of tile `t`.
    pub fn tile_rect(&self, t: usize) -> (usize, usize, usize, usize) {
        let tx = t % self.tiles_x;
        let ty = t / self.tiles_x;
        let x0 = tx * self.tile_size;
        let y0 = ty * self.tile_size;
        (
            x0,
            (x0 + self.tile_size).min(self.width),
            y0,
            (y0 + self.tile_size).min(self.height),
        )
    }
}

/// Inclusive range of pixel indices whose centers lie within `center ± extent`.
fn pixel_span(center: f64, extent: f64, len: usize) -> Option<(usize, usize)> {
    let pad = 1e-9 * (1.0 + extent);
    let lo = (center - extent - 0.5 - pad).ceil();
    let hi = (center + extent - 0.5 + pad).floor();
    let lo = lo.max(0.0);
    let hi = hi.min(len as f64 - 1.0);
    if !(lo <= hi) {
        return None;
    }
    Some((lo as usize, hi as usize))
}

/// Result of blending a payload through the splats.
#[derive(Clone, Debug)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// `sum_k w_k payload_k`, pixel-major with `channels` values per pixel.
    pub accum: Vec<f64>,
    /// `sum_k w_k`.
    pub alpha: Vec<f64>,
    /// Transmittance left after the last contributing splat.
    pub transmittance: Vec<f64>,
    /// Depth of the splat at which accumulated opacity first reaches one half,
    /// `+inf` if it never does.
    pub median_depth: Vec<f64>,
    pub tiles: TileWorkList,
}

impl RasterImage {
    #[inline]
    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.accum[i * self.channels..(i + 1) * self.channels]
    }
}

struct TileOutput {
    accum: Vec<f64>,
    alpha: Vec<f64>,
    transmittance: Vec<f64>,
    median: Vec<f64>,
}

/// Blends `payload` (`channels` values per splat, in the same order as
/// `splats`) over a `width x height` image.
pub fn rasterize(
    splats: &[Splat2D],
    payload: &[f64],
    channels: usize,
    width: usize,
    height: usize,
) -> Result<RasterImage> {
    if payload.len() != splats.len() * channels {
        return Err(Error::Contract(format!(
            "payload has {} values for {} splats x {} channels",
            payload.len(),
            splats.len(),
            channels
        )));
    }
    if splats
        .iter()
        .any(|s| !(s.mean.iter().all(|v| v.is_finite()) && s.conic.iter().all(|v| v.is_finite())))
    {
        return Err(Error::NonFinite("splat geometry".into()));
    }
    let tiles = TileWorkList::build(splats, width, height);
    let outputs = par::map_range(tiles.tile_count(), |t| {
        blend_tile(splats, payload, channels, &tiles, t)
    });

    let n = width * height;
    let mut accum = vec![0.0; n * channels];
    let mut alpha = vec![0.0; n];
    let mut transmittance = vec![1.0; n];
    let mut median = vec![f64::INFINITY; n];
    for (t, out) in outputs.into_iter().enumerate() {
        let (x0, x1, y0, y1) = tiles.tile_rect(t);
        let tw = x1 - x0;
        for y in y0..y1 {
            for x in x0..x1 {
                let local = (y - y0) * tw + (x - x0);
                let pix = y * width + x;
                accum[pix * channels..(pix + 1) * channels]
                    .copy_from_slice(&out.accum[local * channels..(local + 1) * channels]);
                alpha[pix] = out.alpha[local];
                transmittance[pix] = out.transmittance[local];
                median[pix] = out.median[local];
            }
        }
    }
    Ok(RasterImage {
        width,
        height,
        channels,
        accum,
        alpha,
        transmittance,
        median_depth: median,
        tiles,
    })
}

fn blend_tile(
    splats: &[Splat2D],
    payload: &[f64],
    channels: usize,
    tiles: &TileWorkList,
    t: usize,
) -> TileOutput {
    let (x0, x1, y0, y1) = tiles.tile_rect(t);
    let count = (x1 - x0) * (y1 - y0);
    let mut out = TileOutput {
        accum: vec![0.0; count * channels],
        alpha: vec![0.0; count],
        transmittance: vec![1.0; count],
        median: vec![f64::INFINITY; count],
    };
    let list = &tiles.lists[t];
    let mut local = 0;
    for y in y0..y1 {
        for x in x0..x1 {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let acc = &mut out.accum[local * channels..(local + 1) * channels];
            let mut trans = 1.0;
            let mut a_sum = 0.0;
            let mut median = f64::INFINITY;
            for &idx in list {
                if trans < MIN_TRANSMITTANCE {
                    break;
                }
                let s = &splats[idx as usize];
                let Some((a, _, _)) = splat_alpha(s, px, py) else {
                    continue;
                };
                let w = trans * a;
                let p = &payload[idx as usize * channels..(idx as usize + 1) * channels];
                for c in 0..channels {
                    acc[c] += w * p[c];
                }
                a_sum += w;
                trans *= 1.0 - a;
                if median.is_infinite() && 1.0 - trans >= MEDIAN_OPACITY {
                    median = s.depth;
                }
            }
            out.alpha[local] = a_sum;
            out.transmittance[local] = trans;
            out.median[local] = median;
            local += 1;
        }
    }
    out
}

/// Per-pixel digest of which splats contributed, which were clamped and
/// where blending stopped. Two blends with equal digests differ only through
/// smooth quantities.
pub fn blend_structure(splats: &[Splat2D], raster: &RasterImage) -> Vec<u64> {
    use std::hash::{DefaultHasher, Hash, Hasher};
    let tiles = &raster.tiles;
    let per_tile = par::map_range(tiles.tile_count(), |t| {
        let (x0, x1, y0, y1) = tiles.tile_rect(t);
        let mut out = Vec::with_capacity((x1 - x0) * (y1 - y0));
        for y in y0..y1 {
            for x in x0..x1 {
                let mut h = DefaultHasher::new();
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut trans = 1.0;
                let mut median_seen = false;
                for &idx in &tiles.lists[t] {
                    if trans < MIN_TRANSMITTANCE {
                        h.write_u8(0xff);
                        break;
                    }
                    let s = &splats[idx as usize];
                    if let Some((a, _, clamped)) = splat_alpha(s, px, py) {
                        s.particle_index.hash(&mut h);
                        clamped.hash(&mut h);
                        trans *= 1.0 - a;
                        if !median_seen && 1.0 - trans >= MEDIAN_OPACITY {
                            median_seen = true;
                            h.write_u8(0xfe);
                        }
                    }
                }
                out.push(h.finish());
            }
        }
        out
    });
    let mut digest = vec![0; raster.width * raster.height];
    for (t, out) in per_tile.into_iter().enumerate() {
        let (x0, x1, y0, y1) = tiles.tile_rect(t);
        let mut k = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                digest[y * raster.width + x] = out[k];
                k += 1;
            }
        }
    }
    digest
}

/// Gradients of a blend with respect to every splat's inputs.
#[derive(Clone, Debug)]
pub struct RasterGrad {
    pub mean: Vec<Vec2>,
    pub conic: Vec<[f64; 3]>,
    pub opacity: Vec<f64>,
    /// Same layout as the forward payload.
    pub payload: Vec<f64>,
}

struct TileGrad {
    mean: Vec<Vec2>,
    conic: Vec<[f64; 3]>,
    opacity: Vec<f64>,
    payload: Vec<f64>,
}

struct Contribution {
    pos: usize,
    alpha: f64,
    falloff: f64,
    clamped: bool,
    trans: f64,
    dx: f64,
    dy: f64,
}

/// Adjoint of [`rasterize`]: `d_accum` and `d_alpha` are the loss gradients on
/// the forward outputs `accum` and `alpha`.
///
/// Each tile accumulates into its own buffers and tiles are reduced in index
/// order, so the result does not depend on the number of worker threads.
pub fn rasterize_backward(
    splats: &[Splat2D],
    payload: &[f64],
    raster: &RasterImage,
    d_accum: &[f64],
    d_alpha: &[f64],
) -> Result<RasterGrad> {
    let channels = raster.channels;
    let n = raster.width * raster.height;
    if d_accum.len() != n * channels || d_alpha.len() != n || payload.len() != splats.len() * channels
    {
        return Err(Error::Contract("backward buffers do not match the forward raster".into()));
    }
    let tiles = &raster.tiles;
    let per_tile = par::map_range(tiles.tile_count(), |t| {
        backward_tile(splats, payload, channels, tiles, raster.width, d_accum, d_alpha, t)
    });

    let mut grad = RasterGrad {
        mean: vec![Vec2::zeros(); splats.len()],
        conic: vec![[0.0; 3]; splats.len()],
        opacity: vec![0.0; splats.len()],
        payload: vec![0.0; splats.len() * channels],
    };
    for (t, tg) in per_tile.into_iter().enumerate() {
        for (pos, &idx) in tiles.lists[t].iter().enumerate() {
            let i = idx as usize;
            grad.mean[i] += tg.mean[pos];
            for k in 0..3 {
                grad.conic[i][k] += tg.conic[pos][k];
            }
            grad.opacity[i] += tg.opacity[pos];
            for c in 0..channels {
                grad.payload[i * channels + c] += tg.payload[pos * channels + c];
            }
        }
    }
    Ok(grad)
}

#[allow(clippy::too_many_arguments)]
fn backward_tile(
    splats: &[Splat2D],
    payload: &[f64],
    channels: usize,
    tiles: &TileWorkList,
    width: usize,
    d_accum: &[f64],
    d_alpha: &[f64],
    t: usize,
) -> TileGrad {
    let list = &tiles.lists[t];
    let m = list.len();
    let mut g = TileGrad {
        mean: vec![Vec2::zeros(); m],
        conic: vec![[0.0; 3]; m],
        opacity: vec![0.0; m],
        payload: vec![0.0; m * channels],
    };
    if m == 0 {
        return g;
    }
    let (x0, x1, y0, y1) = tiles.tile_rect(t);
    let mut contrib: Vec<Contribution> = Vec::with_capacity(m);
    let mut suffix = vec![0.0; channels];
    for y in y0..y1 {
        for x in x0..x1 {
            let pix = y * width + x;
            let g_acc = &d_accum[pix * channels..(pix + 1) * channels];
            let g_a = d_alpha[pix];
            if g_a == 0.0 && g_acc.iter().all(|v| *v == 0.0) {
                continue;
            }
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            contrib.clear();
            let mut trans = 1.0;
            for (pos, &idx) in list.iter().enumerate() {
                if trans < MIN_TRANSMITTANCE {
                    break;
                }
                let s = &splats[idx as usize];
                let Some((a, falloff, clamped)) = splat_alpha(s, px, py) else {
                    continue;
                };
                contrib.push(Contribution {
                    pos,
                    alpha: a,
                    falloff,
                    clamped,
                    trans,
                    dx: px - s.mean.x,
                    dy: py - s.mean.y,
                });
                trans *= 1.0 - a;
            }
            suffix.iter_mut().for_each(|v| *v = 0.0);
            let mut suffix_alpha = 0.0;
            for k in contrib.iter().rev() {
                let idx = list[k.pos] as usize;
                let p = &payload[idx * channels..(idx + 1) * channels];
                let w = k.trans * k.alpha;
                let inv = 1.0 / (1.0 - k.alpha);
                let mut d_a = g_a * (k.trans - suffix_alpha * inv);
                for c in 0..channels {
                    d_a += g_acc[c] * (k.trans * p[c] - suffix[c] * inv);
                    g.payload[k.pos * channels + c] += w * g_acc[c];
                    suffix[c] += w * p[c];
                }
                suffix_alpha += w;
                if k.clamped {
                    continue;
                }
                let s = &splats[idx];
                g.opacity[k.pos] += d_a * k.falloff;
                // alpha = o exp(-q/2), q = a dx^2 + 2 b dx dy + c dy^2.
                let d_q = -0.5 * k.alpha * d_a;
                g.conic[k.pos][0] += d_q * k.dx * k.dx;
                g.conic[k.pos][1] += d_q * 2.0 * k.dx * k.dy;
                g.conic[k.pos][2] += d_q * k.dy * k.dy;
                let cdx = s.conic[0] * k.dx + s.conic[1] * k.dy;
                let cdy = s.conic[1] * k.dx + s.conic[2] * k.dy;
                g.mean[k.pos] += Vec2::new(cdx, cdy) * (-2.0 * d_q);
            }
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centered_splat(x: f64, y: f64, opacity: f64, depth: f64, index: usize) -> Splat2D {
        let var = 4.0;
        Splat2D {
            mean: Vec2::new(x, y),
            cov: [var, 0.0, var],
            conic: [1.0 / var, 0.0, 1.0 / var],
            depth,
            opacity,
            extent: Vec2::repeat(3.0 * var.sqrt()),
            particle_index: index,
        }
    }

    #[test]
    fn single_centered_splat() {
        let s = centered_splat(3.5, 2.5, 0.8, 1.0, 0);
        let r = rasterize(&[s], &[1.0], 1, 8, 8).unwrap();
        let pix = 2 * 8 + 3;
        assert!((r.accum[pix] - 0.8).abs() < 1e-15);
        assert!((r.alpha[pix] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn two_coincident_splats() {
        let a = centered_splat(3.5, 2.5, 0.5, 1.0, 0);
        let b = centered_splat(3.5, 2.5, 0.5, 2.0, 1);
        let r = rasterize(&[a, b], &[1.0, 1.0], 1, 8, 8).unwrap();
        assert!((r.alpha[2 * 8 + 3] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn payload_length_mismatch_is_contract_error() {
        let s = centered_splat(3.5, 2.5, 0.8, 1.0, 0);
        assert!(matches!(
            rasterize(&[s], &[1.0, 2.0], 1, 8, 8),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn tile_lists_are_depth_sorted_and_cover_large_images() {
        let splats: Vec<Splat2D> = (0..10)
            .map(|i| centered_splat(5.0 + 3.0 * i as f64, 20.0, 0.5, 10.0 - i as f64, i))
            .collect();
        let t = TileWorkList::build(&splats, 40, 40);
        assert_eq!(t.tile_count(), 9);
        for list in &t.lists {
            for w in list.windows(2) {
                assert!(splats[w[0] as usize].depth <= splats[w[1] as usize].depth);
            }
        }
    }

    #[test]
    fn median_depth_marks_half_opacity() {
        let a = centered_splat(3.5, 2.5, 0.3, 1.0, 0);
        let b = centered_splat(3.5, 2.5, 0.3, 2.0, 1);
        let c = centered_splat(3.5, 2.5, 0.3, 3.0, 2);
        let r = rasterize(&[a, b, c], &[], 0, 8, 8).unwrap();
        // 0.3, 0.51 after two splats.
        assert_eq!(r.median_depth[2 * 8 + 3], 2.0);
        assert!(r.median_depth[0].is_infinite() || r.median_depth[0] > 0.0);
    }

    fn random_splats(n: usize, seed: u64) -> Vec<Splat2D> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let sx: f64 = rng.random_range(0.8..3.0);
                let sy: f64 = rng.random_range(0.8..3.0);
                let rho: f64 = rng.random_range(-0.5..0.5);
                let cov = [sx * sx, rho * sx * sy, sy * sy];
                let det = cov[0] * cov[2] - cov[1] * cov[1];
                Splat2D {
                    mean: Vec2::new(rng.random_range(0.0..8.0), rng.random_range(0.0..8.0)),
                    cov,
                    conic: [cov[2] / det, -cov[1] / det, cov[0] / det],
                    depth: rng.random_range(1.0..5.0),
                    opacity: rng.random_range(0.05..0.7),
                    extent: Vec2::new(3.0 * sx, 3.0 * sy),
                    particle_index: i,
                }
            })
            .collect()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let splats = random_splats(6, 7);
        let ch = 2;
        let payload: Vec<f64> = (0..splats.len() * ch).map(|i| 0.1 + 0.13 * i as f64).collect();
        let g_acc: Vec<f64> = (0..64 * ch).map(|i| ((i * 37 % 17) as f64 - 8.0) / 8.0).collect();
        let g_a: Vec<f64> = (0..64).map(|i| ((i * 11 % 7) as f64 - 3.0) / 3.0).collect();
        let loss = |s: &[Splat2D], p: &[f64]| -> f64 {
            let r = rasterize(s, p, ch, 8, 8).unwrap();
            r.accum.iter().zip(&g_acc).map(|(a, b)| a * b).sum::<f64>()
                + r.alpha.iter().zip(&g_a).map(|(a, b)| a * b).sum::<f64>()
        };
        let r = rasterize(&splats, &payload, ch, 8, 8).unwrap();
        let grad = rasterize_backward(&splats, &payload, &r, &g_acc, &g_a).unwrap();
        let h = 1e-6;
        let check = |a: f64, fd: f64| assert!((a - fd).abs() < 1e-6 * (1.0 + fd.abs()), "{a} vs {fd}");
        for k in 0..splats.len() {
            for d in 0..2 {
                let mut sp = splats.clone();
                let mut sm = splats.clone();
                sp[k].mean[d] += h;
                sm[k].mean[d] -= h;
                check(grad.mean[k][d], (loss(&sp, &payload) - loss(&sm, &payload)) / (2.0 * h));
            }
            for d in 0..3 {
                let mut sp = splats.clone();
                let mut sm = splats.clone();
                sp[k].conic[d] += h;
                sm[k].conic[d] -= h;
                check(grad.conic[k][d], (loss(&sp, &payload) - loss(&sm, &payload)) / (2.0 * h));
            }
            let mut sp = splats.clone();
            let mut sm = splats.clone();
            sp[k].opacity += h;
            sm[k].opacity -= h;
            check(grad.opacity[k], (loss(&sp, &payload) - loss(&sm, &payload)) / (2.0 * h));
            for c in 0..ch {
                let mut pp = payload.clone();
                let mut pm = payload.clone();
                pp[k * ch + c] += h;
                pm[k * ch + c] -= h;
                check(grad.payload[k * ch + c], (loss(&splats, &pp) - loss(&splats, &pm)) / (2.0 * h));
            }
        }
    }
}
