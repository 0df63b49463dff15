//! Regular grids of bit-packed occlusion cubemaps with per-probe indirect
//! irradiance, and the spherical-harmonics occlusion baseline.

pub mod cubemap;
pub mod sh;
pub mod trace;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::{hammersley, tangent_frame, Rgb, Vec3};
use crate::par;
use crate::render::RenderOptions;
use crate::scene::{Aabb, Scene};
use crate::shading::EnvironmentLight;

pub use cubemap::{render_depth_cubemap, DepthCubemap};
pub use trace::RayScene;

pub const DEFAULT_FACE_RESOLUTION: usize = 16;
pub const DEFAULT_AO_SAMPLES: usize = 64;
pub const DEFAULT_THRESHOLD_SPACINGS: f64 = 1.5;
/// SH coefficients per color channel of the stored indirect irradiance.
pub const INDIRECT_SH_COEFFS: usize = 9;

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeGridConfig {
    pub resolution: [usize; 3],
    pub bounds: Aabb,
    pub face_resolution: usize,
    /// Occlusion distance; `None` means 1.5 lattice spacings.
    pub distance_threshold: Option<f64>,
    /// Bake indirect irradiance (needs an environment at bake time).
    pub bake_indirect: bool,
}

impl ProbeGridConfig {
    pub fn new(resolution: [usize; 3], bounds: Aabb) -> Self {
        ProbeGridConfig {
            resolution,
            bounds,
            face_resolution: DEFAULT_FACE_RESOLUTION,
            distance_threshold: None,
            bake_indirect: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution.iter().any(|&r| r < 2) {
            return Err(Error::InvalidParameter("probe grid needs at least 2 probes per axis".into()));
        }
        if self.face_resolution == 0 {
            return Err(Error::InvalidParameter("face resolution must be positive".into()));
        }
        let e = self.bounds.extent();
        if !(e.x > 0.0 && e.y > 0.0 && e.z > 0.0) {
            return Err(Error::InvalidParameter("probe bounds must have positive extent".into()));
        }
        Ok(())
    }

    /// Largest lattice spacing over the three axes.
    pub fn spacing(&self) -> f64 {
        let e = self.bounds.extent();
        (0..3)
            .map(|a| e[a] / (self.resolution[a] - 1) as f64)
            .fold(0.0, f64::max)
    }

    pub fn threshold(&self) -> f64 {
        self.distance_threshold
            .unwrap_or(DEFAULT_THRESHOLD_SPACINGS * self.spacing())
    }
}

/// Interpolated query result; `clamped` marks a point moved into the bounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Query<T> {
    pub value: T,
    pub clamped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeGrid {
    pub resolution: [usize; 3],
    pub bounds: Aabb,
    pub face_resolution: usize,
    pub distance_threshold: f64,
    /// One bit per cubemap texel per probe: probe-major, then face
    /// (`+x, -x, +y, -y, +z, -z`), then row, then column; least significant
    /// bit first within each byte. Set bits are occluded.
    pub bits: Vec<u8>,
    /// Per probe, `INDIRECT_SH_COEFFS` RGB coefficients of the irradiance.
    pub indirect: Vec<Rgb>,
}

impl ProbeGrid {
    pub fn empty(cfg: &ProbeGridConfig) -> Result<Self> {
        cfg.validate()?;
        let probes = cfg.resolution.iter().product::<usize>();
        Ok(ProbeGrid {
            resolution: cfg.resolution,
            bounds: cfg.bounds,
            face_resolution: cfg.face_resolution,
            distance_threshold: cfg.threshold(),
            bits: vec![0; bit_bytes(probes, cfg.face_resolution)],
            indirect: vec![Rgb::zeros(); probes * INDIRECT_SH_COEFFS],
        })
    }

    pub fn probe_count(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn texels_per_probe(&self) -> usize {
        6 * self.face_resolution * self.face_resolution
    }

    pub fn probe_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.resolution[0] * (iy + self.resolution[1] * iz)
    }

    pub fn probe_coords(&self, p: usize) -> [usize; 3] {
        let nx = self.resolution[0];
        let ny = self.resolution[1];
        [p % nx, (p / nx) % ny, p / (nx * ny)]
    }

    pub fn probe_center(&self, p: usize) -> Vec3 {
        let c = self.probe_coords(p);
        let e = self.bounds.extent();
        Vec3::from_fn(|a, _| self.bounds.min[a] + e[a] * c[a] as f64 / (self.resolution[a] - 1) as f64)
    }

    #[inline]
    pub fn bit_index(&self, probe: usize, face: usize, i: usize, j: usize) -> usize {
        let r = self.face_resolution;
        ((probe * 6 + face) * r + j) * r + i
    }

    #[inline]
    pub fn get_bit(&self, idx: usize) -> bool {
        self.bits[idx >> 3] >> (idx & 7) & 1 == 1
    }

    #[inline]
    pub fn set_bit(&mut self, idx: usize, v: bool) {
        if v {
            self.bits[idx >> 3] |= 1 << (idx & 7);
        } else {
            self.bits[idx >> 3] &= !(1 << (idx & 7));
        }
    }

    /// Occlusion bit of `probe` in direction `d` (nearest texel).
    pub fn occluded(&self, probe: usize, d: &Vec3) -> bool {
        let (f, i, j) = cubemap::direction_to_texel(d, self.face_resolution);
        self.get_bit(self.bit_index(probe, f, i, j))
    }

    pub fn indirect_coeffs(&self, probe: usize) -> &[Rgb] {
        &self.indirect[probe * INDIRECT_SH_COEFFS..(probe + 1) * INDIRECT_SH_COEFFS]
    }

    /// Neighbor probes of `x` with normal-aware masked trilinear weights.
    pub fn neighbor_weights(&self, x: &Vec3, n: &Vec3) -> Query<Vec<(usize, f64)>> {
        let clamped = !self.bounds.contains(x);
        let x = self.bounds.clamp(x);
        let e = self.bounds.extent();
        let mut base = [0usize; 3];
        let mut t = [0.0; 3];
        for a in 0..3 {
            let g = (x[a] - self.bounds.min[a]) / e[a] * (self.resolution[a] - 1) as f64;
            let i0 = (g.floor().max(0.0) as usize).min(self.resolution[a] - 2);
            base[a] = i0;
            t[a] = (g - i0 as f64).clamp(0.0, 1.0);
        }
        let mut all = Vec::with_capacity(8);
        for corner in 0..8 {
            let off = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let w: f64 = (0..3)
                .map(|a| if off[a] == 1 { t[a] } else { 1.0 - t[a] })
                .product();
            let p = self.probe_index(base[0] + off[0], base[1] + off[1], base[2] + off[2]);
            all.push((p, w));
        }
        let masked: Vec<(usize, f64)> = all
            .iter()
            .map(|&(p, w)| {
                let keep = (self.probe_center(p) - x).dot(n) >= 0.0;
                (p, if keep { w } else { 0.0 })
            })
            .collect();
        let total: f64 = masked.iter().map(|(_, w)| w).sum();
        let value = if total > 0.0 {
            masked
                .into_iter()
                .filter(|(_, w)| *w > 0.0)
                .map(|(p, w)| (p, w / total))
                .collect()
        } else {
            all.into_iter().filter(|(_, w)| *w > 0.0).collect()
        };
        Query { value, clamped }
    }

    /// Fraction of `samples` uniform hemisphere directions about `n` that are
    /// occluded, with probe bits blended by masked trilinear weights.
    pub fn query_ao(&self, x: &Vec3, n: &Vec3, samples: usize, seed: u64) -> Query<f64> {
        let nb = self.neighbor_weights(x, n);
        let dirs = hemisphere_directions(n, samples, seed);
        let mut sum = 0.0;
        for d in &dirs {
            let (f, i, j) = cubemap::direction_to_texel(d, self.face_resolution);
            for &(p, w) in &nb.value {
                if self.get_bit(self.bit_index(p, f, i, j)) {
                    sum += w;
                }
            }
        }
        Query {
            value: if dirs.is_empty() { 0.0 } else { (sum / dirs.len() as f64).clamp(0.0, 1.0) },
            clamped: nb.clamped,
        }
    }

    /// Interpolated indirect irradiance at `x` for surface normal `n`.
    pub fn query_indirect(&self, x: &Vec3, n: &Vec3) -> Query<Rgb> {
        let nb = self.neighbor_weights(x, n);
        let y = sh::basis(n, 2);
        let mut out = Rgb::zeros();
        for &(p, w) in &nb.value {
            let c = self.indirect_coeffs(p);
            for k in 0..INDIRECT_SH_COEFFS {
                out += c[k] * (w * y[k] * sh::COSINE_LOBE[sh::degree_of(k)]);
            }
        }
        Query {
            value: out.map(|v| v.max(0.0)),
            clamped: nb.clamped,
        }
    }
}

pub fn bit_bytes(probes: usize, face_resolution: usize) -> usize {
    (probes * 6 * face_resolution * face_resolution).div_ceil(8)
}

/// `count` uniformly distributed directions on the hemisphere around `n`:
/// a Hammersley set under a seeded Cranley-Patterson rotation.
pub fn hemisphere_directions(n: &Vec3, count: usize, seed: u64) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (o1, o2): (f64, f64) = (rng.random(), rng.random());
    let (t, b) = tangent_frame(n);
    (0..count)
        .map(|k| {
            let (u1, u2) = hammersley(k as u32, count as u32);
            let z = (u1 + o1).fract();
            let phi = 2.0 * std::f64::consts::PI * (u2 + o2).fract();
            let r = (1.0 - z * z).max(0.0).sqrt();
            t * (r * phi.cos()) + b * (r * phi.sin()) + n * z
        })
        .collect()
}

/// Bakes occlusion bits (and, if configured, indirect irradiance) for every
/// probe of the grid.
pub fn bake_probes(
    scene: &Scene,
    cfg: &ProbeGridConfig,
    env: Option<&EnvironmentLight>,
    opts: &RenderOptions,
) -> Result<ProbeGrid> {
    let mut grid = ProbeGrid::empty(cfg)?;
    let res = cfg.face_resolution;
    let tau = grid.distance_threshold;
    let per_probe = grid.texels_per_probe();
    let centers: Vec<Vec3> = (0..grid.probe_count()).map(|p| grid.probe_center(p)).collect();
    let solid: Vec<f64> = (0..res * res)
        .map(|k| cubemap::texel_solid_angle(k % res, k / res, res))
        .collect();
    let rays = RayScene::new(scene);
    let baked = par::map_slice(&centers, |c| -> Result<(Vec<bool>, Vec<Rgb>)> {
        let depth = cubemap::render_depth_cubemap_with(&rays, c, res)?;
        let bits: Vec<bool> = depth.faces.iter().flat_map(|f| f.iter().map(|d| *d < tau)).collect();
        let mut coeffs = vec![Rgb::zeros(); INDIRECT_SH_COEFFS];
        if let (true, Some(env)) = (cfg.bake_indirect, env) {
            let faces = cubemap::render_radiance_cubemap(scene, c, res, env, opts)?;
            for (f, img) in faces.iter().enumerate() {
                for k in 0..res * res {
                    let d = cubemap::texel_direction(f, k % res, k / res, res);
                    let y = sh::basis(&d, 2);
                    let l = img.pixels[k] * solid[k];
                    for (ci, yk) in coeffs.iter_mut().zip(&y) {
                        *ci += l * *yk;
                    }
                }
            }
        }
        Ok((bits, coeffs))
    });
    for (p, r) in baked.into_iter().enumerate() {
        let (bits, coeffs) = r?;
        debug_assert_eq!(bits.len(), per_probe);
        for (k, b) in bits.into_iter().enumerate() {
            if b {
                grid.set_bit(p * per_probe + k, true);
            }
        }
        grid.indirect[p * INDIRECT_SH_COEFFS..(p + 1) * INDIRECT_SH_COEFFS].copy_from_slice(&coeffs);
    }
    Ok(grid)
}

/// Occlusion cached as spherical-harmonic coefficients per probe.
#[derive(Clone, Debug, PartialEq)]
pub struct ShOcclusion {
    pub degree: usize,
    /// `coefficient_count(degree)` values per probe.
    pub coeffs: Vec<f64>,
    /// Lattice (bit data unused) for neighbor lookup.
    pub lattice: ProbeGrid,
}

impl ShOcclusion {
    /// Projects each probe's binary cubemap of `grid` onto SH up to `deg`.
    pub fn from_grid(grid: &ProbeGrid, deg: usize) -> Result<Self> {
        if !(1..=sh::MAX_DEGREE).contains(&deg) {
            return Err(Error::InvalidParameter(format!("SH degree {deg} not in 1..=3")));
        }
        let res = grid.face_resolution;
        let nc = sh::coefficient_count(deg);
        let mut coeffs = vec![0.0; grid.probe_count() * nc];
        for p in 0..grid.probe_count() {
            let c = &mut coeffs[p * nc..(p + 1) * nc];
            for f in 0..6 {
                for j in 0..res {
                    for i in 0..res {
                        if grid.get_bit(grid.bit_index(p, f, i, j)) {
                            let d = cubemap::texel_direction(f, i, j, res);
                            let w = cubemap::texel_solid_angle(i, j, res);
                            for (ck, yk) in c.iter_mut().zip(sh::basis(&d, deg)) {
                                *ck += w * yk;
                            }
                        }
                    }
                }
            }
        }
        Ok(ShOcclusion {
            degree: deg,
            coeffs,
            lattice: grid.clone(),
        })
    }

    /// Hemisphere-averaged occlusion around `n`, clamped to `[0, 1]`.
    pub fn query_ao(&self, x: &Vec3, n: &Vec3) -> Query<f64> {
        let nb = self.lattice.neighbor_weights(x, n);
        let nc = sh::coefficient_count(self.degree);
        let y = sh::basis(n, self.degree);
        let mut v = 0.0;
        for &(p, w) in &nb.value {
            let c = &self.coeffs[p * nc..(p + 1) * nc];
            for k in 0..nc {
                v += w * c[k] * y[k] * sh::HEMISPHERE_AVERAGE[sh::degree_of(k)];
            }
        }
        Query {
            value: v.clamp(0.0, 1.0),
            clamped: nb.clamped,
        }
    }
}

/// Bakes the bit grid and converts it to SH occlusion of degree `deg`.
pub fn bake_sh_occlusion(cfg: &ProbeGridConfig, scene: &Scene, deg: usize) -> Result<ShOcclusion> {
    let cfg = ProbeGridConfig {
        bake_indirect: false,
        ..cfg.clone()
    };
    let grid = bake_probes(scene, &cfg, None, &RenderOptions::default())?;
    ShOcclusion::from_grid(&grid, deg)
}
