//! Cube-face parameterization and per-probe cubemap rendering.

use crate::error::{Error, Result};
use crate::img::Image;
use crate::math::{Mat3, Vec3};
use crate::par;
use crate::probes::trace::RayScene;
use crate::render::{render_unified, RenderMode, RenderOptions};
use crate::scene::{Camera, Scene};
use crate::shading::EnvironmentLight;

/// Face order: `+x, -x, +y, -y, +z, -z`.
pub const FACE_FORWARD: [[f64; 3]; 6] = [
    [1.0, 0.0, 0.0],
    [-1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, 0.0, 1.0],
    [0.0, 0.0, -1.0],
];
pub const FACE_RIGHT: [[f64; 3]; 6] = [
    [0.0, 0.0, -1.0],
    [0.0, 0.0, 1.0],
    [1.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
    [-1.0, 0.0, 0.0],
];

pub const FACE_NEAR: f64 = 1e-3;
pub const FACE_FAR: f64 = 1e6;

/// `(right, down, forward)` of face `f`; `down = forward x right`.
pub fn face_frame(f: usize) -> (Vec3, Vec3, Vec3) {
    let fwd = Vec3::from(FACE_FORWARD[f]);
    let right = Vec3::from(FACE_RIGHT[f]);
    (right, fwd.cross(&right), fwd)
}

/// 90-degree pinhole camera at `center` looking through face `f`.
pub fn face_camera(center: &Vec3, f: usize, res: usize) -> Result<Camera> {
    let (r, d, fwd) = face_frame(f);
    let rot = Mat3::from_rows(&[r.transpose(), d.transpose(), fwd.transpose()]);
    let half = res as f64 / 2.0;
    Camera::new(half, half, half, half, rot, -(rot * center), res, res, FACE_NEAR, FACE_FAR)
}

/// Face and texel `(f, i, j)` containing direction `d`.
pub fn direction_to_texel(d: &Vec3, res: usize) -> (usize, usize, usize) {
    let a = d.abs();
    let f = if a.x >= a.y && a.x >= a.z {
        if d.x >= 0.0 { 0 } else { 1 }
    } else if a.y >= a.z {
        if d.y >= 0.0 { 2 } else { 3 }
    } else if d.z >= 0.0 {
        4
    } else {
        5
    };
    let (r, dn, fwd) = face_frame(f);
    let z = d.dot(&fwd);
    let u = d.dot(&r) / z;
    let v = d.dot(&dn) / z;
    let n = res as f64;
    let i = (((u + 1.0) * 0.5 * n) as usize).min(res - 1);
    let j = (((v + 1.0) * 0.5 * n) as usize).min(res - 1);
    (f, i, j)
}

/// Unit direction through the center of texel `(i, j)` of face `f`.
pub fn texel_direction(f: usize, i: usize, j: usize, res: usize) -> Vec3 {
    let (r, d, fwd) = face_frame(f);
    let u = 2.0 * (i as f64 + 0.5) / res as f64 - 1.0;
    let v = 2.0 * (j as f64 + 0.5) / res as f64 - 1.0;
    (fwd + r * u + d * v).normalize()
}

/// Exact solid angle of texel `(i, j)` on any face.
pub fn texel_solid_angle(i: usize, j: usize, res: usize) -> f64 {
    let n = res as f64;
    let corner = |x: f64, y: f64| (x * y).atan2((x * x + y * y + 1.0).sqrt());
    let x0 = 2.0 * i as f64 / n - 1.0;
    let x1 = 2.0 * (i + 1) as f64 / n - 1.0;
    let y0 = 2.0 * j as f64 / n - 1.0;
    let y1 = 2.0 * (j + 1) as f64 / n - 1.0;
    corner(x0, y0) - corner(x0, y1) - corner(x1, y0) + corner(x1, y1)
}

/// Radial distance to the surface for every texel of the six faces.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthCubemap {
    pub resolution: usize,
    /// `faces[f][j * res + i]`; `+inf` where nothing is hit.
    pub faces: [Vec<f64>; 6],
}

impl DepthCubemap {
    pub fn distance(&self, d: &Vec3) -> f64 {
        let (f, i, j) = direction_to_texel(d, self.resolution);
        self.faces[f][j * self.resolution + i]
    }
}

/// Six 90-degree depth renders from `center`; see [`render_depth_cubemap_with`].
pub fn render_depth_cubemap(scene: &Scene, center: &Vec3, res: usize) -> Result<DepthCubemap> {
    if !scene.bounds.contains(center) {
        return Err(Error::OutOfBounds {
            x: center.x,
            y: center.y,
            z: center.z,
        });
    }
    render_depth_cubemap_with(&RayScene::new(scene), center, res)
}

/// Six 90-degree depth renders from `center`.
///
/// Particles are binned to texels by the image of their bounding sphere, and
/// each texel blends the exact peak response of its particles along the texel
/// ray in order of peak distance. A texel stores the distance at which
/// accumulated opacity reaches one half, or `+inf`.
pub fn render_depth_cubemap_with(rays: &RayScene, center: &Vec3, res: usize) -> Result<DepthCubemap> {
    if res == 0 {
        return Err(Error::InvalidParameter("face resolution must be positive".into()));
    }
    let mut faces: [Vec<f64>; 6] = Default::default();
    for (f, face) in faces.iter_mut().enumerate() {
        let (right, down, fwd) = face_frame(f);
        let mut bins: Vec<Vec<usize>> = vec![Vec::new(); res * res];
        for k in 0..rays.len() {
            let (pos, reach) = rays.bounding_sphere(k);
            let rel = pos - center;
            let c = Vec3::new(rel.dot(&right), rel.dot(&down), rel.dot(&fwd));
            let Some((i0, i1, j0, j1)) = sphere_texel_range(&c, reach, res) else {
                continue;
            };
            for j in j0..=j1 {
                for i in i0..=i1 {
                    bins[j * res + i].push(k);
                }
            }
        }
        *face = par::map_range(res * res, |t| {
            let dir = texel_direction(f, t % res, t / res, res);
            rays.hit_distance_among(bins[t].iter().copied(), center, &dir)
        });
    }
    Ok(DepthCubemap {
        resolution: res,
        faces,
    })
}

/// Inclusive texel range covered by a sphere at face coordinates `c`
/// (right, down, forward) with radius `r`, or `None` if it misses the face.
fn sphere_texel_range(c: &Vec3, r: f64, res: usize) -> Option<(usize, usize, usize, usize)> {
    if c.z <= -r {
        return None;
    }
    let full = (0, res - 1, 0, res - 1);
    if c.z <= r {
        return Some(full);
    }
    let span = |x: f64| -> Option<(usize, usize)> {
        let den = c.z * c.z - r * r;
        let root = r * (x * x + c.z * c.z - r * r).sqrt();
        let lo = (x * c.z - root) / den;
        let hi = (x * c.z + root) / den;
        if hi < -1.0 || lo > 1.0 {
            return None;
        }
        let n = res as f64;
        let to_px = |u: f64| ((u.clamp(-1.0, 1.0) + 1.0) * 0.5 * n).floor().clamp(0.0, n - 1.0) as usize;
        Some((to_px(lo), to_px(hi)))
    };
    let (i0, i1) = span(c.x)?;
    let (j0, j1) = span(c.y)?;
    Some((i0, i1, j0, j1))
}

/// Deferred-shaded radiance of the six faces over a black background.
pub fn render_radiance_cubemap(
    scene: &Scene,
    center: &Vec3,
    res: usize,
    env: &EnvironmentLight,
    opts: &RenderOptions,
) -> Result<[Image; 6]> {
    let opts = RenderOptions {
        background: Default::default(),
        ..opts.clone()
    };
    let mut out: Vec<Image> = Vec::with_capacity(6);
    for f in 0..6 {
        let cam = face_camera(center, f, res)?;
        out.push(render_unified(scene, &cam, env, None, &opts, RenderMode::Infer)?.deferred);
    }
    Ok(out.try_into().expect("six faces"))
}
