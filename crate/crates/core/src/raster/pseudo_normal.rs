//! Normals derived from finite differences of a rendered depth map.

use crate::math::{normalize_vjp, Vec3};
use crate::scene::Camera;

/// Camera-space normals of `depth` (z-depth per pixel, row-major).
///
/// A pixel gets a normal only if it and its four neighbors are inside the
/// image and have `mask` set; other pixels carry the zero vector. Normals are
/// oriented toward the camera.
pub fn depth_to_pseudo_normal(depth: &[f64], mask: &[bool], cam: &Camera) -> Vec<Vec3> {
    let (w, h) = (cam.width, cam.height);
    let mut out = vec![Vec3::zeros(); w * h];
    for y in 0..h {
        for x in 0..w {
            if let Some(geo) = stencil(depth, mask, cam, x, y) {
                out[y * w + x] = geo.normal();
            }
        }
    }
    out
}

struct Stencil {
    rays: [Vec3; 4],
    idx: [usize; 4],
    tx: Vec3,
    ty: Vec3,
    center: Vec3,
}

impl Stencil {
    fn cross(&self) -> Vec3 {
        self.tx.cross(&self.ty)
    }

    fn sign(&self) -> f64 {
        if self.cross().dot(&self.center) > 0.0 {
            -1.0
        } else {
            1.0
        }
    }

    fn normal(&self) -> Vec3 {
        let c = self.cross();
        let len = c.norm();
        if len > 0.0 && len.is_finite() {
            c * (self.sign() / len)
        } else {
            Vec3::zeros()
        }
    }
}

fn stencil(depth: &[f64], mask: &[bool], cam: &Camera, x: usize, y: usize) -> Option<Stencil> {
    let (w, h) = (cam.width, cam.height);
    if x == 0 || y == 0 || x + 1 >= w || y + 1 >= h {
        return None;
    }
    let c = y * w + x;
    let idx = [c - 1, c + 1, c - w, c + w];
    if !mask[c] || idx.iter().any(|&i| !mask[i] || !depth[i].is_finite()) {
        return None;
    }
    let rays = [
        cam.pixel_ray_camera(x - 1, y),
        cam.pixel_ray_camera(x + 1, y),
        cam.pixel_ray_camera(x, y - 1),
        cam.pixel_ray_camera(x, y + 1),
    ];
    let p: Vec<Vec3> = (0..4).map(|k| rays[k] * depth[idx[k]]).collect();
    Some(Stencil {
        rays,
        idx,
        tx: p[1] - p[0],
        ty: p[3] - p[2],
        center: cam.pixel_ray_camera(x, y) * depth[c].max(0.0),
    })
}

/// Adds the gradient of `sum_i g[i] . n[i]` with respect to `depth` to `d_depth`.
pub fn depth_to_pseudo_normal_vjp(
    depth: &[f64],
    mask: &[bool],
    cam: &Camera,
    g: &[Vec3],
    d_depth: &mut [f64],
) {
    let w = cam.width;
    for y in 0..cam.height {
        for x in 0..w {
            let gi = g[y * w + x];
            if gi == Vec3::zeros() {
                continue;
            }
            let Some(s) = stencil(depth, mask, cam, x, y) else {
                continue;
            };
            let c = s.cross();
            if !(c.norm() > 0.0) {
                continue;
            }
            let dc = normalize_vjp(&c, &(gi * s.sign()));
            // c = tx x ty.
            let dtx = s.ty.cross(&dc);
            let dty = dc.cross(&s.tx);
            d_depth[s.idx[0]] -= s.rays[0].dot(&dtx);
            d_depth[s.idx[1]] += s.rays[1].dot(&dtx);
            d_depth[s.idx[2]] -= s.rays[2].dot(&dty);
            d_depth[s.idx[3]] += s.rays[3].dot(&dty);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Mat3;

    fn camera(w: usize, h: usize) -> Camera {
        Camera::new(
            20.0,
            20.0,
            w as f64 / 2.0,
            h as f64 / 2.0,
            Mat3::identity(),
            Vec3::zeros(),
            w,
            h,
            0.01,
            100.0,
        )
        .unwrap()
    }

    #[test]
    fn fronto_parallel_plane_faces_camera() {
        let cam = camera(8, 8);
        let depth = vec![3.0; 64];
        let mask = vec![true; 64];
        let n = depth_to_pseudo_normal(&depth, &mask, &cam);
        for y in 1..7 {
            for x in 1..7 {
                assert!((n[y * 8 + x] - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
            }
        }
        assert_eq!(n[0], Vec3::zeros());
    }

    #[test]
    fn tilted_plane_matches_analytic_normal() {
        let cam = camera(16, 16);
        // Plane through (0,0,4) with normal (0, s, -c) rotated 45 degrees about x.
        let a = std::f64::consts::FRAC_PI_4;
        let plane_n = Vec3::new(0.0, a.sin(), -a.cos());
        let p0 = Vec3::new(0.0, 0.0, 4.0);
        let mut depth = vec![0.0; 256];
        for y in 0..16 {
            for x in 0..16 {
                let r = cam.pixel_ray_camera(x, y);
                depth[y * 16 + x] = plane_n.dot(&p0) / plane_n.dot(&r);
            }
        }
        let n = depth_to_pseudo_normal(&depth, &vec![true; 256], &cam);
        for y in 2..14 {
            for x in 2..14 {
                let ang = n[y * 16 + x].dot(&plane_n).clamp(-1.0, 1.0).acos().to_degrees();
                assert!(ang < 1.0, "angle {ang}");
            }
        }
    }

    #[test]
    fn empty_neighbor_gives_sentinel() {
        let cam = camera(8, 8);
        let depth = vec![3.0; 64];
        let mut mask = vec![true; 64];
        mask[3 * 8 + 4] = false;
        let n = depth_to_pseudo_normal(&depth, &mask, &cam);
        assert_eq!(n[3 * 8 + 3], Vec3::zeros());
        assert_eq!(n[2 * 8 + 4], Vec3::zeros());
        assert_ne!(n[5 * 8 + 5], Vec3::zeros());
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let cam = camera(6, 6);
        let depth: Vec<f64> = (0..36)
            .map(|i| 2.0 + 0.1 * ((i * 7 % 11) as f64) + 0.03 * i as f64)
            .collect();
        let mask = vec![true; 36];
        let g: Vec<Vec3> = (0..36)
            .map(|i| Vec3::new((i as f64).sin(), (i as f64 * 0.7).cos(), 0.3))
            .collect();
        let f = |d: &[f64]| -> f64 {
            depth_to_pseudo_normal(d, &mask, &cam)
                .iter()
                .zip(&g)
                .map(|(n, gi)| n.dot(gi))
                .sum()
        };
        let mut analytic = vec![0.0; 36];
        depth_to_pseudo_normal_vjp(&depth, &mask, &cam, &g, &mut analytic);
        let h = 1e-6;
        for i in 0..36 {
            let mut dp = depth.clone();
            let mut dm = depth.clone();
            dp[i] += h;
            dm[i] -= h;
            let fd = (f(&dp) - f(&dm)) / (2.0 * h);
            assert!((fd - analytic[i]).abs() < 1e-6 * (1.0 + fd.abs()), "{i}: {fd} vs {}", analytic[i]);
        }
    }
}
