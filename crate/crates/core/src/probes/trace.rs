//! Ray-traced occlusion straight against the particles, used as the AO
//! reference for the probe caches.

use crate::math::{Mat3, Vec3};
use crate::probes::hemisphere_directions;
use crate::raster::blend::{CUTOFF_MAHALANOBIS_SQ, MAX_ALPHA, MEDIAN_OPACITY};
use crate::scene::Scene;

/// Particles prepared for ray queries.
pub struct RayScene {
    particles: Vec<RayParticle>,
}

struct RayParticle {
    position: Vec3,
    precision: Mat3,
    opacity: f64,
    /// Radius of the sphere enclosing the cutoff ellipsoid.
    reach: f64,
}

impl RayScene {
    pub fn new(scene: &Scene) -> Self {
        let particles = scene
            .particles
            .iter()
            .filter_map(|p| {
                let r = p.rotation_matrix();
                let s = p.scale();
                let inv_s2 = s.map(|s| 1.0 / (s * s));
                let precision = r * Mat3::from_diagonal(&inv_s2) * r.transpose();
                precision.iter().all(|v| v.is_finite()).then(|| RayParticle {
                    position: p.position,
                    precision,
                    opacity: p.opacity(),
                    reach: CUTOFF_MAHALANOBIS_SQ.sqrt() * s.max(),
                })
            })
            .collect();
        RayScene { particles }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Center and enclosing radius of particle `k`.
    pub fn bounding_sphere(&self, k: usize) -> (Vec3, f64) {
        let p = &self.particles[k];
        (p.position, p.reach)
    }

    /// Distance of the peak response of particle `k` along the unit ray and
    /// its clamped opacity there, if the peak lies ahead within the cutoff.
    pub fn peak(&self, k: usize, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        let p = &self.particles[k];
        let o = origin - p.position;
        let pd = p.precision * dir;
        let a = dir.dot(&pd);
        if a <= 0.0 {
            return None;
        }
        let t = -o.dot(&pd) / a;
        if t <= 0.0 {
            return None;
        }
        let q = (o.dot(&(p.precision * o)) - t * t * a).max(0.0);
        if q > CUTOFF_MAHALANOBIS_SQ {
            return None;
        }
        Some((t, (p.opacity * (-0.5 * q).exp()).min(MAX_ALPHA)))
    }

    /// Distance along the unit ray at which accumulated opacity first reaches
    /// one half. Each particle contributes its peak response along the ray,
    /// placed at the distance of that peak; `+inf` if the ray escapes.
    pub fn hit_distance(&self, origin: &Vec3, dir: &Vec3) -> f64 {
        self.hit_distance_among(0..self.particles.len(), origin, dir)
    }

    /// [`RayScene::hit_distance`] over the particles in `candidates` only.
    pub fn hit_distance_among(&self, candidates: impl IntoIterator<Item = usize>, origin: &Vec3, dir: &Vec3) -> f64 {
        let mut hits: Vec<(f64, usize, f64)> = candidates
            .into_iter()
            .filter_map(|k| self.peak(k, origin, dir).map(|(t, a)| (t, k, a)))
            .collect();
        hits.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let mut transmittance = 1.0;
        for (t, _, alpha) in hits {
            transmittance *= 1.0 - alpha;
            if 1.0 - transmittance >= MEDIAN_OPACITY {
                return t;
            }
        }
        f64::INFINITY
    }

    /// Fraction of `samples` uniform hemisphere directions about `n` whose ray
    /// from `x` hits within `threshold`.
    pub fn ambient_occlusion(&self, x: &Vec3, n: &Vec3, samples: usize, seed: u64, threshold: f64) -> f64 {
        let dirs = hemisphere_directions(n, samples, seed);
        if dirs.is_empty() {
            return 0.0;
        }
        let hit = dirs.iter().filter(|d| self.hit_distance(x, d) < threshold).count();
        hit as f64 / dirs.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Rgb;
    use crate::scene::{Aabb, GaussianParticle};

    fn wall(z: f64) -> Scene {
        let mut ps = Vec::new();
        for i in -10..=10 {
            for j in -10..=10 {
                ps.push(GaussianParticle::new(
                    Vec3::new(i as f64 * 0.1, j as f64 * 0.1, z),
                    [1.0, 0.0, 0.0, 0.0],
                    Vec3::new(0.08, 0.08, 0.005),
                    0.99,
                    Rgb::repeat(0.5),
                    Rgb::zeros(),
                    0.5,
                ));
            }
        }
        Scene::new(ps, Aabb::cube(2.0)).unwrap()
    }

    #[test]
    fn ray_finds_a_wall_at_its_distance() {
        let rs = RayScene::new(&wall(0.7));
        let t = rs.hit_distance(&Vec3::zeros(), &Vec3::z());
        assert!((t - 0.7).abs() < 1e-12, "{t}");
        assert_eq!(rs.hit_distance(&Vec3::zeros(), &-Vec3::z()), f64::INFINITY);
    }

    #[test]
    fn empty_scene_is_unoccluded() {
        let rs = RayScene::new(&Scene::new(Vec::new(), Aabb::cube(1.0)).unwrap());
        assert_eq!(rs.ambient_occlusion(&Vec3::zeros(), &Vec3::y(), 64, 0, 1.0), 0.0);
    }
}
