//! Local-affine (EWA) projection of 3D Gaussians and its adjoint.

use crate::math::{quat_to_rotation, Mat2x3, Mat3, Vec2, Vec3};
use crate::scene::{Camera, GaussianParticle, Splat2D};

/// Added to the screen-space covariance diagonal, in squared pixels.
pub const COV_DILATION: f64 = 0.3;

/// Splats are truncated at this Mahalanobis radius.
pub const SIGMA_EXTENT: f64 = 3.0;

/// Particles whose center projects further than this fraction of the image
/// size outside the frame are culled; the local-affine footprint of such
/// grazing particles is meaningless.
pub const GUARD_BAND: f64 = 0.15;

/// Jacobian of the perspective map `(x, y, z) -> (fx x / z, fy y / z)`.
pub fn projection_jacobian(cam: &Camera, p: &Vec3) -> Mat2x3 {
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    Mat2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * p.x * iz2,
        0.0,
        cam.fy * iz,
        -cam.fy * p.y * iz2,
    )
}

/// Camera-space covariance `W Sigma W^T`.
fn camera_covariance(particle: &GaussianParticle, cam: &Camera) -> (Mat3, Mat3) {
    let r = quat_to_rotation(&particle.rotation);
    let m = r * Mat3::from_diagonal(&particle.scale());
    let sigma = m * m.transpose();
    (cam.rotation * sigma * cam.rotation.transpose(), m)
}

/// Screen-space covariance `J W Sigma W^T J^T + dilation`, as `(xx, xy, yy)`.
pub fn screen_covariance(particle: &GaussianParticle, cam: &Camera) -> [f64; 3] {
    let p = cam.world_to_camera(&particle.position);
    let (v, _) = camera_covariance(particle, cam);
    let j = projection_jacobian(cam, &p);
    let c = j * v * j.transpose();
    [c[(0, 0)] + COV_DILATION, c[(0, 1)], c[(1, 1)] + COV_DILATION]
}

/// Projects a particle; `None` when it is outside the depth range, its center
/// falls outside the guard band, or its 3-sigma footprint misses every pixel
/// center.
pub fn project_gaussian(particle: &GaussianParticle, cam: &Camera, index: usize) -> Option<Splat2D> {
    let p = cam.world_to_camera(&particle.position);
    if !(p.z > cam.near && p.z < cam.far) {
        return None;
    }
    let (w, h) = (cam.width as f64, cam.height as f64);
    let center = cam.project(&p);
    if !(center.x >= -GUARD_BAND * w
        && center.x <= (1.0 + GUARD_BAND) * w
        && center.y >= -GUARD_BAND * h
        && center.y <= (1.0 + GUARD_BAND) * h)
    {
        return None;
    }
    let cov = screen_covariance(particle, cam);
    let det = cov[0] * cov[2] - cov[1] * cov[1];
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = [cov[2] / det, -cov[1] / det, cov[0] / det];
    let mean = center;
    let extent = Vec2::new(SIGMA_EXTENT * cov[0].sqrt(), SIGMA_EXTENT * cov[2].sqrt());
    let misses = mean.x + extent.x < 0.5
        || mean.x - extent.x > cam.width as f64 - 0.5
        || mean.y + extent.y < 0.5
        || mean.y - extent.y > cam.height as f64 - 0.5;
    if misses || !mean.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some(Splat2D {
        mean,
        cov,
        conic,
        depth: p.z,
        opacity: particle.opacity(),
        extent,
        particle_index: index,
    })
}

/// Gradients of a projected splat with respect to the particle geometry.
#[derive(Clone, Debug, Default)]
pub struct ProjectionGrad {
    pub position: Vec3,
    pub rotation_matrix: Mat3,
    /// With respect to the linear extents (not their logarithms).
    pub scale: Vec3,
}

/// Adjoint of [`project_gaussian`] for the mean, conic and depth outputs.
pub fn project_backward(
    particle: &GaussianParticle,
    cam: &Camera,
    d_mean: &Vec2,
    d_conic: &[f64; 3],
    d_depth: f64,
) -> ProjectionGrad {
    let p = cam.world_to_camera(&particle.position);
    let (v, m) = camera_covariance(particle, cam);
    let j = projection_jacobian(cam, &p);
    let cov = screen_covariance(particle, cam);
    let (a, b, c) = (cov[0], cov[1], cov[2]);
    let det = a * c - b * b;
    let det2 = det * det;

    // conic = (c, -b, a) / det.
    let [ga, gb, gc] = *d_conic;
    let d_a = ga * (-c * c / det2) + gb * (b * c / det2) + gc * (-b * b / det2);
    let d_b = ga * (2.0 * b * c / det2) + gb * (-1.0 / det - 2.0 * b * b / det2) + gc * (2.0 * a * b / det2);
    let d_c = ga * (-b * b / det2) + gb * (a * b / det2) + gc * (-a * a / det2);

    // Full symmetric gradient on the 2x2 covariance.
    let g2 = nalgebra::Matrix2::new(d_a, 0.5 * d_b, 0.5 * d_b, d_c);
    let g_v = j.transpose() * g2 * j;
    let g_j = 2.0 * g2 * j * v;

    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let mut g_p = Vec3::zeros();
    // Mean: u = fx x/z + cx, v = fy y/z + cy.
    g_p.x += d_mean.x * cam.fx * iz;
    g_p.y += d_mean.y * cam.fy * iz;
    g_p.z += -d_mean.x * cam.fx * p.x * iz2 - d_mean.y * cam.fy * p.y * iz2;
    // Jacobian entries.
    g_p.x += g_j[(0, 2)] * (-cam.fx * iz2);
    g_p.y += g_j[(1, 2)] * (-cam.fy * iz2);
    g_p.z += g_j[(0, 0)] * (-cam.fx * iz2)
        + g_j[(0, 2)] * (2.0 * cam.fx * p.x * iz3)
        + g_j[(1, 1)] * (-cam.fy * iz2)
        + g_j[(1, 2)] * (2.0 * cam.fy * p.y * iz3);
    g_p.z += d_depth;

    let g_sigma = cam.rotation.transpose() * g_v * cam.rotation;
    let g_m = (g_sigma + g_sigma.transpose()) * m;
    let r = quat_to_rotation(&particle.rotation);
    let s = particle.scale();
    let mut g_r = Mat3::zeros();
    let mut g_s = Vec3::zeros();
    for i in 0..3 {
        let col = g_m.column(i);
        g_r.set_column(i, &(col * s[i]));
        g_s[i] = r.column(i).dot(&col);
    }
    ProjectionGrad {
        position: cam.rotation.transpose() * g_p,
        rotation_matrix: g_r,
        scale: g_s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{quat_to_rotation_vjp, Rgb};
    use approx::assert_relative_eq;

    fn camera() -> Camera {
        Camera::new(
            50.0,
            60.0,
            16.0,
            12.0,
            Mat3::identity(),
            Vec3::zeros(),
            32,
            24,
            0.1,
            100.0,
        )
        .unwrap()
    }

    fn particle(pos: Vec3, q: [f64; 4], s: Vec3) -> GaussianParticle {
        GaussianParticle::new(pos, q, s, 0.7, Rgb::repeat(0.5), Rgb::zeros(), 0.5)
    }

    #[test]
    fn on_axis_isotropic_matches_numeric_jacobian() {
        let cam = camera();
        let (sigma, d) = (0.05, 4.0);
        let p = particle(Vec3::new(0.0, 0.0, d), [1.0, 0.0, 0.0, 0.0], Vec3::repeat(sigma));
        let s = project_gaussian(&p, &cam, 0).unwrap();
        assert_relative_eq!(s.mean, Vec2::new(cam.cx, cam.cy), epsilon = 1e-12);

        // Oracle: differentiate the projection numerically, form J Sigma J^T.
        let h = 1e-6;
        let f = |q: Vec3| cam.project(&q);
        let mut jn = Mat2x3::zeros();
        for k in 0..3 {
            let mut e = Vec3::zeros();
            e[k] = h;
            let col = (f(p.position + e) - f(p.position - e)) / (2.0 * h);
            jn.set_column(k, &col);
        }
        let cov = jn * Mat3::from_diagonal(&Vec3::repeat(sigma * sigma)) * jn.transpose();
        assert_relative_eq!(s.cov[0] - COV_DILATION, cov[(0, 0)], max_relative = 1e-8);
        assert_relative_eq!(s.cov[2] - COV_DILATION, cov[(1, 1)], max_relative = 1e-8);
        assert_relative_eq!(s.cov[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(s.cov[0] - COV_DILATION, (cam.fx * sigma / d).powi(2), max_relative = 1e-12);
    }

    #[test]
    fn behind_camera_is_culled() {
        let cam = camera();
        let p = particle(Vec3::new(0.0, 0.0, -2.0), [1.0, 0.0, 0.0, 0.0], Vec3::repeat(0.1));
        assert!(project_gaussian(&p, &cam, 0).is_none());
        let far = particle(Vec3::new(0.0, 0.0, 200.0), [1.0, 0.0, 0.0, 0.0], Vec3::repeat(0.1));
        assert!(project_gaussian(&far, &cam, 0).is_none());
        let off = particle(Vec3::new(50.0, 0.0, 2.0), [1.0, 0.0, 0.0, 0.0], Vec3::repeat(0.01));
        assert!(project_gaussian(&off, &cam, 0).is_none());
    }

    #[test]
    fn grazing_particle_outside_guard_band_is_culled() {
        let cam = camera();
        // Large enough that its 3-sigma footprint would reach the frame.
        let grazing = particle(Vec3::new(1.0, 0.0, 0.11), [1.0, 0.0, 0.0, 0.0], Vec3::repeat(0.3));
        assert!(project_gaussian(&grazing, &cam, 0).is_none());
        let inside = particle(Vec3::new(0.1, 0.0, 2.0), [1.0, 0.0, 0.0, 0.0], Vec3::repeat(0.3));
        assert!(project_gaussian(&inside, &cam, 0).is_some());
    }

    #[test]
    fn off_axis_mean_is_k_t_mu() {
        let r = quat_to_rotation(&[0.95, 0.1, -0.2, 0.15]);
        let t = Vec3::new(0.1, -0.3, 2.0);
        let cam = Camera::new(40.0, 45.0, 15.0, 11.0, r, t, 32, 24, 0.1, 100.0).unwrap();
        let mu = Vec3::new(0.3, 0.2, 0.5);
        let p = particle(mu, [1.0, 0.0, 0.0, 0.0], Vec3::repeat(0.05));
        let s = project_gaussian(&p, &cam, 3).unwrap();
        // Oracle: homogeneous K [R|t] mu with explicit matrices.
        let k = Mat3::new(40.0, 0.0, 15.0, 0.0, 45.0, 11.0, 0.0, 0.0, 1.0);
        let h = k * (r * mu + t);
        assert_relative_eq!(s.mean.x, h.x / h.z, epsilon = 1e-12);
        assert_relative_eq!(s.mean.y, h.y / h.z, epsilon = 1e-12);
        assert_eq!(s.particle_index, 3);
    }

    #[test]
    fn distant_particles_converge_to_affine_formula() {
        let cam = camera();
        let sigma = 0.01;
        for d in [5.0, 20.0, 80.0] {
            let p = particle(Vec3::new(0.2, -0.1, d), [1.0, 0.0, 0.0, 0.0], Vec3::repeat(sigma));
            let c = screen_covariance(&p, &cam);
            let analytic = (cam.fx * sigma / d).powi(2);
            let rel = ((c[0] - COV_DILATION) - analytic).abs() / analytic;
            assert!(rel < 0.01, "d={d} rel={rel}");
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let r = quat_to_rotation(&[0.9, 0.2, -0.1, 0.3]);
        let cam = Camera::new(40.0, 45.0, 15.0, 11.0, r, Vec3::new(0.1, 0.0, 3.0), 32, 24, 0.1, 100.0)
            .unwrap();
        let base = particle(
            Vec3::new(0.2, 0.1, 0.4),
            [0.8, -0.3, 0.4, 0.2],
            Vec3::new(0.3, 0.1, 0.05),
        );
        let (gm, gc, gd) = (Vec2::new(0.7, -0.4), [1.3, -0.8, 0.5], 0.25);
        let objective = |p: &GaussianParticle| {
            let s = project_gaussian(p, &cam, 0).unwrap();
            gm.dot(&s.mean) + gc[0] * s.conic[0] + gc[1] * s.conic[1] + gc[2] * s.conic[2] + gd * s.depth
        };
        let g = project_backward(&base, &cam, &gm, &gc, gd);
        let gq = quat_to_rotation_vjp(&base.rotation, &g.rotation_matrix);
        let h = 1e-6;
        for k in 0..3 {
            let mut pp = base.clone();
            let mut pm = base.clone();
            pp.position[k] += h;
            pm.position[k] -= h;
            let fd = (objective(&pp) - objective(&pm)) / (2.0 * h);
            assert_relative_eq!(g.position[k], fd, max_relative = 1e-6, epsilon = 1e-8);

            let mut pp = base.clone();
            let mut pm = base.clone();
            pp.log_scale[k] += h;
            pm.log_scale[k] -= h;
            let fd = (objective(&pp) - objective(&pm)) / (2.0 * h);
            assert_relative_eq!(g.scale[k] * base.scale()[k], fd, max_relative = 1e-6, epsilon = 1e-8);
        }
        for k in 0..4 {
            let mut pp = base.clone();
            let mut pm = base.clone();
            pp.rotation[k] += h;
            pm.rotation[k] -= h;
            let fd = (objective(&pp) - objective(&pm)) / (2.0 * h);
            assert_relative_eq!(gq[k], fd, max_relative = 1e-6, epsilon = 1e-8);
        }
    }
}
