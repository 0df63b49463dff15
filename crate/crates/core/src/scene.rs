//! Particle, camera and scene containers plus the geometric quantities derived
//! from a particle (covariance and shortest-axis normal).

use crate::error::{Error, Result};
use crate::math::{logit, quat_normalize, quat_to_rotation, sigmoid, Mat3, Rgb, Vec2, Vec3};
use serde::{Deserialize, Serialize};

/// Smallest admissible particle extent along any axis, in world units.
pub const MIN_SCALE: f64 = 1e-6;

/// Relative tolerance under which two scale components count as tied when
/// picking the shortest axis; ties resolve to the lower axis index.
pub const AXIS_TIE_TOLERANCE: f64 = 1e-9;

/// One anisotropic Gaussian with physically based appearance.
///
/// Opacity and roughness are stored as logits and the extents as natural
/// logarithms, so any real-valued update keeps the particle valid. Albedo and
/// specular color are stored directly and clamped to `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianParticle {
    pub position: Vec3,
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: [f64; 4],
    pub log_scale: Vec3,
    pub opacity_logit: f64,
    pub diffuse_albedo: Rgb,
    pub specular_color: Rgb,
    pub roughness_logit: f64,
}

impl GaussianParticle {
    /// Builds a particle from physical (activated) quantities.
    pub fn new(
        position: Vec3,
        rotation: [f64; 4],
        scale: Vec3,
        opacity: f64,
        diffuse_albedo: Rgb,
        specular_color: Rgb,
        roughness: f64,
    ) -> Self {
        let mut p = GaussianParticle {
            position,
            rotation: quat_normalize(&rotation),
            log_scale: scale.map(|s| s.max(MIN_SCALE).ln()),
            opacity_logit: logit(opacity),
            diffuse_albedo,
            specular_color,
            roughness_logit: logit(roughness),
        };
        p.enforce_invariants();
        p
    }

    pub fn scale(&self) -> Vec3 {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn roughness(&self) -> f64 {
        sigmoid(self.roughness_logit)
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        quat_to_rotation(&self.rotation)
    }

    pub fn covariance(&self) -> Result<Mat3> {
        covariance_from_params(&self.rotation, &self.scale())
    }

    pub fn shortest_axis_normal(&self, view_point: &Vec3) -> Vec3 {
        shortest_axis_normal(&self.rotation, &self.log_scale, &self.position, view_point).0
    }

    /// Restores the stored-field invariants after an unconstrained update.
    pub fn enforce_invariants(&mut self) {
        self.rotation = quat_normalize(&self.rotation);
        let floor = MIN_SCALE.ln();
        self.log_scale = self.log_scale.map(|l| if l.is_nan() { floor } else { l.max(floor) });
        self.diffuse_albedo = self.diffuse_albedo.map(|c| c.clamp(0.0, 1.0));
        self.specular_color = self.specular_color.map(|c| c.clamp(0.0, 1.0));
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.diffuse_albedo.iter().all(|v| v.is_finite())
            && self.specular_color.iter().all(|v| v.is_finite())
            && self.roughness_logit.is_finite()
    }
}

/// `R diag(s)^2 R^T` for a quaternion rotation and per-axis extents.
pub fn covariance_from_params(rotation: &[f64; 4], scale: &Vec3) -> Result<Mat3> {
    if !rotation.iter().all(|v| v.is_finite()) || !scale.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter(
            "covariance inputs must be finite".into(),
        ));
    }
    if scale.iter().any(|&s| s <= 0.0) {
        return Err(Error::InvalidParameter("scales must be positive".into()));
    }
    let m = quat_to_rotation(rotation) * Mat3::from_diagonal(scale);
    Ok(m * m.transpose())
}

/// Index of the smallest extent, lowest index on ties.
pub fn shortest_axis(log_scale: &Vec3) -> usize {
    let s = log_scale.map(f64::exp);
    let mut best = 0;
    for i in 1..3 {
        if s[i] < s[best] && (s[best] - s[i]) > AXIS_TIE_TOLERANCE * s[best] {
            best = i;
        }
    }
    best
}

/// Whether the two smallest extents are within `rel` of each other in log space,
/// i.e. a perturbation of that size could switch the shortest axis.
pub fn shortest_axis_is_near_tie(log_scale: &Vec3, rel: f64) -> bool {
    let mut v = [log_scale.x, log_scale.y, log_scale.z];
    v.sort_by(|a, b| a.total_cmp(b));
    (v[1] - v[0]).abs() <= rel
}

/// Shortest principal axis oriented toward `view_point`. Also returns the axis
/// index and the orientation sign so the backward pass can route gradients.
pub fn shortest_axis_normal(
    rotation: &[f64; 4],
    log_scale: &Vec3,
    position: &Vec3,
    view_point: &Vec3,
) -> (Vec3, usize, f64) {
    let axis = shortest_axis(log_scale);
    let r = quat_to_rotation(rotation);
    let n = r.column(axis).into_owned();
    let sign = if n.dot(&(view_point - position)) >= 0.0 {
        1.0
    } else {
        -1.0
    };
    (n * sign, axis, sign)
}

/// Pinhole camera with a world-to-camera rigid transform.
///
/// Camera space follows the computer-vision convention: `+x` right, `+y` down,
/// `+z` forward, so visible points have positive depth. Pixel `(i, j)` covers
/// `[i, i+1) x [j, j+1)` and is sampled at its center `(i + 0.5, j + 0.5)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation.
    pub rotation: Mat3,
    /// World-to-camera translation.
    pub translation: Vec3,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Mat3,
        translation: Vec3,
        width: usize,
        height: usize,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let cam = Camera {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            width,
            height,
            near,
            far,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::InvalidParameter("focal lengths must be positive".into()));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::InvalidParameter("require 0 < near < far".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter("empty image resolution".into()));
        }
        let r = &self.rotation;
        let err = (r * r.transpose() - Mat3::identity()).abs().max();
        if !(err < 1e-6) || r.determinant() < 0.0 {
            return Err(Error::InvalidParameter(
                "extrinsic rotation is not a proper orthonormal matrix".into(),
            ));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite translation".into()));
        }
        Ok(())
    }

    /// Camera looking from `eye` toward `target`; `up` fixes the roll and
    /// `fov_y` is the full vertical field of view in radians.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        fov_y: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let f = 0.5 * height as f64 / (0.5 * fov_y).tan();
        Camera::new(
            f,
            f,
            0.5 * width as f64,
            0.5 * height as f64,
            rotation,
            -(rotation * eye),
            width,
            height,
            0.01,
            1000.0,
        )
    }

    /// Camera center in world space.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn project(&self, p_cam: &Vec3) -> Vec2 {
        Vec2::new(
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        )
    }

    /// Camera-space ray through the center of pixel `(i, j)`, scaled to unit depth.
    pub fn pixel_ray_camera(&self, i: usize, j: usize) -> Vec3 {
        Vec3::new(
            (i as f64 + 0.5 - self.cx) / self.fx,
            (j as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        )
    }

    /// Unit world-space direction from the camera through pixel `(i, j)`.
    pub fn pixel_direction(&self, i: usize, j: usize) -> Vec3 {
        (self.rotation.transpose() * self.pixel_ray_camera(i, j)).normalize()
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Copy of this camera with the whole rig moved by `offset` in world space.
    pub fn translated(&self, offset: &Vec3) -> Self {
        let mut c = self.clone();
        c.translation -= self.rotation * offset;
        c
    }
}

/// A particle after perspective projection onto the image plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Splat2D {
    /// Projected mean in pixel coordinates.
    pub mean: Vec2,
    /// Screen-space covariance including the anti-aliasing dilation.
    pub cov: [f64; 3],
    /// Inverse covariance `(a, b, c)`: Mahalanobis distance is
    /// `a dx^2 + 2 b dx dy + c dy^2`.
    pub conic: [f64; 3],
    /// Camera-space depth.
    pub depth: f64,
    pub opacity: f64,
    /// Half-extent of the axis-aligned box around the 3-sigma ellipse.
    pub extent: Vec2,
    pub particle_index: usize,
}

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Aabb { min, max }
    }

    pub fn cube(half: f64) -> Self {
        Aabb::new(Vec3::repeat(-half), Vec3::repeat(half))
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn clamp(&self, p: &Vec3) -> Vec3 {
        Vec3::new(
            p.x.clamp(self.min.x, self.max.x),
            p.y.clamp(self.min.y, self.max.y),
            p.z.clamp(self.min.z, self.max.z),
        )
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn padded(&self, pad: f64) -> Self {
        Aabb::new(self.min - Vec3::repeat(pad), self.max + Vec3::repeat(pad))
    }

    pub fn translated(&self, offset: &Vec3) -> Self {
        Aabb::new(self.min + offset, self.max + offset)
    }
}

/// Ordered particle collection with its spatial bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub particles: Vec<GaussianParticle>,
    pub bounds: Aabb,
}

impl Scene {
    pub fn new(particles: Vec<GaussianParticle>, bounds: Aabb) -> Result<Self> {
        if let Some(p) = particles.iter().find(|p| !bounds.contains(&p.position)) {
            return Err(Error::OutOfBounds {
                x: p.position.x,
                y: p.position.y,
                z: p.position.z,
            });
        }
        Ok(Scene { particles, bounds })
    }

    /// Scene whose bounds enclose the particles with a margin of `pad`.
    pub fn from_particles(particles: Vec<GaussianParticle>, pad: f64) -> Self {
        let mut min = Vec3::repeat(f64::INFINITY);
        let mut max = Vec3::repeat(f64::NEG_INFINITY);
        for p in &particles {
            min = min.inf(&p.position);
            max = max.sup(&p.position);
        }
        if particles.is_empty() {
            min = Vec3::repeat(-1.0);
            max = Vec3::repeat(1.0);
        }
        Scene {
            particles,
            bounds: Aabb::new(min, max).padded(pad),
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn translated(&self, offset: &Vec3) -> Self {
        let mut s = self.clone();
        for p in &mut s.particles {
            p.position += offset;
        }
        s.bounds = s.bounds.translated(offset);
        s
    }
}
