//! Procedural scenes and environments shipped with the crate. Every asset is
//! generated from a fixed seed, so tests, benches and the CLI share them
//! without data files.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::img::Image;
use crate::optimize::{LearningRates, TrainConfig};
use crate::math::{quat_from_axis_angle, quat_from_rotation, tangent_frame, Mat3, Rgb, Vec3};
use crate::render::{render_gbuffer, render_unified, RenderMode, RenderOptions};
use crate::scene::{Aabb, Camera, GaussianParticle, Scene};
use crate::shading::{EnvMap, EnvironmentLight, ShadingModel};

pub const TWO_TONE_SKY: [f64; 3] = [1.0, 0.95, 0.85];
pub const TWO_TONE_GROUND: [f64; 3] = [0.12, 0.15, 0.2];

/// Bright upper hemisphere over a dark lower one, split at the horizon.
pub fn two_tone_environment(width: usize, height: usize) -> EnvMap {
    let sky = Rgb::from(TWO_TONE_SKY);
    let ground = Rgb::from(TWO_TONE_GROUND);
    EnvMap::from_fn(width, height, |d| if d.y >= 0.0 { sky } else { ground })
}

/// Soft sky gradient with a small bright key light and a broader fill light.
pub fn studio_environment(width: usize, height: usize) -> EnvMap {
    let key = Vec3::new(0.45, 0.75, -0.5).normalize();
    let fill = Vec3::new(-0.7, 0.25, -0.6).normalize();
    EnvMap::from_fn(width, height, |d| {
        let up = d.y.max(0.0);
        let base = Rgb::new(0.18, 0.2, 0.24) + Rgb::new(0.25, 0.3, 0.4) * up;
        let lobe = |axis: &Vec3, width: f64| {
            let c = d.dot(axis).clamp(-1.0, 1.0);
            (-(1.0 - c) / (width * width)).exp()
        };
        base + Rgb::new(9.0, 8.5, 8.0) * lobe(&key, 0.1) + Rgb::new(1.2, 1.4, 1.8) * lobe(&fill, 0.35)
    })
}

/// `n` points spread evenly over the unit sphere.
pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), y, r * phi.sin())
        })
        .collect()
}

/// Quaternion whose local z axis maps onto the unit vector `n`.
pub fn orient_z_to(n: &Vec3) -> [f64; 4] {
    let (t, b) = tangent_frame(n);
    let mut m = Mat3::from_columns(&[t, b, *n]);
    if m.determinant() < 0.0 {
        m.set_column(1, &(-b));
    }
    quat_from_rotation(&m)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceMaterial {
    pub albedo: Rgb,
    pub specular: Rgb,
    pub roughness: f64,
    pub opacity: f64,
}

/// Sphere of radius `radius` tiled by `count` flat disks tangent to it.
pub fn disk_sphere(count: usize, radius: f64, material: impl Fn(&Vec3) -> SurfaceMaterial) -> Scene {
    let spacing = radius * (4.0 * std::f64::consts::PI / count as f64).sqrt();
    let particles = fibonacci_sphere(count)
        .into_iter()
        .map(|n| {
            let m = material(&n);
            GaussianParticle::new(
                n * radius,
                orient_z_to(&n),
                Vec3::new(0.6 * spacing, 0.6 * spacing, 0.02 * spacing),
                m.opacity,
                m.albedo,
                m.specular,
                m.roughness,
            )
        })
        .collect();
    Scene::from_particles(particles, 0.25 * radius)
}

fn uniform_sphere(count: usize, roughness: f64) -> Scene {
    disk_sphere(count, 1.0, |_| SurfaceMaterial {
        albedo: Rgb::repeat(0.1),
        specular: Rgb::repeat(0.9),
        roughness,
        opacity: 0.95,
    })
}

/// Metallic-looking sphere with roughness 0.05.
pub fn glossy_sphere() -> Scene {
    uniform_sphere(800, 0.05)
}

/// The same sphere with roughness 1.
pub fn rough_sphere() -> Scene {
    uniform_sphere(800, 1.0)
}

/// Camera on a circle of radius `distance` around the origin at elevation
/// `elevation` (radians), looking at the origin with world y up.
pub fn orbit_camera(azimuth: f64, elevation: f64, distance: f64, fov_y: f64, size: usize) -> Result<Camera> {
    let eye = distance
        * Vec3::new(
            elevation.cos() * azimuth.sin(),
            elevation.sin(),
            -elevation.cos() * azimuth.cos(),
        );
    Camera::look_at(eye, Vec3::zeros(), Vec3::y(), fov_y, size, size)
}

/// Inputs of a gradient check: a scene, a camera, an environment and a
/// reference image that the scene does not reproduce.
pub struct GradcheckScene {
    pub scene: Scene,
    pub camera: Camera,
    pub env: EnvironmentLight,
    pub options: RenderOptions,
    pub reference: Image,
}

fn random_particle(rng: &mut ChaCha8Rng) -> GaussianParticle {
    let position = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.3..0.3));
    let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let rotation = quat_from_axis_angle(&axis, rng.random_range(0.0..std::f64::consts::PI));
    let thin = rng.random_range(0.02..0.05);
    let mid = thin * rng.random_range(2.5..4.0);
    let wide = mid * rng.random_range(1.3..1.8);
    let mut s = [thin, mid, wide];
    let k = rng.random_range(0..3);
    s.swap(0, k);
    GaussianParticle::new(
        position,
        rotation,
        Vec3::from(s),
        rng.random_range(0.45..0.85),
        Rgb::new(rng.random_range(0.2..0.8), rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)),
        Rgb::repeat(rng.random_range(0.04..0.3)),
        rng.random_range(0.3..0.8),
    )
}

/// Ten particles in front of a 32x32 camera under the studio environment,
/// with a reference rendered from a perturbed copy of the scene.
pub fn gradcheck_scene() -> Result<GradcheckScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let particles: Vec<_> = (0..10).map(|_| random_particle(&mut rng)).collect();
    let scene = Scene::new(particles, Aabb::cube(1.5))?;
    let camera = Camera::look_at(Vec3::new(0.3, 0.4, -3.0), Vec3::zeros(), Vec3::y(), 0.6, 32, 32)?;
    let env = EnvironmentLight::new(studio_environment(64, 32))?;
    let options = RenderOptions {
        background: Rgb::new(0.1, 0.12, 0.15),
        ..RenderOptions::default()
    };
    let mut target = scene.clone();
    for p in &mut target.particles {
        p.position += Vec3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), 0.0);
        p.diffuse_albedo = p.diffuse_albedo.map(|c| (c + rng.random_range(-0.15..0.15)).clamp(0.0, 1.0));
    }
    let reference = render_unified(&target, &camera, &env, None, &options, RenderMode::Infer)?.deferred;
    Ok(GradcheckScene {
        scene,
        camera,
        env,
        options,
        reference,
    })
}

/// `n x n` grid of coplanar disks on the plane `y = height` covering
/// `[-half, half]` in x and z, all facing +y.
pub fn sheet(n: usize, half: f64, height: f64, thickness: f64, opacity: f64, albedo: Rgb) -> Scene {
    let step = 2.0 * half / n as f64;
    let rotation = orient_z_to(&Vec3::y());
    let mut particles = Vec::with_capacity(n * n);
    for i in 0..n {
        for k in 0..n {
            let x = -half + (i as f64 + 0.5) * step;
            let z = -half + (k as f64 + 0.5) * step;
            particles.push(GaussianParticle::new(
                Vec3::new(x, height, z),
                rotation,
                Vec3::new(0.75 * step, 0.75 * step, thickness),
                opacity,
                albedo,
                Rgb::zeros(),
                0.5,
            ));
        }
    }
    Scene::from_particles(particles, step)
}

/// Dense opaque floor just below the origin, filling the lower half-space as
/// seen from a probe at the origin. Bounds are `[-1, 1]^3`.
pub fn half_space_scene() -> Scene {
    let mut s = sheet(80, 2.0, -0.005, 0.001, 0.99, Rgb::repeat(0.5));
    s.bounds = Aabb::new(Vec3::new(-2.0, -1.0, -2.0), Vec3::new(2.0, 1.0, 2.0));
    s
}

/// Closed opaque spherical shell of radius `radius` centered at the origin.
pub fn shell_scene(radius: f64) -> Scene {
    let mut s = disk_sphere(3000, radius, |_| SurfaceMaterial {
        albedo: Rgb::repeat(0.5),
        specular: Rgb::zeros(),
        roughness: 0.5,
        opacity: 0.99,
    });
    for p in &mut s.particles {
        p.log_scale.x += 0.4f64.ln_1p();
        p.log_scale.y += 0.4f64.ln_1p();
    }
    s.bounds = Aabb::cube(radius + 0.3);
    s
}

/// Smoothly varying albedo on the unit sphere used by the Lambertian sphere.
pub fn sphere_albedo(p: &Vec3) -> Rgb {
    let n = p.normalize();
    Rgb::new(
        0.55 + 0.3 * n.y,
        0.45 + 0.25 * (2.0 * n.x).sin() * n.z.abs().sqrt(),
        0.4 + 0.3 * n.z,
    )
}

/// Posed images of a known scene under a known environment.
pub struct SyntheticDataset {
    pub scene: Scene,
    pub env: EnvMap,
    pub options: RenderOptions,
    pub views: Vec<(Camera, Image)>,
}

/// Camera positions of the sphere dataset: evenly spread azimuths, alternating
/// elevations.
pub fn sphere_cameras(count: usize, size: usize) -> Result<Vec<Camera>> {
    (0..count)
        .map(|k| {
            let az = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
            let el = if k % 2 == 0 { 0.35 } else { -0.2 };
            orbit_camera(az, el, 4.0, 0.62, size)
        })
        .collect()
}

/// Cameras on the same orbit as [`sphere_cameras`] at azimuths between the
/// training views, at a middle elevation.
pub fn held_out_cameras(count: usize, size: usize) -> Result<Vec<Camera>> {
    (0..count)
        .map(|k| {
            let az = 2.0 * std::f64::consts::PI * (k as f64 + 0.37) / count as f64;
            orbit_camera(az, 0.1, 4.0, 0.62, size)
        })
        .collect()
}

/// Diffuse sphere of radius 1 made of `particles` disks with [`sphere_albedo`], rendered without the
/// specular lobe from `views` cameras at `size x size`.
pub fn lambertian_sphere_dataset(particles: usize, views: usize, size: usize) -> Result<SyntheticDataset> {
    let scene = disk_sphere(particles, 1.0, |n| SurfaceMaterial {
        albedo: sphere_albedo(n),
        specular: Rgb::zeros(),
        roughness: 0.5,
        opacity: 0.99,
    });
    let env = studio_environment(32, 16);
    let light = EnvironmentLight::new(env.clone())?;
    let options = RenderOptions {
        model: ShadingModel { specular: false },
        ..RenderOptions::default()
    };
    let views = sphere_cameras(views, size)?
        .into_iter()
        .map(|cam| {
            let img = render_unified(&scene, &cam, &light, None, &options, RenderMode::Infer)?.deferred;
            Ok((cam, img))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticDataset {
        scene,
        env,
        options,
        views,
    })
}

/// Stage-one-only schedule for the sphere round trip: fixed known lighting, no
/// probes, and rates raised over the long-run defaults so a few thousand
/// iterations converge.
pub fn sphere_round_trip_config(iterations: usize, options: RenderOptions) -> TrainConfig {
    TrainConfig {
        stage1_iterations: iterations,
        stage2_iterations: 0,
        learn_environment: false,
        probes: None,
        rates: LearningRates {
            position: 4e-4,
            position_final: 4e-6,
            rotation: 1e-2,
            scale: 1e-2,
            opacity: 0.05,
            ..LearningRates::default()
        },
        options,
        ..TrainConfig::default()
    }
}

/// `count` small isotropic-ish particles near the unit sphere, jittered from
/// a Fibonacci layout, as the starting point of reconstruction.
pub fn jittered_sphere_init(count: usize, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spacing = (4.0 * std::f64::consts::PI / count as f64).sqrt();
    let particles = fibonacci_sphere(count)
        .into_iter()
        .map(|n| {
            let jitter = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let position = n * (1.0 + 0.05 * rng.random_range(-1.0..1.0)) + jitter * (0.15 * spacing);
            let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let s = 0.5 * spacing;
            GaussianParticle::new(
                position,
                quat_from_axis_angle(&axis, rng.random_range(0.0..std::f64::consts::PI)),
                Vec3::new(s * rng.random_range(0.8..1.2), s * rng.random_range(0.8..1.2), s * rng.random_range(0.8..1.2)),
                0.5,
                Rgb::repeat(0.5),
                Rgb::repeat(0.04),
                0.5,
            )
        })
        .collect();
    let mut scene = Scene::from_particles(particles, 0.3);
    scene.bounds = Aabb::cube(1.5);
    scene
}

/// Reconstruction error of a unit-sphere scene against the analytic sphere.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SphereErrors {
    /// Mean absolute albedo error per channel against [`sphere_albedo`].
    pub albedo_mae: f64,
    /// Mean angle between rendered and analytic normals, in degrees.
    pub normal_mae_deg: f64,
    pub pixels: usize,
}

/// Compares the G-buffers of `scene` with the analytic unit sphere over pixels
/// whose ray hits the sphere and whose accumulated opacity exceeds one half.
pub fn sphere_errors(scene: &Scene, cameras: &[Camera], opts: &RenderOptions) -> Result<SphereErrors> {
    let mut albedo = 0.0;
    let mut normal = 0.0;
    let mut pixels = 0usize;
    for cam in cameras {
        let g = render_gbuffer(scene, cam, opts)?;
        let o = cam.center();
        for j in 0..cam.height {
            for i in 0..cam.width {
                let d = cam.pixel_direction(i, j);
                let b = o.dot(&d);
                let disc = b * b - (o.norm_squared() - 1.0);
                if disc <= 0.0 {
                    continue;
                }
                let k = j * cam.width + i;
                let Some(attr) = g.attributes(k) else { continue };
                if attr.alpha <= 0.5 {
                    continue;
                }
                let hit = o + d * (-b - disc.sqrt());
                let truth = sphere_albedo(&hit);
                albedo += (attr.albedo - truth).abs().sum() / 3.0;
                normal += attr.normal.dot(&hit.normalize()).clamp(-1.0, 1.0).acos().to_degrees();
                pixels += 1;
            }
        }
    }
    if pixels == 0 {
        return Err(Error::Contract("no pixel sees both the sphere and the reconstruction".into()));
    }
    Ok(SphereErrors {
        albedo_mae: albedo / pixels as f64,
        normal_mae_deg: normal / pixels as f64,
        pixels,
    })
}
