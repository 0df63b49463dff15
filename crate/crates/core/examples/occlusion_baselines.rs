//! Bit-cubemap probes versus SH-2 occlusion against ray-traced AO, at probe
//! centers (representation error only) and at arbitrary points (plus
//! interpolation error).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatir::math::Vec3;
use splatir::probes::{bake_probes, ProbeGrid, ProbeGridConfig, RayScene, ShOcclusion};
use splatir::render::RenderOptions;
use splatir::scene::Scene;
use splatir::scenes::{half_space_scene, shell_scene};

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let l = v.norm();
        if l > 0.1 && l <= 1.0 {
            return v / l;
        }
    }
}

fn errors(grid: &ProbeGrid, sh: &ShOcclusion, rays: &RayScene, pts: &[(Vec3, Vec3)], samples: usize) -> (f64, f64) {
    let (mut eb, mut es) = (0.0, 0.0);
    for (k, (x, n)) in pts.iter().enumerate() {
        let truth = rays.ambient_occlusion(x, n, 2048, 1000 + k as u64, grid.distance_threshold);
        eb += (grid.query_ao(x, n, samples, k as u64).value - truth).abs();
        es += (sh.query_ao(x, n).value - truth).abs();
    }
    (eb / pts.len() as f64, es / pts.len() as f64)
}

fn run(name: &str, scene: &Scene, res: [usize; 3], off: Vec<(Vec3, Vec3)>, rng: &mut ChaCha8Rng) -> splatir::Result<()> {
    let mut cfg = ProbeGridConfig::new(res, scene.bounds);
    cfg.bake_indirect = false;
    let grid = bake_probes(scene, &cfg, None, &RenderOptions::default())?;
    let sh = ShOcclusion::from_grid(&grid, 2)?;
    let rays = RayScene::new(scene);
    let on: Vec<(Vec3, Vec3)> = (0..grid.probe_count())
        .filter(|&p| (0..grid.texels_per_probe()).any(|k| grid.get_bit(p * grid.texels_per_probe() + k)))
        .map(|p| (grid.probe_center(p), random_unit(rng)))
        .take(150)
        .collect();
    for samples in [64, 256, 1024] {
        let (b, s) = errors(&grid, &sh, &rays, &on, samples);
        let (bo, so) = errors(&grid, &sh, &rays, &off, samples);
        println!("{name} spp {samples}: lattice ({}) bit {b:.4} sh {s:.4} | free ({}) bit {bo:.4} sh {so:.4}", on.len(), off.len());
    }
    Ok(())
}

fn main() -> splatir::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let off: Vec<_> = (0..100)
        .map(|_| {
            let x = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(0.01..0.6), rng.random_range(-1.0..1.0));
            (x, random_unit(&mut rng))
        })
        .collect();
    run("half-space", &half_space_scene(), [9, 5, 9], off, &mut rng)?;
    let off: Vec<_> = (0..100)
        .map(|_| (random_unit(&mut rng) * rng.random_range(0.0..0.85), random_unit(&mut rng)))
        .collect();
    run("shell", &shell_scene(1.0), [8, 8, 8], off, &mut rng)?;
    Ok(())
}
