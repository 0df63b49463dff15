//! Prefiltered specular lookups against a GGX importance-sampled estimate of
//! the same lobe integral, on the two-tone environment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatir::math::Vec3;
use splatir::scenes::two_tone_environment;
use splatir::shading::brdf::{ggx_alpha, sample_ggx_half};
use splatir::shading::brdf::BrdfLut;
use splatir::shading::prefilter::PrefilterConfig;
use splatir::shading::EnvironmentLight;

fn main() -> splatir::Result<()> {
    let env = two_tone_environment(128, 64);
    let mips: usize = std::env::args().nth(1).map_or(5, |a| a.parse().unwrap());
    let cfg = PrefilterConfig { mip_count: mips, ..PrefilterConfig::default() };
    let start = std::time::Instant::now();
    let light = EnvironmentLight::with_config(env.clone(), cfg, BrdfLut::shared())?;
    println!("prefilter {:?}", start.elapsed());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for r in [0.1, 0.15, 0.2, 0.3, 0.35, 0.5, 0.7, 0.9] {
        let alpha = ggx_alpha(r);
        for elev in [-80.0f64, -60.0, -20.0, -5.0, 0.0, 5.0, 20.0, 60.0, 90.0] {
            let e = elev.to_radians();
            let n = Vec3::new(e.cos(), e.sin(), 0.3 * e.cos()).normalize();
            let (mut num, mut den) = (0.0, 0.0);
            for _ in 0..100_000 {
                let h = sample_ggx_half(&n, alpha, rng.random(), rng.random());
                let l = h * (2.0 * n.dot(&h)) - n;
                let nl = n.dot(&l);
                if nl > 0.0 {
                    num += env.lookup(&l).x * nl;
                    den += nl;
                }
            }
            let mc = num / den;
            let split = light.specular(&n, r).x;
            println!("r {r} elev {elev:>5}: split {split:.4} mc {mc:.4} rel {:.4}", (split - mc).abs() / mc);
        }
    }
    Ok(())
}
