//! Reconstructs the Lambertian sphere from 16 views and reports the errors.
//!
//! `cargo run --release --example sphere_round_trip -- [iterations] [seed]`

use std::time::Instant;

use splatir::metrics::psnr;
use splatir::optimize::train;
use splatir::render::{render_unified, RenderMode};
use splatir::scenes::{
    held_out_cameras, jittered_sphere_init, lambertian_sphere_dataset, sphere_errors, sphere_round_trip_config,
};
use splatir::shading::EnvironmentLight;

fn main() -> splatir::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations = args.next().and_then(|s| s.parse().ok()).unwrap_or(2000);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let data = lambertian_sphere_dataset(500, 16, 64)?;
    let init = jittered_sphere_init(500, seed);
    let cfg = sphere_round_trip_config(iterations, data.options.clone());

    let start = Instant::now();
    let out = train(&init, &data.views, &data.env, &cfg)?;
    let elapsed = start.elapsed().as_secs_f64();

    let light = EnvironmentLight::new(data.env.clone())?;
    let cams = held_out_cameras(8, 64)?;
    let mut total = 0.0;
    for cam in &cams {
        let truth = render_unified(&data.scene, cam, &light, None, &data.options, RenderMode::Infer)?.deferred;
        let got = render_unified(&out.scene, cam, &light, None, &data.options, RenderMode::Infer)?.deferred;
        total += psnr(&got.to_display(), &truth.to_display())?;
    }
    let errs = sphere_errors(&out.scene, &cams, &data.options)?;
    println!(
        "iterations {iterations}  time {elapsed:.1}s  particles {}  albedo MAE {:.4}  normal MAE {:.2} deg  PSNR {:.2} dB",
        out.scene.len(),
        errs.albedo_mae,
        errs.normal_mae_deg,
        total / cams.len() as f64
    );
    Ok(())
}
