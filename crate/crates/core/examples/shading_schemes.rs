//! Forward versus deferred split-sum shading on a glossy and a rough sphere,
//! both measured against the Monte-Carlo surface integral.
//!
//! `cargo run --release --example shading_schemes -- [samples]`

use splatir::oracle::{compare_schemes, OracleConfig};
use splatir::render::RenderOptions;
use splatir::scenes::{glossy_sphere, orbit_camera, rough_sphere, studio_environment};
use splatir::shading::EnvironmentLight;

fn main() -> splatir::Result<()> {
    let samples = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4096);
    let light = EnvironmentLight::new(studio_environment(128, 64))?;
    let cam = orbit_camera(0.4, 0.3, 4.0, 0.62, 64)?;
    let opts = RenderOptions::default();
    let cfg = OracleConfig {
        samples,
        ..OracleConfig::default()
    };
    for (name, scene) in [("glossy", glossy_sphere()), ("rough", rough_sphere())] {
        let r = compare_schemes(&scene, &cam, &light, &opts, &cfg)?;
        println!(
            "{name}: forward {:.2} dB  deferred {:.2} dB  gap {:+.2} dB  highlight MAE {:.3} / {:.3}  peak {:.2} / {:.2} / truth {:.2}",
            r.forward.psnr, r.deferred.psnr, r.gap_db, r.forward.highlight_mae, r.deferred.highlight_mae,
            r.forward.peak, r.deferred.peak, r.truth_peak
        );
    }
    Ok(())
}
