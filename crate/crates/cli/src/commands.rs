use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use splatir::diff::{finite_diff_check, Problem};
use splatir::img::Image;
use splatir::io::checkpoint::{encode_checkpoint, read_checkpoint, write_checkpoint};
use splatir::io::dataset::{load_dataset, write_split, Split};
use splatir::io::env_cache::EnvCache;
use splatir::io::ply::{read_ply, write_ply};
use splatir::io::probe_cache::{encode_probes, read_probes, write_probes};
use splatir::io::report::write_loss_log;
use splatir::io::{load_environment, read_image, reference_config, write_image, Settings};
use splatir::math::{Rgb, Vec3};
use splatir::metrics::metrics;
use splatir::optimize::{train, Checkpoint, Stage};
use splatir::oracle::{compare_schemes, mc_render, Branch};
use splatir::probes::{bake_probes, ProbeGrid};
use splatir::render::{camera_normals, render_unified, RenderMode};
use splatir::scene::{Camera, Scene};
use splatir::scenes;
use splatir::shading::brdf::BrdfLut;
use splatir::shading::{EnvMap, EnvironmentLight};
use splatir::{Error, Result};

use crate::{Cli, Command, RenderArgs, EXIT_CHECK_FAILED, THREADS_ENV};

pub fn run(cli: Cli) -> Result<u8> {
    let mut settings = match &cli.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    if let Some(s) = cli.seed {
        settings.seed = s;
    }
    settings.threads = thread_count(cli.threads, settings.threads)?;
    if settings.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(settings.threads)
            .build_global()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    }
    let s = &settings;
    match cli.command {
        Command::GenConfig { out } => gen_config(out.as_deref()),
        Command::Synth {
            out,
            particles,
            views,
            test_views,
            size,
        } => synth(&out, particles, views, test_views, size),
        Command::Train {
            data,
            env,
            out,
            init,
            init_particles,
            stage1,
            stage2,
        } => train_cmd(s, &data, &env, &out, init.as_deref(), init_particles, stage1, stage2),
        Command::Bake { checkpoint, out } => bake(s, &checkpoint, &out),
        Command::Render(args) => render(s, &args, None),
        Command::Relight { render: args, env } => render(s, &args, Some(&env)),
        Command::Metrics {
            rendered,
            reference,
            normals_est,
            normals_ref,
        } => metrics_cmd(&rendered, &reference, normals_est.as_deref().zip(normals_ref.as_deref())),
        Command::Gradcheck { report, min_pass } => gradcheck(s, report.as_deref(), min_pass),
        Command::Oracle {
            checkpoint,
            env,
            out,
            branch,
            size,
            azimuth,
            elevation,
        } => oracle(s, checkpoint.as_deref(), env.as_deref(), &out, &branch, size, azimuth, elevation),
        Command::CompareSchemes {
            checkpoint,
            env,
            size,
            azimuth,
            elevation,
        } => compare(s, checkpoint.as_deref(), env.as_deref(), size, azimuth, elevation),
    }
}

/// Flag, then environment variable, then config file.
fn thread_count(flag: Option<usize>, config: usize) -> Result<usize> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("{THREADS_ENV}='{v}' is not a thread count"))),
        Err(_) => Ok(config),
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(|e| Error::io(path, e))?))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Prints `summary` to stdout and, if `dir` is given, writes it as `summary.json` there.
fn emit(summary: &Value, dir: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(summary).expect("summary serializes") + "\n";
    if let Some(d) = dir {
        let p = d.join("summary.json");
        std::fs::write(&p, &text).map_err(|e| Error::io(&p, e))?;
    }
    print!("{text}");
    Ok(())
}

/// JSON has no infinity; identical images report `"inf"`.
fn finite_or_string(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(v.to_string())
    }
}

fn light_for(s: &Settings, env: EnvMap) -> Result<EnvironmentLight> {
    let cfg = s.prefilter_config();
    match s.cache_dir() {
        Some(dir) => EnvCache::new(dir).light(env, &cfg),
        None => EnvironmentLight::with_config(env, cfg, BrdfLut::shared()),
    }
}

/// Particles from a `.ply` file or a checkpoint (any other extension).
fn load_scene(path: &Path) -> Result<(Scene, Option<EnvMap>)> {
    let is_ply = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("ply"));
    if is_ply {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok((read_ply(BufReader::new(f))?, None))
    } else {
        let c = read_checkpoint(path)?;
        Ok((c.scene, Some(c.env)))
    }
}

fn write_scene_ply(path: &Path, scene: &Scene) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_ply(BufWriter::new(f), scene).map_err(|e| Error::io(path, e))
}

fn gen_config(out: Option<&Path>) -> Result<u8> {
    let text = reference_config();
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e))?,
        None => print!("{text}"),
    }
    Ok(0)
}

fn synth(out: &Path, particles: usize, views: usize, test_views: usize, size: usize) -> Result<u8> {
    if views == 0 || size == 0 || particles == 0 {
        return Err(Error::InvalidParameter("particles, views and size must be positive".into()));
    }
    let ds = scenes::lambertian_sphere_dataset(particles, views, size)?;
    create_dir(out)?;
    write_split(out, Split::Train, &ds.views, "pfm")?;
    if test_views > 0 {
        let light = EnvironmentLight::new(ds.env.clone())?;
        let test = scenes::held_out_cameras(test_views, size)?
            .into_iter()
            .map(|cam| {
                let img = render_unified(&ds.scene, &cam, &light, None, &ds.options, RenderMode::Infer)?.deferred;
                Ok((cam, img))
            })
            .collect::<Result<Vec<_>>>()?;
        write_split(out, Split::Test, &test, "pfm")?;
    }
    write_image(&out.join("env.pfm"), &ds.env.to_image())?;
    let truth = Checkpoint {
        scene: ds.scene.clone(),
        env: ds.env.clone(),
        stage: Stage::One,
        iteration: 0,
        optimizer: None,
    };
    write_checkpoint(&out.join("truth.ckpt"), &truth)?;
    write_scene_ply(&out.join("truth.ply"), &ds.scene)?;
    emit(
        &json!({
            "command": "synth",
            "particles": ds.scene.len(),
            "train_views": views,
            "test_views": test_views,
            "size": size,
            "truth_sha256": sha256_hex(&encode_checkpoint(&truth)),
        }),
        Some(out),
    )?;
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn train_cmd(
    s: &Settings,
    data: &Path,
    env_path: &Path,
    out: &Path,
    init: Option<&Path>,
    init_particles: usize,
    stage1: Option<usize>,
    stage2: Option<usize>,
) -> Result<u8> {
    let mut cfg = s.train_config();
    if let Some(n) = stage1 {
        cfg.stage1_iterations = n;
    }
    if let Some(n) = stage2 {
        cfg.stage2_iterations = n;
    }
    cfg.checkpoint_dir = Some(out.to_path_buf());
    let (manifest, images) = load_dataset(data, &cfg.options.background)?;
    let views: Vec<(Camera, Image)> = manifest
        .frames
        .iter()
        .zip(images)
        .filter(|(f, _)| f.split == Split::Train)
        .map(|(f, img)| (f.camera.clone(), img))
        .collect();
    let env = load_environment(env_path)?;
    let scene = match init {
        Some(p) => load_scene(p)?.0,
        None => scenes::jittered_sphere_init(init_particles, s.seed),
    };
    create_dir(out)?;
    let result = train(&scene, &views, &env, &cfg)?;
    let ckpt = Checkpoint {
        scene: result.scene,
        env: result.env,
        stage: if cfg.stage2_iterations > 0 { Stage::Two } else { Stage::One },
        iteration: (cfg.stage1_iterations + cfg.stage2_iterations) as u64,
        optimizer: Some(result.optimizer),
    };
    write_checkpoint(&out.join("checkpoint.ckpt"), &ckpt)?;
    write_scene_ply(&out.join("scene.ply"), &ckpt.scene)?;
    write_image(&out.join("env.pfm"), &ckpt.env.to_image())?;
    write_loss_log(&out.join("loss.tsv"), &result.log)?;
    let probes = match &result.probes {
        Some(g) => {
            write_probes(&out.join("probes.bin"), g)?;
            json!(sha256_hex(&encode_probes(g)))
        }
        None => Value::Null,
    };
    let last = result.log.last();
    emit(
        &json!({
            "command": "train",
            "seed": s.seed,
            "views": views.len(),
            "stage1_iterations": cfg.stage1_iterations,
            "stage2_iterations": cfg.stage2_iterations,
            "particles_initial": scene.len(),
            "particles_final": ckpt.scene.len(),
            "final_loss": last.map(|r| r.loss.total),
            "checkpoint_sha256": sha256_hex(&encode_checkpoint(&ckpt)),
            "probes_sha256": probes,
        }),
        Some(out),
    )?;
    Ok(0)
}

fn bake(s: &Settings, checkpoint: &Path, out: &Path) -> Result<u8> {
    let (scene, env) = load_scene(checkpoint)?;
    let spec = s.probe_spec();
    let cfg = spec.grid_config(&scene.bounds);
    let light = match (&env, cfg.bake_indirect) {
        (Some(e), true) => Some(light_for(s, e.clone())?),
        _ => None,
    };
    let grid = bake_probes(&scene, &cfg, light.as_ref(), &s.render_options())?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_probes(out, &grid)?;
    let set = grid.bits.iter().map(|b| b.count_ones() as u64).sum::<u64>();
    let total = (grid.probe_count() * grid.texels_per_probe()) as u64;
    emit(
        &json!({
            "command": "bake",
            "probes": grid.probe_count(),
            "resolution": grid.resolution,
            "face_resolution": grid.face_resolution,
            "distance_threshold": grid.distance_threshold,
            "bit_bytes": grid.bits.len(),
            "occluded_fraction": set as f64 / total as f64,
            "indirect": light.is_some(),
            "sha256": file_digest(out)?,
        }),
        None,
    )?;
    Ok(0)
}

/// Cameras and optional reference images to render.
fn render_targets(args: &RenderArgs, background: &Rgb) -> Result<Vec<(Camera, Option<Image>)>> {
    match &args.data {
        Some(dir) => {
            let (manifest, images) = load_dataset(dir, background)?;
            let has_test = manifest.frames.iter().any(|f| f.split == Split::Test);
            let wanted = if has_test { Split::Test } else { Split::Train };
            Ok(manifest
                .frames
                .into_iter()
                .zip(images)
                .filter(|(f, _)| f.split == wanted)
                .map(|(f, img)| (f.camera, Some(img)))
                .collect())
        }
        None => {
            if args.views == 0 || args.size == 0 {
                return Err(Error::InvalidParameter("views and size must be positive".into()));
            }
            Ok(scenes::held_out_cameras(args.views, args.size)?
                .into_iter()
                .map(|c| (c, None))
                .collect())
        }
    }
}

fn render(s: &Settings, args: &RenderArgs, relight: Option<&Path>) -> Result<u8> {
    let (scene, own_env) = load_scene(&args.checkpoint)?;
    let env = match relight {
        Some(p) => load_environment(p)?,
        None => own_env.ok_or_else(|| {
            Error::InvalidParameter("a PLY carries no environment; use `relight --env` instead".into())
        })?,
    };
    let light = light_for(s, env)?;
    let probes: Option<ProbeGrid> = args.probes.as_deref().map(read_probes).transpose()?;
    let opts = s.render_options();
    create_dir(&args.out)?;
    let mut views = Vec::new();
    for (k, (cam, reference)) in render_targets(args, &opts.background)?.into_iter().enumerate() {
        let rec = render_unified(&scene, &cam, &light, probes.as_ref(), &opts, RenderMode::Infer)?;
        let img = &rec.deferred;
        let pfm = args.out.join(format!("view_{k:03}.pfm"));
        write_image(&pfm, img)?;
        write_image(&args.out.join(format!("view_{k:03}.png")), img)?;
        let normals = camera_normals(&rec.gbuffer, &cam);
        let nimg = Image::from_pixels(cam.width, cam.height, normals.iter().map(|n| Rgb::new(n.x, n.y, n.z)).collect())?;
        write_image(&args.out.join(format!("normals_{k:03}.pfm")), &nimg)?;
        let mut entry = json!({
            "view": k,
            "width": cam.width,
            "height": cam.height,
            "pfm_sha256": file_digest(&pfm)?,
        });
        if let Some(r) = reference {
            let m = metrics(img, &r, None)?;
            entry["psnr"] = finite_or_string(m.psnr);
            entry["ssim"] = json!(m.ssim);
        }
        views.push(entry);
    }
    emit(
        &json!({
            "command": if relight.is_some() { "relight" } else { "render" },
            "particles": scene.len(),
            "probes": probes.is_some(),
            "views": views,
        }),
        Some(&args.out),
    )?;
    Ok(0)
}

fn read_normals(path: &Path) -> Result<Vec<Vec3>> {
    Ok(read_image(path, &Rgb::zeros())?
        .pixels
        .iter()
        .map(|p| Vec3::new(p.x, p.y, p.z))
        .collect())
}

fn metrics_cmd(rendered: &Path, reference: &Path, normals: Option<(&Path, &Path)>) -> Result<u8> {
    let a = read_image(rendered, &Rgb::zeros())?;
    let b = read_image(reference, &Rgb::zeros())?;
    let n = normals.map(|(e, r)| Ok::<_, Error>((read_normals(e)?, read_normals(r)?))).transpose()?;
    let m = metrics(&a, &b, n.as_ref().map(|(e, r)| (e.as_slice(), r.as_slice(), None)))?;
    emit(
        &json!({
            "command": "metrics",
            "psnr": finite_or_string(m.psnr),
            "ssim": m.ssim,
            "normal_mae_deg": m.normal_mae_deg,
        }),
        None,
    )?;
    Ok(0)
}

fn gradcheck(s: &Settings, report: Option<&Path>, min_pass: f64) -> Result<u8> {
    let g = scenes::gradcheck_scene()?;
    let loss = s.train_config().loss;
    let problem = Problem {
        scene: &g.scene,
        camera: &g.camera,
        env: &g.env,
        probes: None,
        options: &g.options,
        reference: &g.reference,
        loss: &loss,
    };
    let r = finite_diff_check(&problem, &s.gradcheck_config())?;
    if let Some(p) = report {
        let f = File::create(p).map_err(|e| Error::io(p, e))?;
        r.write_tsv(BufWriter::new(f)).map_err(|e| Error::io(p, e))?;
    }
    let excluded = r.entries.iter().filter(|e| e.excluded.is_some()).count();
    emit(
        &json!({
            "command": "gradcheck",
            "particles": g.scene.len(),
            "parameters": r.entries.len(),
            "checked": r.checked,
            "excluded": excluded,
            "passed": r.passed,
            "pass_fraction": r.pass_fraction,
            "median_rel_error": r.median(),
            "step": r.step,
            "tolerance": r.tolerance,
        }),
        None,
    )?;
    Ok(if r.pass_fraction >= min_pass { 0 } else { EXIT_CHECK_FAILED })
}

/// Scene and environment given on the command line, or the glossy sphere in
/// the studio environment.
fn scene_and_env(checkpoint: Option<&Path>, env: Option<&Path>) -> Result<(Scene, EnvMap)> {
    let (scene, own) = match checkpoint {
        Some(p) => load_scene(p)?,
        None => (scenes::glossy_sphere(), None),
    };
    let env = match (env, own) {
        (Some(p), _) => load_environment(p)?,
        (None, Some(e)) => e,
        (None, None) => scenes::studio_environment(128, 64),
    };
    Ok((scene, env))
}

#[allow(clippy::too_many_arguments)]
fn oracle(
    s: &Settings,
    checkpoint: Option<&Path>,
    env: Option<&Path>,
    out: &Path,
    branch: &str,
    size: usize,
    azimuth: f64,
    elevation: f64,
) -> Result<u8> {
    let branch = Branch::parse(branch)?;
    let (scene, env) = scene_and_env(checkpoint, env)?;
    let cam = scenes::orbit_camera(azimuth, elevation, 4.0, 0.62, size)?;
    let cfg = s.oracle_config();
    let img = mc_render(&scene, &cam, &env, &s.render_options(), &cfg, branch)?;
    create_dir(out)?;
    let pfm = out.join("oracle.pfm");
    write_image(&pfm, &img.image)?;
    write_image(&out.join("oracle.png"), &img.image)?;
    write_image(&out.join("oracle_stderr.pfm"), &img.std_error)?;
    let mean_se = img.std_error.pixels.iter().map(|p| p.sum() / 3.0).sum::<f64>() / img.std_error.len() as f64;
    emit(
        &json!({
            "command": "oracle",
            "branch": format!("{branch:?}").to_lowercase(),
            "samples": cfg.samples,
            "sampler": cfg.sampler.name(),
            "seed": cfg.seed,
            "particles": scene.len(),
            "size": size,
            "mean_std_error": mean_se,
            "pfm_sha256": file_digest(&pfm)?,
        }),
        Some(out),
    )?;
    Ok(0)
}

fn compare(
    s: &Settings,
    checkpoint: Option<&Path>,
    env: Option<&Path>,
    size: usize,
    azimuth: f64,
    elevation: f64,
) -> Result<u8> {
    let (scene, env) = scene_and_env(checkpoint, env)?;
    let light = light_for(s, env)?;
    let cam = scenes::orbit_camera(azimuth, elevation, 4.0, 0.62, size)?;
    let report = compare_schemes(&scene, &cam, &light, &s.render_options(), &s.oracle_config())?;
    let mut v = serde_json::to_value(&report).expect("report serializes");
    v["command"] = json!("compare-schemes");
    v["samples"] = json!(s.oracle_samples);
    v["seed"] = json!(s.seed);
    for k in ["forward", "deferred"] {
        let p = v[k]["psnr"].as_f64().unwrap_or(f64::INFINITY);
        v[k]["psnr"] = finite_or_string(p);
    }
    emit(&v, None)?;
    Ok(0)
}
