use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use splatir::io::ply::write_ply;
use splatir::io::{load_environment, read_image, write_image, Settings};
use splatir::math::{Rgb, Vec3};
use splatir::scenes::{self, SurfaceMaterial};
use splatir::shading::brdf::BrdfLut;
use splatir::shading::{EnvMap, EnvironmentLight};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_splatir"));
    c.env_remove("SPLATIR_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> serde_json::Value {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is json")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.toml");
    std::fs::write(
        &p,
        "probe_resolution_x = 3\nprobe_resolution_y = 3\nprobe_resolution_z = 3\nprobe_face_resolution = 4\n\
         oracle_samples = 8\nspecular_source_width = 32\nmip_count = 5\n",
    )
    .unwrap();
    p
}

fn synth(dir: &Path) -> PathBuf {
    let ds = dir.join("ds");
    ok(&[
        "synth", "--out", s(&ds), "--particles", "120", "--views", "3", "--test-views", "2", "--size", "16",
    ]);
    ds
}

#[test]
fn unknown_flag_prints_usage_and_fails() {
    let out = run(&["render", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn failures_exit_with_their_category() {
    let t = tempfile::tempdir().unwrap();
    let missing = t.path().join("missing.ckpt");
    assert_eq!(run(&["bake", "--checkpoint", s(&missing), "--out", "x"]).status.code(), Some(4));

    let bad = t.path().join("bad.toml");
    std::fs::write(&bad, "no_such_key = 1\n").unwrap();
    assert_eq!(run(&["gen-config", "--config", s(&bad)]).status.code(), Some(3));

    let garbage = t.path().join("garbage.ckpt");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    let out = run(&["render", "--checkpoint", s(&garbage), "--out", s(t.path())]);
    assert_eq!(out.status.code(), Some(5));

    let out = bin().env("SPLATIR_THREADS", "many").arg("gen-config").output().unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn generated_config_is_accepted_and_complete() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("ref.toml");
    let out = run(&["gen-config", "--out", s(&cfg)]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&cfg).unwrap();
    assert_eq!(Settings::parse(&text).unwrap(), Settings::default());
    for key in ["stage1_iterations", "lambda_normal", "probe_face_resolution", "mip_count", "oracle_samples"] {
        assert!(text.contains(key), "{key}");
    }
    assert_eq!(run(&["gen-config", "--config", s(&cfg)]).stdout, text.as_bytes());
}

#[test]
fn render_writes_png_and_pfm() {
    let t = tempfile::tempdir().unwrap();
    let ds = synth(t.path());
    let out = t.path().join("render");
    let cfg = small_config(t.path());
    let v = ok(&[
        "render", "--checkpoint", s(&ds.join("truth.ckpt")), "--data", s(&ds), "--out", s(&out), "--config", s(&cfg),
    ]);
    let views = v["views"].as_array().unwrap();
    assert_eq!(views.len(), 2);
    for k in 0..2 {
        assert!(out.join(format!("view_{k:03}.png")).exists());
        let img = read_image(&out.join(format!("view_{k:03}.pfm")), &Rgb::zeros()).unwrap();
        assert_eq!((img.width, img.height), (16, 16));
        assert!(views[k]["psnr"].as_f64().unwrap() > 25.0, "{}", views[k]);
    }
}

#[test]
fn relit_images_follow_the_irradiance_ratio() {
    let t = tempfile::tempdir().unwrap();
    let albedo = Rgb::new(0.6, 0.5, 0.4);
    let scene = scenes::disk_sphere(400, 1.0, |_| SurfaceMaterial {
        albedo,
        specular: Rgb::zeros(),
        roughness: 0.5,
        opacity: 0.99,
    });
    let ply = t.path().join("scene.ply");
    write_ply(std::fs::File::create(&ply).unwrap(), &scene).unwrap();
    let env_a = t.path().join("a.pfm");
    let env_b = t.path().join("b.pfm");
    write_image(&env_a, &scenes::studio_environment(32, 16).to_image()).unwrap();
    write_image(
        &env_b,
        &EnvMap::from_fn(32, 16, |d| Rgb::new(0.3 + d.y.max(0.0), 0.6 + 0.4 * d.x.abs(), 0.2 + 0.5 * d.z.max(0.0)))
            .to_image(),
    )
    .unwrap();
    let cfg = t.path().join("diffuse.toml");
    std::fs::write(&cfg, "specular = false\n").unwrap();
    let render = |env: &Path, out: &Path| {
        ok(&[
            "relight", "--checkpoint", s(&ply), "--env", s(env), "--out", s(out), "--views", "1", "--size", "24",
            "--config", s(&cfg),
        ]);
        read_image(&out.join("view_000.pfm"), &Rgb::zeros()).unwrap()
    };
    let (out_a, out_b) = (t.path().join("ra"), t.path().join("rb"));
    let (img_a, img_b) = (render(&env_a, &out_a), render(&env_b, &out_b));
    let normals = read_image(&out_a.join("normals_000.pfm"), &Rgb::zeros()).unwrap();

    let settings = Settings::parse("specular = false").unwrap();
    let light = |p: &Path| {
        EnvironmentLight::with_config(load_environment(p).unwrap(), settings.prefilter_config(), BrdfLut::shared())
            .unwrap()
    };
    let (la, lb) = (light(&env_a), light(&env_b));
    let cam = &scenes::held_out_cameras(1, 24).unwrap()[0];
    let mut checked = 0;
    for i in 0..img_a.len() {
        let n = normals.pixels[i];
        if n.norm() == 0.0 || img_a.pixels[i].min() < 1e-3 {
            continue;
        }
        let world = cam.rotation.transpose() * Vec3::new(n.x, n.y, n.z);
        let expected = lb.diffuse(&world).component_div(&la.diffuse(&world));
        let got = img_b.pixels[i].component_div(&img_a.pixels[i]);
        for c in 0..3 {
            let rel = (got[c] - expected[c]).abs() / expected[c];
            assert!(rel < 0.01, "pixel {i} channel {c}: {} vs {}", got[c], expected[c]);
        }
        checked += 1;
    }
    assert!(checked > 100, "{checked}");
}

#[test]
fn gradcheck_passes_on_the_builtin_scene() {
    let t = tempfile::tempdir().unwrap();
    let report = t.path().join("g.tsv");
    let v = ok(&["gradcheck", "--report", s(&report)]);
    assert_eq!(v["particles"], 10);
    assert!(v["pass_fraction"].as_f64().unwrap() >= 0.99, "{v}");
    let table = std::fs::read_to_string(&report).unwrap();
    assert!(table.starts_with("index\tparticle\tparameter"));
    assert_eq!(table.lines().count(), v["parameters"].as_u64().unwrap() as usize + 1);
}

#[test]
fn impossible_gradcheck_threshold_exits_with_check_failure() {
    let out = run(&["gradcheck", "--min-pass", "1.1"]);
    assert_eq!(out.status.code(), Some(8));
}

fn train_summary(dir: &Path, ds: &Path, cfg: &Path, seed: &str, threads: &str) -> (serde_json::Value, Vec<u8>) {
    let out = dir.join(format!("run_{seed}_{threads}"));
    let v = ok(&[
        "train", "--data", s(ds), "--env", s(&ds.join("env.pfm")), "--out", s(&out), "--init-particles", "60",
        "--stage1", "6", "--stage2", "3", "--config", s(cfg), "--seed", seed, "--threads", threads,
    ]);
    (v, std::fs::read(out.join("summary.json")).unwrap())
}

#[test]
fn summaries_are_byte_identical_for_equal_seeds() {
    let t = tempfile::tempdir().unwrap();
    let ds = synth(t.path());
    let cfg = small_config(t.path());
    let (v1, a) = train_summary(t.path(), &ds, &cfg, "5", "1");
    let (_, b) = train_summary(t.path(), &ds, &cfg, "5", "1");
    assert_eq!(a, b);
    assert!(v1["probes_sha256"].is_string());
    let (_, c) = train_summary(t.path(), &ds, &cfg, "5", "2");
    assert_eq!(a, c, "thread count changed the result");
    let (v4, _) = train_summary(t.path(), &ds, &cfg, "6", "1");
    assert_ne!(v1["checkpoint_sha256"], v4["checkpoint_sha256"]);

    let ckpt = t.path().join("run_5_1").join("checkpoint.ckpt");
    let bake = |name: &str| {
        let p = t.path().join(name);
        run(&["bake", "--checkpoint", s(&ckpt), "--out", s(&p), "--config", s(&cfg)]).stdout
    };
    let first = bake("p1.bin");
    assert!(!first.is_empty());
    assert_eq!(first, bake("p2.bin"));

    let oracle = |name: &str| {
        let p = t.path().join(name);
        ok(&["oracle", "--checkpoint", s(&ckpt), "--out", s(&p), "--size", "12", "--config", s(&cfg)]);
        std::fs::read(p.join("summary.json")).unwrap()
    };
    assert_eq!(oracle("o1"), oracle("o2"));
}

#[test]
fn compare_schemes_reports_both_shading_philosophies() {
    let t = tempfile::tempdir().unwrap();
    let cfg = small_config(t.path());
    let v = ok(&["compare-schemes", "--size", "12", "--config", s(&cfg), "--seed", "3"]);
    for k in ["forward", "deferred"] {
        assert!(v[k]["psnr"].is_number(), "{v}");
    }
    assert_eq!(v["seed"], 3);
    assert!(["forward", "deferred", "tie"].contains(&v["closer"].as_str().unwrap()));
}

#[test]
fn metrics_of_identical_inputs_are_perfect() {
    let t = tempfile::tempdir().unwrap();
    let img = t.path().join("a.pfm");
    let n = t.path().join("n.pfm");
    write_image(&img, &splatir::img::Image::filled(8, 8, Rgb::new(0.2, 0.4, 0.6))).unwrap();
    write_image(&n, &splatir::img::Image::filled(8, 8, Rgb::new(0.0, 0.6, 0.8))).unwrap();
    let v = ok(&[
        "metrics", "--rendered", s(&img), "--reference", s(&img), "--normals-est", s(&n), "--normals-ref", s(&n),
    ]);
    assert_eq!(v["psnr"], "inf");
    assert_eq!(v["ssim"], 1.0);
    assert_eq!(v["normal_mae_deg"], 0.0);
}
