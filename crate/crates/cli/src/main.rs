//! Command-line front end.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Exit code for a check whose verdict is negative (e.g. a failed gradient check).
pub const EXIT_CHECK_FAILED: u8 = 8;
/// Environment variable overriding the worker thread count.
pub const THREADS_ENV: &str = "SPLATIR_THREADS";

#[derive(Parser, Debug)]
#[command(name = "splatir", version, about = "Gaussian-splatting inverse renderer")]
pub struct Cli {
    /// Seed for every random choice; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores); overrides SPLATIR_THREADS and the config file.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Flat key = value settings file (see `gen-config`).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Print the reference configuration with every default.
    GenConfig {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic posed-image dataset of a diffuse sphere.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        particles: usize,
        #[arg(long, default_value_t = 16)]
        views: usize,
        #[arg(long, default_value_t = 4)]
        test_views: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Two-stage optimization from a dataset.
    Train {
        /// Dataset directory with transforms_*.json.
        #[arg(long)]
        data: PathBuf,
        /// Initial environment (.hdr or .pfm).
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Starting particles (.ply or checkpoint); a jittered sphere otherwise.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        init_particles: usize,
        #[arg(long)]
        stage1: Option<usize>,
        #[arg(long)]
        stage2: Option<usize>,
    },
    /// Bake the occlusion probe grid of a checkpoint.
    Bake {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render novel views of a checkpoint under its own environment.
    Render(RenderArgs),
    /// Render a checkpoint under a different environment.
    Relight {
        #[command(flatten)]
        render: RenderArgs,
        /// Replacement environment (.hdr or .pfm).
        #[arg(long)]
        env: PathBuf,
    },
    /// PSNR, SSIM and optional normal error between two images.
    Metrics {
        #[arg(long)]
        rendered: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Estimated normals as a PFM with xyz in rgb.
        #[arg(long, requires = "normals_ref")]
        normals_est: Option<PathBuf>,
        #[arg(long, requires = "normals_est")]
        normals_ref: Option<PathBuf>,
    },
    /// Finite-difference check of the analytic gradients on the built-in
    /// ten-particle scene.
    Gradcheck {
        /// Per-parameter table (tab separated).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Minimum pass fraction for exit code 0.
        #[arg(long, default_value_t = 0.99)]
        min_pass: f64,
    },
    /// Monte-Carlo ground-truth render.
    Oracle {
        /// Checkpoint to render; the built-in glossy sphere otherwise.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        env: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// `surface` (blend attributes, then integrate) or `forward`.
        #[arg(long, default_value = "surface")]
        branch: String,
        #[arg(long, default_value_t = 48)]
        size: usize,
        #[arg(long, default_value_t = 0.0)]
        azimuth: f64,
        #[arg(long, default_value_t = 0.25)]
        elevation: f64,
    },
    /// Forward and deferred split-sum shading against the oracle.
    CompareSchemes {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        env: Option<PathBuf>,
        #[arg(long, default_value_t = 48)]
        size: usize,
        #[arg(long, default_value_t = 0.0)]
        azimuth: f64,
        #[arg(long, default_value_t = 0.25)]
        elevation: f64,
    },
}

#[derive(clap::Args, Debug)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Probe cache from `bake`; renders without occlusion otherwise.
    #[arg(long)]
    pub probes: Option<PathBuf>,
    /// Dataset whose test cameras (and images, for metrics) are used.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Orbit views when no dataset is given.
    #[arg(long, default_value_t = 4)]
    pub views: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match commands::run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
