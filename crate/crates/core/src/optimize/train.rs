//! Two-stage training: unified-shading decomposition, probe baking, then
//! photometric refinement with baked occlusion.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::diff::{backward, ParamKind, ParameterVector, PARAMS_PER_PARTICLE};
use crate::error::{Error, Result};
use crate::img::Image;
use crate::math::{sigmoid, Rgb};
use crate::optimize::adam::{Adam, AdamConfig};
use crate::optimize::objective::{evaluate, LossBreakdown, LossConfig, Stage};
use crate::probes::{bake_probes, ProbeGrid, ProbeGridConfig};
use crate::render::{render_unified, RenderMode, RenderOptions};
use crate::scene::{Camera, Scene};
use crate::shading::prefilter::{prefilter_diffuse_adjoint, prefilter_specular_adjoint};
use crate::shading::{EnvMap, EnvironmentLight};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LearningRates {
    pub position: f64,
    /// Position rate reached at the last iteration of stage two.
    pub position_final: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub albedo: f64,
    pub specular: f64,
    pub roughness: f64,
    pub environment: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            position: 1.6e-4,
            position_final: 1.6e-6,
            rotation: 2.5e-3,
            scale: 2.5e-3,
            opacity: 2.5e-3,
            albedo: 2.5e-3,
            specular: 2.5e-3,
            roughness: 2.5e-3,
            environment: 2.5e-3,
        }
    }
}

impl LearningRates {
    /// Log-linear interpolation of the position rate over `t` in `[0, 1]`.
    pub fn position_at(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        if self.position <= 0.0 || self.position_final <= 0.0 {
            return self.position * (1.0 - t) + self.position_final * t;
        }
        ((1.0 - t) * self.position.ln() + t * self.position_final.ln()).exp()
    }

    fn for_kind(&self, kind: ParamKind, position: f64) -> f64 {
        match kind {
            ParamKind::Position(_) => position,
            ParamKind::Rotation(_) => self.rotation,
            ParamKind::LogScale(_) => self.scale,
            ParamKind::OpacityLogit => self.opacity,
            ParamKind::Albedo(_) => self.albedo,
            ParamKind::Specular(_) => self.specular,
            ParamKind::RoughnessLogit => self.roughness,
        }
    }
}

/// Probe lattice used between the stages; bounds come from the scene.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeSpec {
    pub resolution: [usize; 3],
    pub face_resolution: usize,
    /// Occlusion distance in lattice spacings.
    pub threshold_spacings: f64,
    pub bake_indirect: bool,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        ProbeSpec {
            resolution: [32, 32, 32],
            face_resolution: crate::probes::DEFAULT_FACE_RESOLUTION,
            threshold_spacings: crate::probes::DEFAULT_THRESHOLD_SPACINGS,
            bake_indirect: true,
        }
    }
}

impl ProbeSpec {
    pub fn grid_config(&self, bounds: &crate::scene::Aabb) -> ProbeGridConfig {
        let mut cfg = ProbeGridConfig {
            face_resolution: self.face_resolution,
            bake_indirect: self.bake_indirect,
            ..ProbeGridConfig::new(self.resolution, *bounds)
        };
        cfg.distance_threshold = Some(self.threshold_spacings * cfg.spacing());
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainConfig {
    pub stage1_iterations: usize,
    pub stage2_iterations: usize,
    pub loss: LossConfig,
    pub rates: LearningRates,
    pub adam: AdamConfig,
    pub learn_environment: bool,
    pub environment_width: usize,
    pub environment_height: usize,
    /// Iterations between re-prefiltering the learned environment.
    pub environment_refresh: usize,
    pub prune_interval: usize,
    pub prune_opacity: f64,
    /// `None` skips baking; stage two then runs without occlusion.
    pub probes: Option<ProbeSpec>,
    /// Keep position, rotation, scale and opacity fixed during stage two.
    pub freeze_geometry_in_stage2: bool,
    pub options: RenderOptions,
    pub seed: u64,
    /// Where a diagnostic checkpoint goes if the loss stops being finite.
    #[serde(skip)]
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage1_iterations: 30_000,
            stage2_iterations: 5_000,
            loss: LossConfig::default(),
            rates: LearningRates::default(),
            adam: AdamConfig::default(),
            learn_environment: true,
            environment_width: 32,
            environment_height: 16,
            environment_refresh: 32,
            prune_interval: 1000,
            prune_opacity: 0.005,
            probes: Some(ProbeSpec::default()),
            freeze_geometry_in_stage2: true,
            options: RenderOptions::default(),
            seed: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.environment_refresh == 0 {
            return Err(Error::InvalidParameter("environment refresh interval must be positive".into()));
        }
        if self.learn_environment && (self.environment_width < 8 || self.environment_height < 4) {
            return Err(Error::InvalidParameter("learned environment must be at least 8x4".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossRecord {
    pub stage: u8,
    pub iteration: usize,
    pub view: usize,
    pub particles: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

/// Optimizer moments saved alongside a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub particles: Adam,
    pub environment: Option<Adam>,
}

/// Everything needed to resume or inspect a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub scene: Scene,
    pub env: EnvMap,
    pub stage: Stage,
    pub iteration: u64,
    pub optimizer: Option<OptimizerState>,
}

pub struct TrainOutput {
    pub scene: Scene,
    pub env: EnvMap,
    pub probes: Option<ProbeGrid>,
    pub log: Vec<LossRecord>,
    pub optimizer: OptimizerState,
}

/// Environment the run starts from: the initial map reduced to the learned
/// resolution, or the initial map itself when lighting is fixed.
pub fn initial_environment(env: &EnvMap, cfg: &TrainConfig) -> EnvMap {
    if !cfg.learn_environment || (env.width == cfg.environment_width && env.height == cfg.environment_height) {
        return env.clone();
    }
    let reduced = env.downsample_to(cfg.environment_width);
    if reduced.width == cfg.environment_width && reduced.height == cfg.environment_height {
        return reduced;
    }
    EnvMap::from_fn(cfg.environment_width, cfg.environment_height, |d| env.lookup(d))
}

struct Run<'a> {
    cfg: &'a TrainConfig,
    views: &'a [(Camera, Image)],
    scene: Scene,
    env: EnvMap,
    light: EnvironmentLight,
    adam: Adam,
    env_adam: Option<Adam>,
    order: Vec<usize>,
    rng: ChaCha8Rng,
    log: Vec<LossRecord>,
    total_iterations: usize,
    global: usize,
}

impl Run<'_> {
    fn next_view(&mut self) -> usize {
        if self.order.is_empty() {
            self.order = (0..self.views.len()).collect();
            self.order.shuffle(&mut self.rng);
        }
        self.order.pop().unwrap_or(0)
    }

    fn diverged(&self, stage: Stage, iteration: usize, detail: String) -> Error {
        let mut path = None;
        if let Some(dir) = &self.cfg.checkpoint_dir {
            let p = dir.join(format!("diverged_{iteration:06}.ckpt"));
            let ckpt = Checkpoint {
                scene: self.scene.clone(),
                env: self.env.clone(),
                stage,
                iteration: iteration as u64,
                optimizer: Some(OptimizerState {
                    particles: self.adam.clone(),
                    environment: self.env_adam.clone(),
                }),
            };
            match crate::io::checkpoint::write_checkpoint(&p, &ckpt) {
                Ok(()) => path = Some(p),
                Err(e) => log::error!("could not write diagnostic checkpoint: {e}"),
            }
        }
        Error::Diverged {
            iteration,
            detail,
            checkpoint: path,
        }
    }

    fn step(&mut self, stage: Stage, iteration: usize, probes: Option<&ProbeGrid>) -> Result<()> {
        let view = self.next_view();
        let (cam, reference) = &self.views[view];
        let loss_cfg = LossConfig {
            stage,
            ..self.cfg.loss.clone()
        };
        let rec = render_unified(&self.scene, cam, &self.light, probes, &self.cfg.options, RenderMode::Train)?;
        let (loss, adj) = evaluate(&rec, reference, &loss_cfg)?;
        if !loss.total.is_finite() {
            return Err(self.diverged(stage, iteration, format!("loss is {}", loss.total)));
        }
        let learn_env = self.env_adam.is_some();
        let grads = backward(&rec, &self.scene, &self.light, &adj, learn_env)?;
        if grads.params.values.iter().any(|g| !g.is_finite()) {
            return Err(self.diverged(stage, iteration, "non-finite parameter gradient".into()));
        }

        let t = self.global as f64 / self.total_iterations.max(1) as f64;
        let rates = &self.cfg.rates;
        let pos_rate = rates.position_at(t);
        let freeze = stage == Stage::Two && self.cfg.freeze_geometry_in_stage2;
        let mut params = ParameterVector::gather(&self.scene);
        self.adam.update(&mut params.values, &grads.params.values, |i| {
            let kind = ParamKind::from_offset(i % PARAMS_PER_PARTICLE).expect("offset below block size");
            if freeze && kind.is_geometry() {
                0.0
            } else {
                rates.for_kind(kind, pos_rate)
            }
        });
        params.scatter(&mut self.scene)?;
        for p in &mut self.scene.particles {
            p.enforce_invariants();
        }

        if let (Some(env_adam), Some(eg)) = (self.env_adam.as_mut(), grads.env.as_ref()) {
            let cfg = &self.light.config;
            let mut g = prefilter_diffuse_adjoint(&self.env, cfg, &eg.irradiance);
            for (a, b) in g.iter_mut().zip(prefilter_specular_adjoint(&self.env, cfg, &eg.mips)) {
                *a += b;
            }
            let flat_g: Vec<f64> = g.iter().flat_map(|c| [c.x, c.y, c.z]).collect();
            let mut flat: Vec<f64> = self.env.data.iter().flat_map(|c| [c.x, c.y, c.z]).collect();
            env_adam.update(&mut flat, &flat_g, |_| rates.environment);
            for (c, v) in self.env.data.iter_mut().zip(flat.chunks(3)) {
                *c = Rgb::new(v[0].max(0.0), v[1].max(0.0), v[2].max(0.0));
            }
        }

        self.log.push(LossRecord {
            stage: if stage == Stage::One { 1 } else { 2 },
            iteration,
            view,
            particles: self.scene.len(),
            loss,
        });
        self.global += 1;

        if learn_env && self.global.is_multiple_of(self.cfg.environment_refresh) {
            self.light = self.light.relit(self.env.clone())?;
        }
        if self.cfg.prune_interval > 0 && (iteration + 1).is_multiple_of(self.cfg.prune_interval) && stage == Stage::One {
            self.prune();
        }
        Ok(())
    }

    fn prune(&mut self) {
        let keep: Vec<bool> = self
            .scene
            .particles
            .iter()
            .map(|p| sigmoid(p.opacity_logit) >= self.cfg.prune_opacity)
            .collect();
        if keep.iter().all(|k| *k) {
            return;
        }
        let mut it = keep.iter();
        self.scene.particles.retain(|_| *it.next().unwrap_or(&true));
        self.adam.retain_blocks(PARAMS_PER_PARTICLE, &keep);
        log::info!("pruned to {} particles", self.scene.len());
    }
}

/// Runs stage one, bakes probes from the stage-one scene, then runs stage two.
pub fn train(scene: &Scene, views: &[(Camera, Image)], env: &EnvMap, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    if views.is_empty() && cfg.stage1_iterations + cfg.stage2_iterations > 0 {
        return Err(Error::InvalidParameter("training needs at least one view".into()));
    }
    for (cam, img) in views {
        if cam.width != img.width || cam.height != img.height {
            return Err(Error::InconsistentResolution(format!(
                "camera {}x{} with image {}x{}",
                cam.width, cam.height, img.width, img.height
            )));
        }
    }
    let env = initial_environment(env, cfg);
    let light = EnvironmentLight::new(env.clone())?;
    let env_adam = cfg.learn_environment.then(|| Adam::new(env.data.len() * 3, cfg.adam.clone()));
    let mut run = Run {
        cfg,
        views,
        adam: Adam::new(scene.len() * PARAMS_PER_PARTICLE, cfg.adam.clone()),
        scene: scene.clone(),
        env,
        light,
        env_adam,
        order: Vec::new(),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        log: Vec::with_capacity(cfg.stage1_iterations + cfg.stage2_iterations),
        total_iterations: cfg.stage1_iterations + cfg.stage2_iterations,
        global: 0,
    };

    for it in 0..cfg.stage1_iterations {
        run.step(Stage::One, it, None)?;
        if (it + 1) % 500 == 0 {
            log::info!("stage 1 iteration {} loss {:.6}", it + 1, run.log.last().map_or(0.0, |r| r.loss.total));
        }
    }
    if run.env_adam.is_some() {
        run.light = run.light.relit(run.env.clone())?;
    }

    let probes = match (&cfg.probes, cfg.stage2_iterations > 0 || cfg.stage1_iterations > 0) {
        (Some(spec), true) if !run.scene.is_empty() => {
            let pcfg = spec.grid_config(&run.scene.bounds);
            Some(bake_probes(&run.scene, &pcfg, Some(&run.light), &cfg.options)?)
        }
        _ => None,
    };

    for it in 0..cfg.stage2_iterations {
        run.step(Stage::Two, it, probes.as_ref())?;
        if (it + 1) % 500 == 0 {
            log::info!("stage 2 iteration {} loss {:.6}", it + 1, run.log.last().map_or(0.0, |r| r.loss.total));
        }
    }

    Ok(TrainOutput {
        scene: run.scene,
        env: run.env,
        probes,
        log: run.log,
        optimizer: OptimizerState {
            particles: run.adam,
            environment: run.env_adam,
        },
    })
}

/// Moving average of the total loss over `window` iterations.
pub fn smoothed_loss(log: &[LossRecord], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(log.len());
    let mut sum = 0.0;
    for (i, r) in log.iter().enumerate() {
        sum += r.loss.total;
        if i >= window {
            sum -= log[i - window].loss.total;
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}
