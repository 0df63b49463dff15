//! Central finite-difference verification of the analytic gradient.

use std::hash::{DefaultHasher, Hash, Hasher};
use std::io::Write;

use serde::Serialize;

use crate::diff::backward::backward;
use crate::diff::params::{ParamKind, ParameterVector};
use crate::error::{Error, Result};
use crate::img::Image;
use crate::optimize::objective::{evaluate, LossConfig};
use crate::probes::ProbeGrid;
use crate::optimize::loss::NORMAL_ALPHA;
use crate::raster::blend_structure;
use crate::raster::gbuffer::{COVERAGE_THRESHOLD, RELIABLE_DEPTH_ALPHA};
use crate::render::{
    render_unified, render_with_terms, FrozenProbeTerms, ProbeTerms, RenderMode, RenderOptions, RenderRecord,
};
use crate::scene::{shortest_axis_is_near_tie, Camera, Scene};
use crate::shading::EnvironmentLight;

/// Denominator floor of the relative error.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct GradcheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Parameter indices to check; all when `None`.
    pub subset: Option<Vec<usize>>,
    /// Log-scale gap under which the shortest axis counts as tied.
    pub tie_gap: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            step: 1e-5,
            tolerance: 1e-3,
            subset: None,
            tie_gap: 1e-3,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradientEntry {
    pub index: usize,
    pub particle: usize,
    pub parameter: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    /// Reason the entry is not scored.
    pub excluded: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradientReport {
    pub step: f64,
    pub tolerance: f64,
    pub loss: f64,
    pub entries: Vec<GradientEntry>,
    pub checked: usize,
    pub passed: usize,
    pub pass_fraction: f64,
    /// Relative-error quantiles (0, 0.25, 0.5, 0.75, 0.9, 0.99, 1) over scored entries.
    pub quantiles: Vec<(f64, f64)>,
}

impl GradientReport {
    pub fn median(&self) -> f64 {
        self.quantiles
            .iter()
            .find(|(q, _)| *q == 0.5)
            .map(|(_, v)| *v)
            .unwrap_or(f64::NAN)
    }

    /// Tab-separated table, one row per parameter.
    pub fn write_tsv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "index\tparticle\tparameter\tanalytic\tnumeric\trel_error\tstatus")?;
        for e in &self.entries {
            let status = match &e.excluded {
                Some(r) => format!("excluded:{r}"),
                None if e.rel_error < self.tolerance => "pass".into(),
                None => "fail".into(),
            };
            writeln!(
                w,
                "{}\t{}\t{}\t{:.12e}\t{:.12e}\t{:.6e}\t{}",
                e.index, e.particle, e.parameter, e.analytic, e.numeric, e.rel_error, status
            )?;
        }
        Ok(())
    }
}

pub fn relative_error(a: f64, f: f64) -> f64 {
    (a - f).abs() / a.abs().max(f.abs()).max(REL_ERROR_FLOOR)
}

/// Everything needed to evaluate the training objective for one view.
pub struct Problem<'a> {
    pub scene: &'a Scene,
    pub camera: &'a Camera,
    pub env: &'a EnvironmentLight,
    pub probes: Option<&'a ProbeGrid>,
    pub options: &'a RenderOptions,
    pub reference: &'a Image,
    pub loss: &'a LossConfig,
}

impl Problem<'_> {
    /// Loss and structure digest at `params` with probe terms held at their
    /// values in the unperturbed scene, matching the backward convention.
    fn loss_at(&self, params: &ParameterVector, frozen: &FrozenProbeTerms) -> Result<(f64, u64)> {
        let mut scene = self.scene.clone();
        params.scatter(&mut scene)?;
        let terms = if self.probes.is_some() {
            ProbeTerms::Frozen(frozen)
        } else {
            ProbeTerms::None
        };
        let rec = render_with_terms(&scene, self.camera, self.env, terms, self.options, RenderMode::Train)?;
        Ok((evaluate(&rec, self.reference, self.loss)?.0.total, structure(&rec)))
    }

    /// Loss and analytic parameter gradient.
    pub fn loss_and_gradient(&self) -> Result<(f64, ParameterVector)> {
        let rec = render_unified(self.scene, self.camera, self.env, self.probes, self.options, RenderMode::Train)?;
        let (l, adj) = evaluate(&rec, self.reference, self.loss)?;
        let g = backward(&rec, self.scene, self.env, &adj, false)?;
        Ok((l.total, g.params))
    }
}

/// Digest of every discrete decision in a render: splat visibility and
/// order, cutoffs, clamps, early termination, coverage and depth masks, and
/// shortest-axis choices.
pub fn structure(rec: &RenderRecord) -> u64 {
    let mut h = DefaultHasher::new();
    blend_structure(&rec.splats, &rec.gbuffer.raster).hash(&mut h);
    for a in &rec.gbuffer.raster.alpha {
        (*a > COVERAGE_THRESHOLD, *a > RELIABLE_DEPTH_ALPHA, *a > NORMAL_ALPHA).hash(&mut h);
    }
    for s in &rec.shading {
        (s.index, s.axis, s.sign > 0.0).hash(&mut h);
    }
    h.finish()
}

/// Compares the analytic gradient against central differences.
pub fn finite_diff_check(problem: &Problem, cfg: &GradcheckConfig) -> Result<GradientReport> {
    if !(cfg.step > 0.0) {
        return Err(Error::InvalidParameter("finite-difference step must be positive".into()));
    }
    let (loss, analytic) = problem.loss_and_gradient()?;
    let base = ParameterVector::gather(problem.scene);
    let base_rec = render_unified(
        problem.scene,
        problem.camera,
        problem.env,
        problem.probes,
        problem.options,
        RenderMode::Train,
    )?;
    let frozen = FrozenProbeTerms::from_record(&base_rec);
    let (_, base_structure) = problem.loss_at(&base, &frozen)?;
    let indices: Vec<usize> = match &cfg.subset {
        Some(s) => s.clone(),
        None => (0..base.len()).collect(),
    };
    let mut entries = Vec::with_capacity(indices.len());
    for idx in indices {
        if idx >= base.len() {
            return Err(Error::InvalidParameter(format!("parameter index {idx} out of range")));
        }
        let (particle, kind) = ParameterVector::describe(idx);
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus.values[idx] += cfg.step;
        minus.values[idx] -= cfg.step;
        let (lp, sp) = problem.loss_at(&plus, &frozen)?;
        let (lm, sm) = problem.loss_at(&minus, &frozen)?;
        let numeric = (lp - lm) / (2.0 * cfg.step);
        let a = analytic.values[idx];
        let tied = matches!(kind, ParamKind::LogScale(_))
            && shortest_axis_is_near_tie(&problem.scene.particles[particle].log_scale, cfg.tie_gap.max(2.0 * cfg.step));
        let excluded = if tied {
            Some("shortest-axis tie".to_string())
        } else if sp != base_structure || sm != base_structure {
            Some("stencil crosses a blend discontinuity".to_string())
        } else {
            None
        };
        entries.push(GradientEntry {
            index: idx,
            particle,
            parameter: kind.to_string(),
            analytic: a,
            numeric,
            rel_error: relative_error(a, numeric),
            excluded,
        });
    }
    let mut errs: Vec<f64> = entries
        .iter()
        .filter(|e| e.excluded.is_none())
        .map(|e| e.rel_error)
        .collect();
    errs.sort_by(|a, b| a.total_cmp(b));
    let checked = errs.len();
    let passed = errs.iter().filter(|e| **e < cfg.tolerance).count();
    let quantiles = [0.0, 0.25, 0.5, 0.75, 0.9, 0.99, 1.0]
        .iter()
        .map(|&q| {
            let v = if errs.is_empty() {
                f64::NAN
            } else {
                errs[((q * (checked - 1) as f64).round() as usize).min(checked - 1)]
            };
            (q, v)
        })
        .collect();
    Ok(GradientReport {
        step: cfg.step,
        tolerance: cfg.tolerance,
        loss,
        entries,
        checked,
        passed,
        pass_fraction: if checked == 0 { 1.0 } else { passed as f64 / checked as f64 },
        quantiles,
    })
}

/// Median relative error of `subset` for each finite-difference step; the
/// curve falls with truncation error and rises again with round-off.
pub fn step_sweep(problem: &Problem, steps: &[f64], subset: &[usize]) -> Result<Vec<(f64, f64)>> {
    steps
        .iter()
        .map(|&step| {
            let cfg = GradcheckConfig {
                step,
                subset: Some(subset.to_vec()),
                ..GradcheckConfig::default()
            };
            Ok((step, finite_diff_check(problem, &cfg)?.median()))
        })
        .collect()
}
