//! Tab-separated reports.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::optimize::LossRecord;

/// Serializes `rows` as a tab-separated table with a header row.
pub fn tsv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_tsv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    std::fs::write(path, tsv_string(rows)?).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct LossRow {
    stage: u8,
    iteration: usize,
    view: usize,
    particles: usize,
    forward: f64,
    deferred: f64,
    normal: f64,
    alpha: f64,
    total: f64,
    normal_pixels: usize,
}

/// One row per training iteration.
pub fn loss_log_tsv(log: &[LossRecord]) -> Result<String> {
    let rows: Vec<LossRow> = log
        .iter()
        .map(|r| LossRow {
            stage: r.stage,
            iteration: r.iteration,
            view: r.view,
            particles: r.particles,
            forward: r.loss.forward,
            deferred: r.loss.deferred,
            normal: r.loss.normal,
            alpha: r.loss.alpha,
            total: r.loss.total,
            normal_pixels: r.loss.normal_pixels,
        })
        .collect();
    tsv_string(&rows)
}

pub fn write_loss_log(path: &Path, log: &[LossRecord]) -> Result<()> {
    std::fs::write(path, loss_log_tsv(log)?).map_err(|e| Error::io(path, e))
}
