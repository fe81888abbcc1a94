//! Central finite-difference check of the analytic gradients.

use serde::Serialize;

use super::graph::{analytic_gradients, example_loss, TrainExample};
use super::Model;
use crate::error::{Error, Result};

/// Finite-difference step.
pub const GRAD_CHECK_STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupError {
    pub name: String,
    /// ‖analytic − numeric‖ / (‖analytic‖ + ‖numeric‖), zero when both vanish.
    pub rel_error: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupError>,
    pub max_rel_error: f64,
    /// Analytic gradient over the flat parameter buffer.
    #[serde(skip)]
    pub analytic: Vec<f64>,
}

impl GradCheckReport {
    pub fn group(&self, name: &str) -> Option<&GroupError> {
        self.groups.iter().find(|g| g.name == name)
    }
}

/// Compare analytic gradients of the summed loss over `batch` with central
/// differences, per parameter tensor. Dropout is never applied here.
pub fn grad_check(model: &Model, batch: &[TrainExample]) -> Result<GradCheckReport> {
    if batch.is_empty() {
        return Err(Error::config("gradient check needs at least one example"));
    }
    let (_, analytic) = analytic_gradients(model, batch)?;
    let mut probe = model.clone();
    let mut groups = Vec::with_capacity(model.params.specs.len());
    for spec in model.params.specs.clone() {
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut n2 = 0.0;
        for i in spec.range() {
            let orig = probe.params.values[i];
            probe.params.values[i] = orig + GRAD_CHECK_STEP;
            let up = total_loss(&probe, batch)?;
            probe.params.values[i] = orig - GRAD_CHECK_STEP;
            let down = total_loss(&probe, batch)?;
            probe.params.values[i] = orig;
            let numeric = (up - down) / (2.0 * GRAD_CHECK_STEP);
            let a = analytic[i];
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        let denom = a2.sqrt() + n2.sqrt();
        let rel_error = if denom == 0.0 { 0.0 } else { diff2.sqrt() / denom };
        groups.push(GroupError {
            name: spec.name.clone(),
            rel_error,
            analytic_norm: a2.sqrt(),
            numeric_norm: n2.sqrt(),
        });
    }
    let max_rel_error = groups.iter().map(|g| g.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { groups, max_rel_error, analytic })
}

fn total_loss(model: &Model, batch: &[TrainExample]) -> Result<f64> {
    batch.iter().map(|ex| example_loss(model, ex)).sum()
}
