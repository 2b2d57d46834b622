use serde::{Deserialize, Serialize};

use super::period::{detect_period, PeriodKind};
use super::sync::dispersion_series;
use super::AnalysisError;
use crate::sim::{Role, SimTrace};

/// What an oscillator population is hearing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reflection {
    /// Peers only: a synchronized period-two cycle.
    Swarm,
    /// A delayed reflection broke the period-two cycle.
    Mirror,
    /// Nobody else in the water.
    None,
}

impl Reflection {
    pub fn label(&self) -> &'static str {
        match self {
            Reflection::Swarm => "swarm",
            Reflection::Mirror => "mirror",
            Reflection::None => "none",
        }
    }
}

/// Thresholds, all relative to the oscillators' peak amplitude so that the
/// classification does not depend on signal scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReflectionConfig {
    /// Tolerance of the tail period test.
    pub period_tol: f64,
    /// Dispersion below which the population counts as synchronized.
    pub sync_eps: f64,
    /// Consecutive steps of period-two motion that establish an epoch.
    pub epoch_len: usize,
    pub epoch_tol: f64,
    /// Length of the tail that is classified.
    pub tail: usize,
    /// Residual sensed field (beyond the device's own echo) that counts as
    /// someone else being present.
    pub foreign_field: f64,
}

impl Default for ReflectionConfig {
    fn default() -> Self {
        Self {
            period_tol: 1e-5,
            sync_eps: 5e-3,
            epoch_len: 16,
            epoch_tol: 1e-3,
            tail: 256,
            foreign_field: 1e-3,
        }
    }
}

fn peak(xs: &[&[f64]]) -> f64 {
    xs.iter()
        .flat_map(|s| s.iter())
        .fold(0.0f64, |a, v| a.max(v.abs()))
}

/// First step of a run of `len` consecutive steps with |x[n+2] − x[n]| < tol
/// (and, for populations, dispersion below `eps`), searched before `end`.
fn p2_epoch(x: &[f64], disp: Option<&[f64]>, len: usize, tol: f64, eps: f64, end: usize) -> Option<usize> {
    let mut run = 0;
    for n in 0..end.min(x.len().saturating_sub(2)) {
        let synced = disp.is_none_or(|d| d[n] < eps);
        if (x[n + 2] - x[n]).abs() < tol && synced {
            run += 1;
            if run == len {
                return Some(n + 1 - len);
            }
        } else {
            run = 0;
        }
    }
    None
}

/// A synchronized stretch of `len` steps followed later by dispersion at or
/// above `eps`.
fn sync_crash(d: &[f64], len: usize, eps: f64) -> bool {
    let mut run = 0;
    for (n, &v) in d.iter().enumerate() {
        if v < eps {
            run += 1;
        } else {
            if run >= len && n >= len {
                return true;
            }
            run = 0;
        }
    }
    false
}

pub fn classify_reflection(trace: &SimTrace) -> Result<Reflection, AnalysisError> {
    classify_reflection_with(trace, &ReflectionConfig::default())
}

pub fn classify_reflection_with(trace: &SimTrace, cfg: &ReflectionConfig) -> Result<Reflection, AnalysisError> {
    if trace.is_diverged() {
        return Err(AnalysisError::Indeterminate("the run diverged".into()));
    }
    let osc = trace.indices(Role::Oscillator);
    if osc.is_empty() {
        return Err(AnalysisError::Indeterminate("no oscillators".into()));
    }
    let states = trace.oscillator_states();
    let n = states[0].len();
    if n < cfg.tail + cfg.epoch_len + 2 {
        return Err(AnalysisError::TooShort {
            needed: cfg.tail + cfg.epoch_len + 2,
            available: n,
        });
    }
    let scale = peak(&states);
    if !(scale > 0.0) {
        return Err(AnalysisError::Indeterminate("oscillators are silent".into()));
    }
    let x = states[0];
    let tail_start = n - cfg.tail;
    let tail = detect_period(&x[tail_start..], cfg.period_tol * scale)?;
    let disp = (states.len() >= 2).then(|| dispersion_series(&states));
    let eps = cfg.sync_eps * scale;

    let epoch = p2_epoch(x, disp.as_deref(), cfg.epoch_len, cfg.epoch_tol * scale, eps, tail_start);
    let crashed = disp.as_deref().is_some_and(|d| sync_crash(d, cfg.epoch_len, eps));
    let p2_tail = tail.kind == PeriodKind::P2;
    if crashed || (epoch.is_some() && !p2_tail && tail.kind != PeriodKind::P1) {
        return Ok(Reflection::Mirror);
    }
    if !p2_tail {
        return Err(AnalysisError::Indeterminate(format!(
            "tail is {} without an earlier period-two epoch",
            tail.kind.label()
        )));
    }
    match disp {
        Some(d) => {
            if d[tail_start..].iter().all(|&v| v < eps) {
                Ok(Reflection::Swarm)
            } else {
                Err(AnalysisError::Indeterminate("period-two but not synchronized".into()))
            }
        }
        None => {
            let dev = &trace.devices[osc[0]];
            let gains = trace.meta[osc[0]].gains;
            let residual = (tail_start..n)
                .map(|k| (dev.xi_w[k] - gains.k1_for(dev.xi_o[k]) * dev.xi_o[k]).abs())
                .fold(0.0, f64::max);
            if residual < cfg.foreign_field * scale {
                Ok(Reflection::None)
            } else {
                Ok(Reflection::Swarm)
            }
        }
    }
}
