use serde::Serialize;

use super::AnalysisError;
use crate::core_maps::DEFAULT_BLOWUP_BOUND;

/// Candidate periods, tested in order.
pub const TESTED_PERIODS: [usize; 6] = [1, 2, 4, 8, 16, 32];
/// Required tail length: eight times the longest tested period.
pub const MIN_TAIL: usize = 8 * 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PeriodKind {
    P1,
    P2,
    P4,
    Higher(usize),
    Aperiodic,
    Divergent,
}

impl PeriodKind {
    pub fn label(&self) -> String {
        match self {
            PeriodKind::P1 => "P1".into(),
            PeriodKind::P2 => "P2".into(),
            PeriodKind::P4 => "P4".into(),
            PeriodKind::Higher(k) => format!("P{k}"),
            PeriodKind::Aperiodic => "aperiodic".into(),
            PeriodKind::Divergent => "divergent".into(),
        }
    }

    pub fn is_periodic(&self) -> bool {
        !matches!(self, PeriodKind::Aperiodic | PeriodKind::Divergent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodClass {
    pub kind: PeriodKind,
    pub period: Option<usize>,
    /// Range of the tail.
    pub min: f64,
    pub max: f64,
    /// One period of the tail (its last `period` values), if periodic.
    pub cycle: Vec<f64>,
}

fn max_shift_deviation(tail: &[f64], k: usize) -> f64 {
    tail.windows(k + 1)
        .map(|w| (w[k] - w[0]).abs())
        .fold(0.0, f64::max)
}

/// Classify the tail of a trajectory by the smallest period `k` in
/// [`TESTED_PERIODS`] with `max |x[n+k] − x[n]| < tol`.
pub fn detect_period(tail: &[f64], tol: f64) -> Result<PeriodClass, AnalysisError> {
    if tail.len() < MIN_TAIL {
        return Err(AnalysisError::TooShort {
            needed: MIN_TAIL,
            available: tail.len(),
        });
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(AnalysisError::Invalid(format!("tolerance must be positive, got {tol}")));
    }
    if tail.iter().any(|v| !v.is_finite() || v.abs() > DEFAULT_BLOWUP_BOUND) {
        return Ok(PeriodClass {
            kind: PeriodKind::Divergent,
            period: None,
            min: f64::NAN,
            max: f64::NAN,
            cycle: Vec::new(),
        });
    }
    let min = tail.iter().copied().fold(f64::INFINITY, f64::min);
    let max = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let found = TESTED_PERIODS
        .iter()
        .copied()
        .find(|&k| max_shift_deviation(tail, k) < tol);
    let (kind, cycle) = match found {
        Some(k) => {
            let kind = match k {
                1 => PeriodKind::P1,
                2 => PeriodKind::P2,
                4 => PeriodKind::P4,
                k => PeriodKind::Higher(k),
            };
            (kind, tail[tail.len() - k..].to_vec())
        }
        None => (PeriodKind::Aperiodic, Vec::new()),
    };
    Ok(PeriodClass { kind, period: found, min, max, cycle })
}

/// First index from which `x` repeats with period `k` (to within `tol`)
/// through the end of the record.
pub fn settling_step(x: &[f64], k: usize, tol: f64) -> Option<usize> {
    if k == 0 || x.len() <= k {
        return None;
    }
    let last_bad = (0..x.len() - k).rposition(|n| !((x[n + k] - x[n]).abs() < tol));
    match last_bad {
        None => Some(0),
        Some(n) if n + 1 < x.len() - k => Some(n + 1),
        Some(_) => None,
    }
}
