use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sync::cycle_ratio;
use super::AnalysisError;
use crate::sim::{run_synchronous, CouplingSource, RandomInit, Scenario};

/// Protocol for generating ratio-vs-parameter curves from swarm runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupCurveConfig {
    pub alpha: f64,
    /// Spread of the random per-emitter couplings around their offset `e`.
    pub spread: f64,
    /// Runs per knot; the knot is their median.
    pub seeds: u64,
    /// Seed of the first run; run k uses `seed_base + k`.
    pub seed_base: u64,
    pub steps: u64,
    pub init: RandomInit,
}

impl Default for GroupCurveConfig {
    fn default() -> Self {
        Self {
            alpha: 3.1,
            spread: 3e-3,
            seeds: 100,
            seed_base: 0,
            steps: 400,
            init: RandomInit { lo: 0.0, hi: 0.1 },
        }
    }
}

/// The ratio x[n−1]/x[n] (x[n] on the positive phase) a swarm of `m` settles
/// into with coupling offset `e`.
pub fn swarm_ratio(m: usize, e: f64, seed: u64, cfg: &GroupCurveConfig) -> Result<f64, AnalysisError> {
    if m == 0 {
        return Err(AnalysisError::Invalid("empty swarm".into()));
    }
    let mut s = Scenario::swarm(m, e, cfg.steps, seed);
    s.coupling = CouplingSource::Sampled {
        offset: e,
        spread: cfg.spread,
        include_self: true,
        mirror_coupling: 1.0,
    };
    s.initial = Some(cfg.init);
    for d in &mut s.devices {
        d.map.alpha = cfg.alpha;
    }
    let trace = run_synchronous(&s, cfg.steps)?;
    if trace.is_diverged() {
        return Err(AnalysisError::Indeterminate(format!("swarm m={m}, e={e} diverged")));
    }
    let x = &trace.devices[0].x;
    let tail = x.len().saturating_sub(64);
    cycle_ratio(x, tail).ok_or_else(|| AnalysisError::Indeterminate("no positive phase".into()))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn median_ratio(m: usize, e: f64, cfg: &GroupCurveConfig) -> Result<f64, AnalysisError> {
    if cfg.seeds == 0 {
        return Err(AnalysisError::Invalid("seeds must be positive".into()));
    }
    let r: Vec<f64> = (0..cfg.seeds)
        .into_par_iter()
        .map(|k| swarm_ratio(m, e, cfg.seed_base + k, cfg))
        .collect::<Result<_, _>>()?;
    Ok(median(r))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Knot {
    pub param: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub param: String,
    /// Sorted by parameter.
    pub knots: Vec<Knot>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParamEstimate {
    /// Linearly interpolated parameter.
    pub value: f64,
    /// Parameter of the knot closest in ratio.
    pub nearest_knot: f64,
    /// Local slope d(ratio)/d(param) of the curve at the estimate.
    pub sensitivity: f64,
}

impl CalibrationCurve {
    pub fn new(param: impl Into<String>, mut knots: Vec<Knot>) -> Self {
        knots.sort_by(|a, b| a.param.total_cmp(&b.param));
        Self { param: param.into(), knots }
    }

    pub fn is_strictly_monotone(&self) -> bool {
        let d: Vec<f64> = self.knots.windows(2).map(|w| w[1].ratio - w[0].ratio).collect();
        !d.is_empty() && (d.iter().all(|&v| v > 0.0) || d.iter().all(|&v| v < 0.0))
    }

    pub fn ratio_range(&self) -> (f64, f64) {
        let lo = self.knots.iter().map(|k| k.ratio).fold(f64::INFINITY, f64::min);
        let hi = self.knots.iter().map(|k| k.ratio).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// Ratios that invert: the knot range widened at each end by half the
    /// spacing to the neighbouring knot (the end knots' nearest-neighbour
    /// cells).
    pub fn calibrated_range(&self) -> (f64, f64) {
        let (lo, hi) = self.ratio_range();
        let n = self.knots.len();
        if n < 2 {
            return (lo, hi);
        }
        let first = (self.knots[1].ratio - self.knots[0].ratio).abs() / 2.0;
        let last = (self.knots[n - 1].ratio - self.knots[n - 2].ratio).abs() / 2.0;
        let (pad_lo, pad_hi) = if self.knots[0].ratio <= self.knots[n - 1].ratio {
            (first, last)
        } else {
            (last, first)
        };
        (lo - pad_lo, hi + pad_hi)
    }

    /// Parameter value producing `ratio`. Inside the knot range the curve is
    /// interpolated linearly; in the end cells the end knot is returned.
    pub fn invert(&self, ratio: f64) -> Result<ParamEstimate, AnalysisError> {
        if !self.is_strictly_monotone() {
            return Err(AnalysisError::Invalid(format!(
                "{} curve is not strictly monotone",
                self.param
            )));
        }
        let (lo, hi) = self.calibrated_range();
        if !(ratio >= lo && ratio <= hi) {
            return Err(AnalysisError::OutOfRange { ratio, lo, hi });
        }
        let nearest = self
            .knots
            .iter()
            .min_by(|a, b| (a.ratio - ratio).abs().total_cmp(&(b.ratio - ratio).abs()))
            .expect("non-empty");
        let seg = self
            .knots
            .windows(2)
            .find(|w| (ratio - w[0].ratio) * (ratio - w[1].ratio) <= 0.0);
        let Some(seg) = seg else {
            // end cell: the closest segment gives the slope
            let n = self.knots.len();
            let (a, b) = if nearest.param == self.knots[0].param {
                (self.knots[0], self.knots[1])
            } else {
                (self.knots[n - 2], self.knots[n - 1])
            };
            return Ok(ParamEstimate {
                value: nearest.param,
                nearest_knot: nearest.param,
                sensitivity: (b.ratio - a.ratio) / (b.param - a.param),
            });
        };
        let (a, b) = (seg[0], seg[1]);
        let slope = (b.ratio - a.ratio) / (b.param - a.param);
        let value = if ratio == a.ratio {
            a.param
        } else if ratio == b.ratio {
            b.param
        } else {
            a.param + (ratio - a.ratio) / slope
        };
        Ok(ParamEstimate {
            value,
            nearest_knot: nearest.param,
            sensitivity: slope,
        })
    }
}

/// Median ratio versus group size `m` at fixed offset `e`.
pub fn build_m_curve(ms: &[usize], e: f64, cfg: &GroupCurveConfig) -> Result<CalibrationCurve, AnalysisError> {
    let knots = ms
        .iter()
        .map(|&m| Ok(Knot { param: m as f64, ratio: median_ratio(m, e, cfg)? }))
        .collect::<Result<Vec<_>, AnalysisError>>()?;
    Ok(CalibrationCurve::new("m", knots))
}

/// Median ratio versus coupling offset `e` at fixed group size `m`.
pub fn build_e_curve(m: usize, es: &[f64], cfg: &GroupCurveConfig) -> Result<CalibrationCurve, AnalysisError> {
    let knots = es
        .iter()
        .map(|&e| Ok(Knot { param: e, ratio: median_ratio(m, e, cfg)? }))
        .collect::<Result<Vec<_>, AnalysisError>>()?;
    Ok(CalibrationCurve::new("e", knots))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCalibration {
    pub m_curve: CalibrationCurve,
    pub e_curve: Option<CalibrationCurve>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupEstimate {
    pub m: ParamEstimate,
    /// Present when an e-curve is available and covers the ratio.
    pub e: Option<ParamEstimate>,
}

/// Invert the calibration curves for a measured ratio. The group size is
/// required; the spread estimate is best-effort.
pub fn estimate_group_stats(ratio: f64, cal: &GroupCalibration) -> Result<GroupEstimate, AnalysisError> {
    let m = cal.m_curve.invert(ratio)?;
    let e = match &cal.e_curve {
        Some(c) => match c.invert(ratio) {
            Ok(v) => Some(v),
            Err(AnalysisError::OutOfRange { .. }) => None,
            Err(err) => return Err(err),
        },
        None => None,
    };
    Ok(GroupEstimate { m, e })
}
