use serde::Serialize;

use super::AnalysisError;
use crate::sim::{Role, SimTrace};

/// Default dispersion threshold for synchronization (state units).
pub const DEFAULT_SYNC_EPSILON: f64 = 1e-3;

/// Hysteresis half-band for beat detection, as a fraction of the RMS range.
const BEAT_HYSTERESIS: f64 = 0.25;

/// Population standard deviation across devices at every step. All
/// sequences are truncated to the shortest.
pub fn dispersion_series(states: &[&[f64]]) -> Vec<f64> {
    let n = states.iter().map(|s| s.len()).min().unwrap_or(0);
    if states.is_empty() {
        return Vec::new();
    }
    let m = states.len() as f64;
    (0..n)
        .map(|k| {
            let mean = states.iter().map(|s| s[k]).sum::<f64>() / m;
            let var = states.iter().map(|s| (s[k] - mean).powi(2)).sum::<f64>() / m;
            var.sqrt()
        })
        .collect()
}

/// First step from which the dispersion stays below `epsilon` until the end
/// of the record; `None` if it never settles.
pub fn time_to_sync(dispersion: &[f64], epsilon: f64) -> Option<usize> {
    let last_bad = dispersion.iter().rposition(|&d| !(d < epsilon));
    match last_bad {
        None if dispersion.is_empty() => None,
        None => Some(0),
        Some(i) if i + 1 < dispersion.len() => Some(i + 1),
        Some(_) => None,
    }
}

/// Mean of x[n−1]/x[n] over the steps n ≥ `start` at which x[n] > 0, i.e.
/// the ratio taken across each positive half-cycle.
pub fn cycle_ratio(x: &[f64], start: usize) -> Option<f64> {
    let (sum, count) = (start.max(1)..x.len())
        .filter(|&n| x[n] > 0.0)
        .map(|n| x[n - 1] / x[n])
        .filter(|r| r.is_finite())
        .fold((0.0, 0usize), |(s, c), r| (s + r, c + 1));
    (count > 0).then(|| sum / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeStatus {
    /// At least one full beat was observed.
    Measured,
    /// The envelope moves but the record does not span a full beat.
    ShorterThanBeat,
    /// The envelope is flat: no beating at all.
    NoBeat,
    /// Nothing to measure on.
    NoChannel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Envelope {
    /// Extremes of the windowed AC RMS over whole beats.
    pub max: f64,
    pub min: f64,
    pub beat_period_s: f64,
    pub beats: usize,
}

/// Sliding AC RMS (mean removed per window) of `v`; entry k covers
/// `v[k..k + window]`.
fn sliding_ac_rms(v: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || v.len() < window {
        return Vec::new();
    }
    let mut s1 = vec![0.0; v.len() + 1];
    let mut s2 = vec![0.0; v.len() + 1];
    for (i, &x) in v.iter().enumerate() {
        s1[i + 1] = s1[i] + x;
        s2[i + 1] = s2[i] + x * x;
    }
    let w = window as f64;
    (0..=v.len() - window)
        .map(|k| {
            let mean = (s1[k + window] - s1[k]) / w;
            let sq = (s2[k + window] - s2[k]) / w;
            (sq - mean * mean).max(0.0).sqrt()
        })
        .collect()
}

/// Envelope of a sampled field: the AC RMS over `window` samples, tracked
/// across beats. Beats are counted on hysteresis crossings of the RMS
/// midline; extremes are taken between the first and last upward crossing so
/// that only whole beats contribute.
pub fn envelope(values: &[f64], time_s: &[f64], window: usize) -> (Option<Envelope>, EnvelopeStatus) {
    if values.is_empty() || values.len() != time_s.len() || window == 0 {
        return (None, EnvelopeStatus::NoChannel);
    }
    let rms = sliding_ac_rms(values, window);
    if rms.len() < 2 {
        return (None, EnvelopeStatus::ShorterThanBeat);
    }
    let hi = rms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = rms.iter().copied().fold(f64::INFINITY, f64::min);
    let range = hi - lo;
    if !(range > 1e-9 * hi.abs().max(f64::MIN_POSITIVE)) {
        return (None, EnvelopeStatus::NoBeat);
    }
    let mid = 0.5 * (hi + lo);
    let band = BEAT_HYSTERESIS * range;
    let mut low = rms[0] < mid;
    let mut ups = Vec::new();
    for (k, &r) in rms.iter().enumerate() {
        if low && r > mid + band {
            low = false;
            ups.push(k);
        } else if !low && r < mid - band {
            low = true;
        }
    }
    if ups.len() < 2 {
        return (None, EnvelopeStatus::ShorterThanBeat);
    }
    let (first, last) = (ups[0], *ups.last().unwrap());
    let span = &rms[first..=last];
    let max = span.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = span.iter().copied().fold(f64::INFINITY, f64::min);
    let beats = ups.len() - 1;
    let beat_period_s = (time_s[last] - time_s[first]) / beats as f64;
    (Some(Envelope { max, min, beat_period_s, beats }), EnvelopeStatus::Measured)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyncMetrics {
    pub time_to_sync: Option<usize>,
    pub dispersion: Vec<f64>,
    pub envelope: Option<Envelope>,
    pub envelope_status: EnvelopeStatus,
    /// Cycle ratio of the population-mean trajectory after synchronization
    /// (or over the second half of the record, whichever starts later).
    pub ratio: Option<f64>,
}

/// Synchronization and envelope metrics of a run. The envelope channel is
/// the first listener if there is one, else oscillator 0's sensed field; its
/// RMS window spans two oscillator ticks.
pub fn sync_envelope_metrics(trace: &SimTrace, epsilon: f64) -> Result<SyncMetrics, AnalysisError> {
    if !(epsilon > 0.0) {
        return Err(AnalysisError::Invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let osc = trace.indices(Role::Oscillator);
    let listeners = trace.indices(Role::Listener);
    if osc.len() < 2 && listeners.is_empty() {
        return Err(AnalysisError::InsufficientChannels(
            "need at least two oscillators or one listener".into(),
        ));
    }
    let states = trace.oscillator_states();
    let (dispersion, tts) = if states.len() >= 2 {
        let d = dispersion_series(&states);
        let t = time_to_sync(&d, epsilon);
        (d, t)
    } else {
        (Vec::new(), None)
    };

    let ratio = if states.is_empty() {
        None
    } else {
        let n = states[0].len();
        let mean: Vec<f64> = (0..n)
            .map(|k| states.iter().map(|s| s[k]).sum::<f64>() / states.len() as f64)
            .collect();
        let start = tts.unwrap_or(0).max(n / 2);
        cycle_ratio(&mean, start)
    };

    let channel = listeners.first().copied().or_else(|| osc.first().copied());
    let (env, status) = match channel {
        Some(c) => {
            let osc_period = osc.first().map(|&i| trace.meta[i].period_s).unwrap_or(trace.meta[c].period_s);
            let window = ((2.0 * osc_period / trace.meta[c].period_s).round() as usize).max(2);
            let d = &trace.devices[c];
            envelope(&d.xi_w, &d.time_s, window)
        }
        None => (None, EnvelopeStatus::NoChannel),
    };

    Ok(SyncMetrics {
        time_to_sync: tts,
        dispersion,
        envelope: env,
        envelope_status: status,
        ratio,
    })
}
