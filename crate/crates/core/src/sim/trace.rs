use serde::{Deserialize, Serialize};

use super::Role;
use crate::core_maps::CouplingGains;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Synchronous,
    EventDriven,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceMeta {
    pub id: usize,
    pub role: Role,
    /// Actual tick period (seconds), skew included.
    pub period_s: f64,
    /// Nominal period of the device's clock (seconds).
    pub nominal_period_s: f64,
    /// Volts per state unit on this device's DAC/ADC.
    pub volts_per_unit: f64,
    pub gains: CouplingGains,
}

/// One device's recorded sequences; all vectors have equal length.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DeviceTrace {
    pub step: Vec<u64>,
    pub time_s: Vec<f64>,
    /// State xₙ at the tick (for mirrors: the reflected value, state units).
    pub x: Vec<f64>,
    /// Emitted signal ξᵒ in state units.
    pub xi_o: Vec<f64>,
    /// Sensed field ξʷ in state units.
    pub xi_w: Vec<f64>,
}

impl DeviceTrace {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub(crate) fn push(&mut self, step: u64, time_s: f64, x: f64, xi_o: f64, xi_w: f64) {
        self.step.push(step);
        self.time_s.push(time_s);
        self.x.push(x);
        self.xi_o.push(xi_o);
        self.xi_w.push(xi_w);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EventKind {
    Activated,
    Deactivated,
    /// An emission hit the DAC rails and was clamped.
    Saturated { value: f64 },
    MirrorGainSet { gain: f64 },
    Calibrated { k1_pos: f64, k1_neg: f64 },
    Diverged { value: f64 },
}

impl EventKind {
    pub fn label(&self) -> &'static str {
        match self {
            EventKind::Activated => "activated",
            EventKind::Deactivated => "deactivated",
            EventKind::Saturated { .. } => "saturated",
            EventKind::MirrorGainSet { .. } => "mirror_gain",
            EventKind::Calibrated { .. } => "calibrated",
            EventKind::Diverged { .. } => "diverged",
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            EventKind::Saturated { value } | EventKind::Diverged { value } => value,
            EventKind::MirrorGainSet { gain } => gain,
            EventKind::Calibrated { k1_pos, .. } => k1_pos,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time_s: f64,
    pub step: u64,
    pub device: usize,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub device: usize,
    pub step: u64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub engine: Engine,
    pub meta: Vec<DeviceMeta>,
    pub devices: Vec<DeviceTrace>,
    pub events: Vec<TraceEvent>,
    /// Set when a device escaped; the trace stops at that tick.
    pub divergence: Option<Divergence>,
}

impl SimTrace {
    pub(crate) fn new(engine: Engine, meta: Vec<DeviceMeta>) -> Self {
        let n = meta.len();
        Self {
            engine,
            meta,
            devices: vec![DeviceTrace::default(); n],
            events: Vec::new(),
            divergence: None,
        }
    }

    pub fn is_diverged(&self) -> bool {
        self.divergence.is_some()
    }

    pub fn indices(&self, role: Role) -> Vec<usize> {
        self.meta
            .iter()
            .filter(|m| m.role == role)
            .map(|m| m.id)
            .collect()
    }

    /// State sequences of all oscillators, truncated to the shortest.
    pub fn oscillator_states(&self) -> Vec<&[f64]> {
        let idx = self.indices(Role::Oscillator);
        let n = idx.iter().map(|&i| self.devices[i].len()).min().unwrap_or(0);
        idx.iter().map(|&i| &self.devices[i].x[..n]).collect()
    }

    /// Multiply every recorded signal by `c` (used to probe scale invariance
    /// of the analyses).
    pub fn scaled(&self, c: f64) -> Self {
        let mut t = self.clone();
        for d in &mut t.devices {
            for v in d.x.iter_mut().chain(d.xi_o.iter_mut()).chain(d.xi_w.iter_mut()) {
                *v *= c;
            }
        }
        t
    }
}
