//! Time stepping of whole device populations.
//!
//! Two engines share one device model: [`run_synchronous`] advances every
//! device in lock-step (the numerical-study setting), [`run_event_driven`]
//! lets every device tick on its own skewed clock and models emissions as
//! rectangular pulses (the hardware setting).

mod calibrate;
mod engine;
mod trace;

pub use calibrate::calibrate_k1;
pub use engine::{run_event_driven, run_synchronous};
pub use trace::{DeviceMeta, DeviceTrace, Divergence, Engine, EventKind, SimTrace, TraceEvent};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core_maps::{CouplingGains, DelayGains, MapParams, DEFAULT_BLOWUP_BOUND};
use crate::medium::{
    coupling_from_geometry, CouplingMatrix, CouplingSampler, DipolePose, MediumError, NoiseModel,
    SensingChain,
};

/// Full-scale DAC range: 12 bits signed, ±2048 counts.
pub const DAC_LIMIT: i32 = 2048;
/// Output voltage per DAC count (±5 V over the full signed range).
pub const VOLTS_PER_COUNT: f64 = 5.0 / 2048.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Medium(#[from] MediumError),
    #[error("DAC saturation: {value} × k_dac exceeds ±{DAC_LIMIT} counts")]
    Saturation { value: f64 },
    #[error("calibration failed: {0}")]
    Calibration(String),
}

/// Map a state to signed DAC counts.
pub fn dac_quantize(x: f64, k_dac: f64) -> Result<i32, SimError> {
    let v = x * k_dac;
    if !v.is_finite() || v.abs() >= DAC_LIMIT as f64 {
        return Err(SimError::Saturation { value: x });
    }
    Ok(v.round() as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Oscillator,
    Listener,
    Mirror,
}

/// What an oscillator writes to its DAC each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmissionSource {
    /// The current state xₙ.
    State,
    /// The map output f(xₙ).
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", deny_unknown_fields)]
pub enum MirrorGain {
    Fixed {
        gain: f64,
    },
    /// Choose the gain at activation so the reflected field has the given
    /// RMS (in state units) over the last `window` stored samples.
    Calibrated {
        target: f64,
        window: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MirrorSettings {
    pub gain: MirrorGain,
    pub invert: bool,
}

/// Echo level the default mirror aims for: what a fixed gain of 2 returns
/// to a ten-device swarm, independent of how many devices are listening.
pub const DEFAULT_MIRROR_GAIN: MirrorGain = MirrorGain::Calibrated { target: 0.05, window: 32 };

impl Default for MirrorSettings {
    fn default() -> Self {
        Self {
            gain: DEFAULT_MIRROR_GAIN,
            invert: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceSpec {
    pub role: Role,
    pub map: MapParams,
    pub gains: CouplingGains,
    /// Internal delayed feedback of an oscillator (k3, k4); for a mirror
    /// only `gamma` matters.
    pub delay: DelayGains,
    pub mirror: MirrorSettings,
    pub emission: EmissionSource,
    pub x0: f64,
    /// Nominal clock period, seconds.
    pub clock_period: f64,
    /// Fractional period offset: the actual period is clock_period·(1+skew).
    pub clock_skew: f64,
    /// Time of the first tick, seconds.
    pub clock_offset: f64,
    pub pulse_duration: f64,
    pub k_dac: f64,
    /// Whether the device starts switched on.
    pub active: bool,
}

impl Default for DeviceSpec {
    fn default() -> Self {
        Self {
            role: Role::Oscillator,
            map: MapParams::default(),
            gains: CouplingGains::default(),
            delay: DelayGains::default(),
            mirror: MirrorSettings::default(),
            emission: EmissionSource::State,
            x0: 0.1,
            clock_period: 2e-3,
            clock_skew: 0.0,
            clock_offset: 0.0,
            pulse_duration: 2e-3,
            k_dac: 2000.0,
            active: true,
        }
    }
}

impl DeviceSpec {
    pub fn oscillator(alpha: f64, x0: f64) -> Self {
        Self {
            map: MapParams::new(alpha),
            x0,
            ..Self::default()
        }
    }

    pub fn listener() -> Self {
        Self {
            role: Role::Listener,
            ..Self::default()
        }
    }

    pub fn mirror(gamma: usize, gain: MirrorGain) -> Self {
        Self {
            role: Role::Mirror,
            delay: DelayGains {
                gamma,
                ..DelayGains::default()
            },
            mirror: MirrorSettings {
                gain,
                invert: false,
            },
            ..Self::default()
        }
    }

    /// Volts on the wire per unit of state.
    pub fn volts_per_unit(&self) -> f64 {
        self.k_dac * VOLTS_PER_COUNT
    }

    pub fn effective_period(&self) -> f64 {
        self.clock_period * (1.0 + self.clock_skew)
    }

    pub fn validate(&self, index: usize) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::Invalid(format!("device {index}: {msg}")));
        if !self.map.alpha.is_finite() {
            return bad("alpha must be finite".into());
        }
        let g = &self.gains;
        if !(g.k1_pos >= 0.0 && g.k1_neg >= 0.0 && g.k1_pos.is_finite() && g.k1_neg.is_finite()) {
            return bad("k1 gains must be finite and non-negative".into());
        }
        if !g.k2.is_finite() || !self.delay.k3.is_finite() || !self.delay.k4.is_finite() {
            return bad("k2, k3, k4 must be finite".into());
        }
        if !(self.clock_period > 0.0 && self.clock_period.is_finite()) {
            return bad("clock_period must be positive".into());
        }
        if !(self.effective_period() > 0.0) {
            return bad("clock_skew makes the period non-positive".into());
        }
        if !(self.clock_offset >= 0.0 && self.clock_offset.is_finite()) {
            return bad("clock_offset must be non-negative".into());
        }
        if !(self.pulse_duration > 0.0 && self.pulse_duration <= self.clock_period) {
            return bad("pulse_duration must lie in (0, clock_period]".into());
        }
        if !(self.k_dac > 0.0 && self.k_dac.is_finite()) {
            return bad("k_dac must be positive".into());
        }
        if !self.x0.is_finite() || (self.x0 * self.k_dac).abs() >= DAC_LIMIT as f64 {
            return bad(format!("|x0·k_dac| must stay below {DAC_LIMIT}"));
        }
        match self.mirror.gain {
            MirrorGain::Fixed { gain } if !gain.is_finite() => bad("mirror gain must be finite".into()),
            MirrorGain::Calibrated { target, window }
                if !(target > 0.0 && target.is_finite()) || window == 0 =>
            {
                bad("calibrated mirror needs a positive target and window".into())
            }
            _ => Ok(()),
        }
    }
}

/// How the coupling matrix of a scenario is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum CouplingSource {
    /// Random per-emitter weights; mirrors are heard with `mirror_coupling`.
    Sampled {
        #[serde(default = "default_offset")]
        offset: f64,
        #[serde(default = "default_spread")]
        spread: f64,
        #[serde(default = "default_true")]
        include_self: bool,
        #[serde(default = "default_one")]
        mirror_coupling: f64,
    },
    /// Power-law couplings from device poses (one per device).
    Geometric {
        poses: Vec<DipolePose>,
        #[serde(default = "default_decay")]
        decay_exponent: f64,
        ref_gain: f64,
        /// What each device hears of its own emission.
        #[serde(default)]
        self_gain: f64,
    },
    /// Rows of the matrix written out.
    Explicit { rows: Vec<Vec<f64>> },
}

fn default_offset() -> f64 {
    -0.01
}
fn default_spread() -> f64 {
    3e-3
}
fn default_true() -> bool {
    true
}
fn default_one() -> f64 {
    1.0
}
fn default_decay() -> f64 {
    crate::medium::DEFAULT_DECAY_EXPONENT
}

impl CouplingSource {
    pub fn sampled(offset: f64) -> Self {
        Self::Sampled {
            offset,
            spread: default_spread(),
            include_self: true,
            mirror_coupling: 1.0,
        }
    }
}

/// Exactly one way of bounding a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeBound {
    Steps(u64),
    Duration(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Activate,
    Deactivate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledEvent {
    pub device: usize,
    /// Tick index (of that device's own clock) at which the action applies,
    /// before the device emits.
    pub step: u64,
    pub action: Action,
}

/// Draw the oscillators' initial states uniformly from [lo, hi).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomInit {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub devices: Vec<DeviceSpec>,
    pub coupling: CouplingSource,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub chain: SensingChain,
    pub bound: TimeBound,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub schedule: Vec<ScheduledEvent>,
    #[serde(default)]
    pub initial: Option<RandomInit>,
    /// Quantize oscillator emissions to DAC counts (saturating at the rails).
    #[serde(default)]
    pub quantize: bool,
    #[serde(default = "default_bound")]
    pub blowup_bound: f64,
}

fn default_bound() -> f64 {
    DEFAULT_BLOWUP_BOUND
}

const STREAM_COUPLING: u64 = 1;
const STREAM_INIT: u64 = 2;

impl Scenario {
    pub fn new(devices: Vec<DeviceSpec>, coupling: CouplingSource, bound: TimeBound) -> Self {
        Self {
            devices,
            coupling,
            noise: NoiseModel::off(),
            chain: SensingChain::default(),
            bound,
            seed: 0,
            schedule: Vec::new(),
            initial: None,
            quantize: false,
            blowup_bound: DEFAULT_BLOWUP_BOUND,
        }
    }

    /// A population of identical oscillators with random per-emitter
    /// couplings (optionally followed by mirrors), coupled through their
    /// states with unit water gain and no self-cancellation.
    pub fn swarm(m: usize, offset: f64, steps: u64, seed: u64) -> Self {
        let osc = DeviceSpec {
            gains: CouplingGains::new(0.0, 0.0, 1.0),
            ..DeviceSpec::default()
        };
        let mut s = Self::new(vec![osc; m], CouplingSource::sampled(offset), TimeBound::Steps(steps));
        s.seed = seed;
        s.initial = Some(RandomInit { lo: 0.0, hi: 0.1 });
        s
    }

    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (i, d) in self.devices.iter().enumerate() {
            d.validate(i)?;
        }
        match self.bound {
            TimeBound::Steps(_) => {}
            TimeBound::Duration(t) if t > 0.0 && t.is_finite() => {}
            TimeBound::Duration(t) => {
                return Err(SimError::Invalid(format!("duration must be positive, got {t}")))
            }
        }
        let m = self.devices.len();
        match &self.coupling {
            CouplingSource::Sampled {
                offset,
                spread,
                mirror_coupling,
                ..
            } => {
                if !(offset.is_finite() && *spread >= 0.0 && spread.is_finite() && mirror_coupling.is_finite()) {
                    return Err(SimError::Invalid("sampled coupling parameters must be finite".into()));
                }
            }
            CouplingSource::Geometric { poses, .. } if poses.len() != m => {
                return Err(SimError::Invalid(format!(
                    "{} poses for {m} devices",
                    poses.len()
                )))
            }
            CouplingSource::Explicit { rows } if rows.len() != m => {
                return Err(SimError::Invalid(format!(
                    "coupling has {} rows for {m} devices",
                    rows.len()
                )))
            }
            _ => {}
        }
        self.noise.validate()?;
        self.chain.validate()?;
        for ev in &self.schedule {
            if ev.device >= m {
                return Err(SimError::Invalid(format!(
                    "schedule refers to device {} of {m}",
                    ev.device
                )));
            }
        }
        if let Some(init) = self.initial {
            if !(init.lo.is_finite() && init.hi.is_finite() && init.lo <= init.hi) {
                return Err(SimError::Invalid("initial range must satisfy lo ≤ hi".into()));
            }
        }
        if !(self.blowup_bound > 0.0) {
            return Err(SimError::Invalid("blowup_bound must be positive".into()));
        }
        if m > 0 {
            self.coupling_matrix()?;
        }
        Ok(())
    }

    /// The coupling matrix this scenario resolves to (deterministic in seed).
    pub fn coupling_matrix(&self) -> Result<CouplingMatrix, SimError> {
        let m = self.devices.len();
        if m == 0 {
            return Err(SimError::Invalid("no devices".into()));
        }
        let g = match &self.coupling {
            CouplingSource::Sampled {
                offset,
                spread,
                include_self,
                mirror_coupling,
            } => {
                let sampler = CouplingSampler {
                    offset: *offset,
                    spread: *spread,
                    include_self: *include_self,
                };
                let base = sampler.sample(m, &mut self.rng(STREAM_COUPLING));
                let mut g = base.clone();
                for j in 0..m {
                    let role = self.devices[j].role;
                    for i in 0..m {
                        let v = match role {
                            Role::Mirror if i == j => 0.0,
                            Role::Mirror => *mirror_coupling,
                            Role::Listener => 0.0,
                            Role::Oscillator => base.get(i, j),
                        };
                        g.set(i, j, v);
                    }
                }
                g
            }
            CouplingSource::Geometric {
                poses,
                decay_exponent,
                ref_gain,
                self_gain,
            } => {
                let mut g = coupling_from_geometry(poses, *decay_exponent, *ref_gain)?;
                for i in 0..m {
                    g.set(i, i, *self_gain);
                }
                g
            }
            CouplingSource::Explicit { rows } => CouplingMatrix::from_rows(rows)?,
        };
        Ok(g)
    }

    /// Initial states after applying the random-init policy.
    pub fn initial_states(&self) -> Vec<f64> {
        let mut rng = self.rng(STREAM_INIT);
        self.devices
            .iter()
            .map(|d| match (self.initial, d.role) {
                (Some(RandomInit { lo, hi }), Role::Oscillator) => {
                    if hi > lo {
                        rng.random_range(lo..hi)
                    } else {
                        lo
                    }
                }
                _ => d.x0,
            })
            .collect()
    }

    pub fn count(&self, role: Role) -> usize {
        self.devices.iter().filter(|d| d.role == role).count()
    }
}
