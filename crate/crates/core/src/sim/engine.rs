use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use super::trace::{DeviceMeta, Divergence, Engine, EventKind, SimTrace, TraceEvent};
use super::{
    dac_quantize, Action, DeviceSpec, EmissionSource, MirrorGain, Role, Scenario, SimError,
    DAC_LIMIT, VOLTS_PER_COUNT,
};
use crate::core_maps::{coupled_step_bounded, logistic_step, MapError, OscState};
use crate::medium::{mirror_response, CouplingMatrix, NoiseStream, Receiver};

/// Event times are integers in femtoseconds so that long runs accumulate no
/// rounding drift: tick k of a device is exactly offset + k·period.
const FS_PER_S: f64 = 1e15;

fn to_fs(t: f64) -> u64 {
    (t * FS_PER_S).round() as u64
}

struct Dev {
    spec: DeviceSpec,
    scale: f64,
    state: OscState,
    active: bool,
    receiver: Receiver,
    memory: VecDeque<f64>,
    memory_cap: usize,
    mirror_gain: Option<f64>,
    volts: f64,
    xi_o: f64,
    saturated: bool,
    period_fs: u64,
    offset_fs: u64,
    pulse_fs: u64,
    pulse_start: u64,
    tick: u64,
    schedule: Vec<(u64, Action)>,
    next_event: usize,
}

impl Dev {
    fn time_fs(&self) -> u64 {
        self.offset_fs + self.tick * self.period_fs
    }

    fn pulse_active(&self, t: u64) -> bool {
        t >= self.pulse_start && t < self.pulse_start + self.pulse_fs
    }
}

struct Network {
    g: CouplingMatrix,
    devs: Vec<Dev>,
    noise: NoiseStream,
    quantize: bool,
    bound: f64,
    /// Whether pulses have finite duration (event engine) or persist for the
    /// whole step (synchronous engine).
    pulsed: bool,
    trace: SimTrace,
}

impl Network {
    fn new(s: &Scenario, engine: Engine) -> Result<Option<Self>, SimError> {
        s.validate()?;
        if s.devices.is_empty() {
            return Ok(None);
        }
        let g = s.coupling_matrix()?;
        let x0 = s.initial_states();
        let mut devs = Vec::with_capacity(s.devices.len());
        let mut meta = Vec::with_capacity(s.devices.len());
        for (i, spec) in s.devices.iter().enumerate() {
            let period = spec.effective_period();
            let gamma = spec.delay.gamma;
            let window = match spec.mirror.gain {
                MirrorGain::Calibrated { window, .. } => window,
                MirrorGain::Fixed { .. } => 0,
            };
            let mut schedule: Vec<(u64, Action)> = s
                .schedule
                .iter()
                .filter(|e| e.device == i)
                .map(|e| (e.step, e.action))
                .collect();
            schedule.sort_by_key(|e| e.0);
            let period_fs = to_fs(period).max(1);
            devs.push(Dev {
                spec: *spec,
                scale: spec.volts_per_unit(),
                state: OscState::new(x0[i], gamma),
                active: spec.active,
                receiver: Receiver::new(s.chain, period),
                memory: VecDeque::new(),
                memory_cap: (gamma + 1).max(window + 1),
                mirror_gain: None,
                volts: 0.0,
                xi_o: 0.0,
                saturated: false,
                period_fs,
                offset_fs: to_fs(spec.clock_offset),
                pulse_fs: to_fs(spec.pulse_duration).clamp(1, period_fs),
                pulse_start: u64::MAX / 2,
                tick: 0,
                schedule,
                next_event: 0,
            });
            meta.push(DeviceMeta {
                id: i,
                role: spec.role,
                period_s: period,
                nominal_period_s: spec.clock_period,
                volts_per_unit: spec.volts_per_unit(),
                gains: spec.gains,
            });
        }
        Ok(Some(Self {
            g,
            devs,
            noise: s.noise.stream_on(s.seed),
            quantize: s.quantize,
            bound: s.blowup_bound,
            pulsed: engine == Engine::EventDriven,
            trace: SimTrace::new(engine, meta),
        }))
    }

    fn log(&mut self, i: usize, kind: EventKind) {
        let d = &self.devs[i];
        self.trace.events.push(TraceEvent {
            time_s: d.time_fs() as f64 / FS_PER_S,
            step: d.tick,
            device: i,
            kind,
        });
    }

    fn apply_schedule(&mut self, i: usize) {
        loop {
            let d = &self.devs[i];
            let Some(&(step, action)) = d.schedule.get(d.next_event) else {
                return;
            };
            if step > d.tick {
                return;
            }
            let d = &mut self.devs[i];
            d.next_event += 1;
            let on = action == Action::Activate;
            if d.active != on {
                d.active = on;
                self.log(i, if on { EventKind::Activated } else { EventKind::Deactivated });
            }
        }
    }

    fn diverge(&mut self, i: usize, value: f64) {
        self.log(i, EventKind::Diverged { value });
        self.trace.divergence = Some(Divergence {
            device: i,
            step: self.devs[i].tick,
            value,
        });
    }

    /// Oscillator writes its DAC. Returns false if the emission itself blew up.
    fn emit(&mut self, i: usize, t: u64) -> bool {
        let quantize = self.quantize;
        let d = &mut self.devs[i];
        if !d.active {
            d.volts = 0.0;
            d.xi_o = 0.0;
            return true;
        }
        let xi_o = match d.spec.emission {
            EmissionSource::State => d.state.x,
            EmissionSource::Output => match logistic_step(d.state.x, d.spec.map) {
                Ok(v) => v,
                Err(_) => {
                    let x = d.state.x;
                    self.diverge(i, x);
                    return false;
                }
            },
        };
        let mut saturated = None;
        let (volts, emitted) = if quantize {
            let counts = match dac_quantize(xi_o, d.spec.k_dac) {
                Ok(c) => c,
                Err(_) => {
                    saturated = Some(xi_o);
                    let rail = DAC_LIMIT - 1;
                    if xi_o.is_sign_negative() { -rail } else { rail }
                }
            };
            (counts as f64 * VOLTS_PER_COUNT, counts as f64 / d.spec.k_dac)
        } else {
            (xi_o * d.scale, xi_o)
        };
        d.volts = volts;
        d.xi_o = emitted;
        d.pulse_start = t;
        if let Some(value) = saturated {
            if !d.saturated {
                d.saturated = true;
                self.log(i, EventKind::Saturated { value });
            }
        }
        true
    }

    fn field(&self, t: u64, skip_mirrors: bool) -> Vec<f64> {
        self.devs
            .iter()
            .map(|d| {
                let live = !self.pulsed || d.pulse_active(t);
                if !live || d.spec.role == Role::Listener || (skip_mirrors && d.spec.role == Role::Mirror) {
                    0.0
                } else {
                    d.volts
                }
            })
            .collect()
    }

    fn sense(&mut self, i: usize, volts: &[f64]) -> f64 {
        let d = &mut self.devs[i];
        let v = d
            .receiver
            .sense(self.g.row(i), volts, &mut self.noise)
            .expect("coupling row matches device count");
        v / d.scale
    }

    fn record(&mut self, i: usize, x: f64, xi_o: f64, xi_w: f64) {
        let d = &self.devs[i];
        let t = d.time_fs() as f64 / FS_PER_S;
        self.trace.devices[i].push(d.tick, t, x, xi_o, xi_w);
    }

    fn reflect(&mut self, i: usize, t: u64) {
        let volts = self.field(t, true);
        let xi_w = self.sense(i, &volts);
        let d = &mut self.devs[i];
        let gamma = d.spec.delay.gamma;
        if d.active && d.mirror_gain.is_none() {
            let gain = match d.spec.mirror.gain {
                MirrorGain::Fixed { gain } => gain,
                MirrorGain::Calibrated { target, window } => {
                    let recent: Vec<f64> = d.memory.iter().rev().take(window).copied().collect();
                    let rms = if recent.is_empty() {
                        0.0
                    } else {
                        (recent.iter().map(|v| v * v).sum::<f64>() / recent.len() as f64).sqrt()
                    };
                    if rms > 0.0 { target / rms } else { 0.0 }
                }
            };
            d.mirror_gain = Some(gain);
            self.log(i, EventKind::MirrorGainSet { gain });
        }
        let d = &mut self.devs[i];
        if d.memory.len() == d.memory_cap {
            d.memory.pop_front();
        }
        d.memory.push_back(xi_w);
        let xi_o = match (d.active, d.mirror_gain) {
            (true, Some(gain)) => {
                let hist = d.memory.make_contiguous();
                mirror_response(hist, gamma, gain, d.spec.mirror.invert).unwrap_or(0.0)
            }
            _ => 0.0,
        };
        d.xi_o = xi_o;
        d.volts = xi_o * d.scale;
        d.pulse_start = t;
        self.record(i, xi_o, xi_o, xi_w);
    }

    /// Read the field and advance the map. Returns false on divergence.
    fn iterate(&mut self, i: usize, volts: &[f64]) -> bool {
        let xi_w = self.sense(i, volts);
        let d = &self.devs[i];
        if d.spec.role == Role::Listener {
            self.record(i, 0.0, 0.0, xi_w);
            return true;
        }
        let (spec, active, x, xi_o) = (d.spec, d.active, d.state.x, d.xi_o);
        let (x1, x2) = (d.state.lag(1), d.state.lag(2));
        self.record(i, x, xi_o, xi_w);
        if !active {
            return true;
        }
        let next = coupled_step_bounded(x, spec.map, spec.gains, xi_w, xi_o, self.bound).and_then(|v| {
            if spec.delay.k3 == 0.0 && spec.delay.k4 == 0.0 {
                return Ok(v);
            }
            let v = v + spec.delay.k3 * x1 + spec.delay.k4 * x2;
            if v.is_finite() && v.abs() <= self.bound {
                Ok(v)
            } else {
                Err(MapError::Divergence { value: v })
            }
        });
        match next {
            Ok(v) => {
                self.devs[i].state.push(v);
                true
            }
            Err(e) => {
                let value = match e {
                    MapError::Divergence { value } => value,
                    _ => f64::NAN,
                };
                self.diverge(i, value);
                false
            }
        }
    }

    /// One tick of every device in `group` (all ticking at instant `t`):
    /// oscillators write, mirrors record and re-emit, everyone else reads
    /// and iterates. Returns false once the run must stop.
    fn tick_group(&mut self, group: &[usize], t: u64) -> bool {
        for &i in group {
            self.apply_schedule(i);
        }
        for &i in group {
            if self.devs[i].spec.role == Role::Oscillator && !self.emit(i, t) {
                return false;
            }
        }
        for &i in group {
            if self.devs[i].spec.role == Role::Mirror {
                self.reflect(i, t);
            }
        }
        let volts = self.field(t, false);
        for &i in group {
            if self.devs[i].spec.role != Role::Mirror && !self.iterate(i, &volts) {
                return false;
            }
        }
        for &i in group {
            self.devs[i].tick += 1;
        }
        true
    }
}

fn empty_trace(engine: Engine) -> SimTrace {
    SimTrace::new(engine, Vec::new())
}

/// Advance all devices in lock-step for `n_steps` ticks.
///
/// Every device senses the field produced by the emissions of the current
/// step and only then updates. A divergence stops the run; the trace up to
/// that point is returned with [`SimTrace::divergence`] set.
pub fn run_synchronous(scenario: &Scenario, n_steps: u64) -> Result<SimTrace, SimError> {
    let Some(mut net) = Network::new(scenario, Engine::Synchronous)? else {
        return Ok(empty_trace(Engine::Synchronous));
    };
    let all: Vec<usize> = (0..net.devs.len()).collect();
    for _ in 0..n_steps {
        let t = net.devs[0].time_fs();
        if !net.tick_group(&all, t) {
            break;
        }
    }
    Ok(net.trace)
}

/// Let every device tick on its own clock for `duration_s` seconds.
///
/// Emissions are rectangular pulses lasting `pulse_duration`; a receiver
/// hears only the pulses active at its sampling instant. Devices that share
/// an instant are processed together in the same order as in
/// [`run_synchronous`], so with identical clocks the two engines agree.
pub fn run_event_driven(scenario: &Scenario, duration_s: f64) -> Result<SimTrace, SimError> {
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(SimError::Invalid(format!(
            "duration must be positive, got {duration_s}"
        )));
    }
    let Some(mut net) = Network::new(scenario, Engine::EventDriven)? else {
        return Ok(empty_trace(Engine::EventDriven));
    };
    let end = to_fs(duration_s);
    let mut queue: BinaryHeap<Reverse<(u64, usize)>> = net
        .devs
        .iter()
        .enumerate()
        .filter(|(_, d)| d.offset_fs < end)
        .map(|(i, d)| Reverse((d.offset_fs, i)))
        .collect();
    let mut group = Vec::new();
    while let Some(Reverse((t, first))) = queue.pop() {
        group.clear();
        group.push(first);
        while let Some(&Reverse((t2, j))) = queue.peek() {
            if t2 != t {
                break;
            }
            queue.pop();
            group.push(j);
        }
        group.sort_unstable();
        if !net.tick_group(&group, t) {
            break;
        }
        for &i in &group {
            let next = net.devs[i].time_fs();
            if next < end {
                queue.push(Reverse((next, i)));
            }
        }
    }
    Ok(net.trace)
}
