//! Current-mode sensing: dipoles driven at fixed frequencies, each reading
//! the RMS of the current through its own electrodes. Other dipoles show up
//! as added tones and beats, objects as a change of the coupling between
//! dipoles.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::medium::{distance, power_law_gain, DipolePose, DEFAULT_DECAY_EXPONENT};

/// Drive frequencies a dipole may use.
pub const FREQUENCY_BAND: (f64, f64) = (70.0, 450.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CurrentModeError {
    #[error("sample rate {fs} Hz must exceed four times the highest frequency ({max_freq} Hz)")]
    Aliasing { fs: f64, max_freq: f64 },
    #[error("dipole {index}: {reason}")]
    InvalidDipole { index: usize, reason: String },
    #[error("object {index}: strength must satisfy |s| < 1, got {strength}")]
    InvalidObject { index: usize, strength: f64 },
    #[error("series too short: need {needed} samples, have {available}")]
    TooShort { needed: usize, available: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SineDipole {
    pub frequency: f64,
    /// Drive amplitude in volts.
    pub amplitude: f64,
    pub pose: DipolePose,
    #[serde(default = "yes")]
    pub active: bool,
    /// Drive phase in radians; drawn from the scene seed when absent.
    #[serde(default)]
    pub phase: Option<f64>,
}

fn yes() -> bool {
    true
}

impl SineDipole {
    pub fn new(frequency: f64, amplitude: f64, pose: DipolePose) -> Self {
        Self {
            frequency,
            amplitude,
            pose,
            active: true,
            phase: None,
        }
    }

    fn validate(&self, index: usize) -> Result<(), CurrentModeError> {
        let (lo, hi) = FREQUENCY_BAND;
        let bad = |reason: String| CurrentModeError::InvalidDipole { index, reason };
        if !(self.frequency >= lo && self.frequency <= hi) {
            return Err(bad(format!("frequency {} Hz outside [{lo}, {hi}]", self.frequency)));
        }
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(bad(format!("amplitude must be positive, got {}", self.amplitude)));
        }
        if self.phase.is_some_and(|p| !p.is_finite()) {
            return Err(bad("phase must be finite".into()));
        }
        self.pose.validate().map_err(|e| bad(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    /// Less conductive than water: weakens coupling across it.
    Dielectric,
    /// More conductive than water: strengthens it.
    Conductive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectPerturbation {
    pub kind: ObjectKind,
    pub position: [f64; 3],
    /// Fractional change of a pair's coupling when the object sits at the
    /// pair's midpoint.
    pub strength: f64,
}

impl ObjectPerturbation {
    fn validate(&self, index: usize) -> Result<(), CurrentModeError> {
        if !(self.strength.abs() < 1.0) || self.position.iter().any(|v| !v.is_finite()) {
            return Err(CurrentModeError::InvalidObject { index, strength: self.strength });
        }
        Ok(())
    }

    /// Signed shadowing of the pair (a, b): full strength at the midpoint,
    /// decaying as a Gaussian on the scale of half the pair distance.
    pub fn shadow(&self, a: &[f64; 3], b: &[f64; 3]) -> f64 {
        let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0, (a[2] + b[2]) / 2.0];
        let half = distance(a, b) / 2.0;
        if half == 0.0 {
            return 0.0;
        }
        let w = (-(distance(&self.position, &mid) / half).powi(2)).exp();
        let sign = match self.kind {
            ObjectKind::Dielectric => 1.0,
            ObjectKind::Conductive => -1.0,
        };
        sign * self.strength * w
    }
}

/// How strongly dipoles hear each other in current mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldModel {
    #[serde(default = "default_decay")]
    pub decay_exponent: f64,
    /// Gain of a peer at `ref_distance`.
    pub ref_gain: f64,
    /// Metres.
    pub ref_distance: f64,
    /// Seeds the drive phases that are not given explicitly.
    #[serde(default)]
    pub seed: u64,
    /// RMS of additive white measurement noise (volts).
    #[serde(default)]
    pub noise_rms: f64,
}

fn default_decay() -> f64 {
    DEFAULT_DECAY_EXPONENT
}

impl Default for FieldModel {
    fn default() -> Self {
        Self {
            decay_exponent: DEFAULT_DECAY_EXPONENT,
            ref_gain: 0.05,
            ref_distance: 0.4,
            seed: 0,
            noise_rms: 0.0,
        }
    }
}

impl FieldModel {
    fn validate(&self) -> Result<(), CurrentModeError> {
        if !(self.ref_distance > 0.0 && self.ref_gain.is_finite() && self.decay_exponent.is_finite()) {
            return Err(CurrentModeError::Invalid("field model needs ref_distance > 0 and finite gains".into()));
        }
        if !(self.noise_rms >= 0.0 && self.noise_rms.is_finite()) {
            return Err(CurrentModeError::Invalid("noise_rms must be non-negative".into()));
        }
        Ok(())
    }

    /// Coupling of `sensor` to `peer` with every object's shadowing applied.
    pub fn pair_gain(&self, sensor: &DipolePose, peer: &DipolePose, objects: &[ObjectPerturbation]) -> f64 {
        let d = sensor.distance(peer);
        let base = power_law_gain(d, self.ref_distance, self.decay_exponent, self.ref_gain);
        let shadow: f64 = objects.iter().map(|o| o.shadow(&sensor.position, &peer.position)).sum();
        base * (1.0 - shadow).max(0.0)
    }
}

/// The sensing dipole, its peers and objects in the water.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurrentScene {
    pub sensor: SineDipole,
    #[serde(default)]
    pub dipoles: Vec<SineDipole>,
    #[serde(default)]
    pub objects: Vec<ObjectPerturbation>,
    #[serde(default)]
    pub field: FieldModel,
}

impl CurrentScene {
    /// A sensor at the arena centre with two peers at the default spacing,
    /// using the relative sizes dipole : spacing : group : arena = 1 : 8 :
    /// 24 : 40 with a 5 cm dipole.
    pub fn default_geometry() -> Self {
        let len = DEFAULT_DIPOLE_LENGTH;
        let pose = |x: f64, y: f64| DipolePose {
            position: [x, y, 0.0],
            orientation: [1.0, 0.0, 0.0],
            dipole_length: len,
        };
        Self {
            sensor: SineDipole::new(80.0, 1.0, pose(0.0, 0.0)),
            dipoles: vec![
                SineDipole::new(95.0, 1.0, pose(8.0 * len, 0.0)),
                SineDipole::new(125.0, 1.0, pose(0.0, 8.0 * len)),
            ],
            objects: Vec::new(),
            field: FieldModel {
                ref_distance: 8.0 * len,
                ..FieldModel::default()
            },
        }
    }

    pub fn validate(&self) -> Result<(), CurrentModeError> {
        self.sensor.validate(0)?;
        for (i, d) in self.dipoles.iter().enumerate() {
            d.validate(i + 1)?;
            if d.pose.position == self.sensor.pose.position {
                return Err(CurrentModeError::InvalidDipole {
                    index: i + 1,
                    reason: "coincides with the sensor".into(),
                });
            }
        }
        for (i, o) in self.objects.iter().enumerate() {
            o.validate(i)?;
        }
        self.field.validate()
    }

    pub fn max_frequency(&self) -> f64 {
        self.dipoles
            .iter()
            .map(|d| d.frequency)
            .fold(self.sensor.frequency, f64::max)
    }
}

pub const DEFAULT_DIPOLE_LENGTH: f64 = 0.05;
/// Relative sizes of dipole, spacing, group and arena.
pub const GEOMETRY_RATIO: [f64; 4] = [1.0, 8.0, 24.0, 40.0];

/// A change applied to the scene at `time_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneChange {
    pub time_s: f64,
    pub change: Change,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum Change {
    Activate { dipole: usize },
    Deactivate { dipole: usize },
    Move { dipole: usize, position: [f64; 3] },
    InsertObject { object: ObjectPerturbation },
    RemoveObject { object: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeSeries {
    /// Sample rate (Hz).
    pub fs: f64,
    pub t0: f64,
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 / self.fs
    }

    pub fn duration(&self) -> f64 {
        self.values.len() as f64 / self.fs
    }

    /// Samples from `t_start` (inclusive) to `t_end` (exclusive).
    pub fn slice(&self, t_start: f64, t_end: f64) -> TimeSeries {
        let a = (((t_start - self.t0) * self.fs).ceil().max(0.0) as usize).min(self.values.len());
        let b = (((t_end - self.t0) * self.fs).ceil().max(0.0) as usize).clamp(a, self.values.len());
        TimeSeries {
            fs: self.fs,
            t0: self.time(a),
            values: self.values[a..b].to_vec(),
        }
    }
}

fn drive_phases(scene: &CurrentScene) -> Vec<f64> {
    // sensor first, then every peer; each index owns a stream so adding a
    // peer never moves the others' phases
    std::iter::once(&scene.sensor)
        .chain(&scene.dipoles)
        .enumerate()
        .map(|(i, d)| {
            d.phase.unwrap_or_else(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(scene.field.seed);
                rng.set_stream(i as u64);
                rng.random_range(0.0..2.0 * PI)
            })
        })
        .collect()
}

/// Steady scene sensed for `duration_s`.
pub fn simulate_current_field(scene: &CurrentScene, duration_s: f64, fs: f64) -> Result<TimeSeries, CurrentModeError> {
    simulate_timeline(scene, &[], duration_s, fs)
}

/// Signal seen by the sensing dipole: its own drive plus each active peer's
/// tone scaled by the (shadowed) pair gain, with `changes` applied as they
/// come due.
pub fn simulate_timeline(
    scene: &CurrentScene,
    changes: &[SceneChange],
    duration_s: f64,
    fs: f64,
) -> Result<TimeSeries, CurrentModeError> {
    scene.validate()?;
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(CurrentModeError::Invalid(format!("duration must be positive, got {duration_s}")));
    }
    let max_freq = scene.max_frequency();
    if !(fs > 4.0 * max_freq) {
        return Err(CurrentModeError::Aliasing { fs, max_freq });
    }
    let mut changes = changes.to_vec();
    changes.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
    let phases = drive_phases(scene);
    let mut live = scene.clone();
    let n = (duration_s * fs).round() as usize;
    let mut noise = ChaCha8Rng::seed_from_u64(scene.field.seed);
    noise.set_stream(u64::MAX);
    let noise_half_width = scene.field.noise_rms * 3f64.sqrt();

    let gains = |s: &CurrentScene| -> Vec<f64> {
        s.dipoles
            .iter()
            .map(|d| {
                if d.active {
                    s.field.pair_gain(&s.sensor.pose, &d.pose, &s.objects)
                } else {
                    0.0
                }
            })
            .collect()
    };
    let mut g = gains(&live);
    let mut next = 0;
    let mut values = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 / fs;
        let mut dirty = false;
        while next < changes.len() && changes[next].time_s <= t {
            apply(&mut live, &changes[next].change)?;
            next += 1;
            dirty = true;
        }
        if dirty {
            live.validate()?;
            g = gains(&live);
        }
        let s = &live.sensor;
        let mut v = s.amplitude * (2.0 * PI * s.frequency * t + phases[0]).sin();
        for (j, d) in live.dipoles.iter().enumerate() {
            if g[j] != 0.0 {
                v += g[j] * d.amplitude * (2.0 * PI * d.frequency * t + phases[j + 1]).sin();
            }
        }
        if noise_half_width > 0.0 {
            v += noise.random_range(-noise_half_width..noise_half_width);
        }
        values.push(v);
    }
    Ok(TimeSeries { fs, t0: 0.0, values })
}

fn apply(scene: &mut CurrentScene, change: &Change) -> Result<(), CurrentModeError> {
    fn dipole(i: usize, scene: &mut CurrentScene) -> Result<&mut SineDipole, CurrentModeError> {
        let n = scene.dipoles.len();
        scene
            .dipoles
            .get_mut(i)
            .ok_or_else(|| CurrentModeError::Invalid(format!("change refers to dipole {i} of {n}")))
    }
    match *change {
        Change::Activate { dipole: i } => dipole(i, scene)?.active = true,
        Change::Deactivate { dipole: i } => dipole(i, scene)?.active = false,
        Change::Move { dipole: i, position } => dipole(i, scene)?.pose.position = position,
        Change::InsertObject { object } => scene.objects.push(object),
        Change::RemoveObject { object } => {
            if object >= scene.objects.len() {
                return Err(CurrentModeError::Invalid(format!("no object {object} to remove")));
            }
            scene.objects.remove(object);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RmsSeries {
    /// Centre time of each window.
    pub time_s: Vec<f64>,
    pub values: Vec<f64>,
    pub window_cycles: usize,
    pub sensing_freq: f64,
}

/// Sliding RMS over `window_cycles` whole cycles of the sensing frequency,
/// advanced one cycle at a time.
pub fn rms_impedance(series: &TimeSeries, sensing_freq: f64, window_cycles: usize) -> Result<RmsSeries, CurrentModeError> {
    if window_cycles == 0 || !(sensing_freq > 0.0) {
        return Err(CurrentModeError::Invalid("window must span at least one cycle".into()));
    }
    // Cycles rarely hold a whole number of samples, so window edges fall
    // between samples: the running energy is interpolated at fractional
    // positions, each sample covering one sampling interval.
    let n = series.values.len();
    let cycle = series.fs / sensing_freq;
    let window = window_cycles as f64 * cycle;
    if !(window >= 1.0) || (n as f64) < window {
        return Err(CurrentModeError::TooShort {
            needed: window.ceil().max(1.0) as usize,
            available: n,
        });
    }
    let mut sq = vec![0.0; n + 1];
    for (i, v) in series.values.iter().enumerate() {
        sq[i + 1] = sq[i] + v * v;
    }
    let energy = |pos: f64| {
        let k = (pos.floor() as usize).min(n);
        let frac = pos - k as f64;
        if k < n {
            sq[k] + frac * series.values[k] * series.values[k]
        } else {
            sq[n]
        }
    };
    let mut time_s = Vec::new();
    let mut values = Vec::new();
    let mut c = 0usize;
    loop {
        let start = c as f64 * cycle;
        let end = start + window;
        if end > n as f64 + 1e-9 {
            break;
        }
        let ms = (energy(end.min(n as f64)) - energy(start)) / window;
        values.push(ms.max(0.0).sqrt());
        time_s.push(series.t0 + (start + window / 2.0) / series.fs);
        c += 1;
    }
    Ok(RmsSeries {
        time_s,
        values,
        window_cycles,
        sensing_freq,
    })
}

/// Hann-windowed single-bin correlation: amplitude of the component of `v`
/// at `freq`.
fn tone_amplitude(v: &[f64], fs: f64, freq: f64) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let mut acc = Complex64::new(0.0, 0.0);
    let mut wsum = 0.0;
    let step = Complex64::from_polar(1.0, -2.0 * PI * freq / fs);
    let mut rot = Complex64::new(1.0, 0.0);
    for (k, &x) in v.iter().enumerate() {
        let w = 0.5 - 0.5 * (2.0 * PI * k as f64 / (n - 1) as f64).cos();
        acc += rot * (w * x);
        wsum += w;
        rot *= step;
        if k % 1024 == 1023 {
            // keep the phasor on the unit circle
            rot = Complex64::from_polar(1.0, -2.0 * PI * freq * (k + 1) as f64 / fs);
        }
    }
    2.0 * acc.norm() / wsum
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum ComponentLabel {
    Tone { index: usize },
    Beat { a: usize, b: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Component {
    /// Frequency of the search bin with the largest response.
    pub freq_hz: f64,
    pub amplitude: f64,
    pub power: f64,
    pub label: ComponentLabel,
    pub detected: bool,
}

impl Component {
    pub fn label_text(&self, candidates: &[f64]) -> String {
        match self.label {
            ComponentLabel::Tone { index } => format!("tone_{}", candidates[index]),
            ComponentLabel::Beat { a, b } => format!("beat_{}_{}", candidates[a], candidates[b]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventClass {
    /// A step that brought a new beat with it: another dipole arrived.
    DipoleEvent,
    /// A step without new interference: an object moved.
    ObjectEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RmsEvent {
    pub time_s: f64,
    pub rms_before: f64,
    pub rms_after: f64,
    pub step: f64,
    pub class: EventClass,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterferenceReport {
    /// Width of one analysis bin (Hz).
    pub bin_hz: f64,
    pub components: Vec<Component>,
    pub events: Vec<RmsEvent>,
}

impl InterferenceReport {
    pub fn beats(&self) -> impl Iterator<Item = &Component> {
        self.components
            .iter()
            .filter(|c| matches!(c.label, ComponentLabel::Beat { .. }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectConfig {
    /// Frequency of the sensing dipole; sets the RMS window.
    pub sensing_freq: f64,
    pub window_cycles: usize,
    /// Beats must exceed this fraction of the mean-square signal.
    pub beat_floor: f64,
    /// Tones must exceed this fraction of the RMS.
    pub tone_floor: f64,
    /// RMS steps smaller than this fraction of the median RMS are ignored.
    pub step_threshold: f64,
}

impl DetectConfig {
    pub fn new(sensing_freq: f64) -> Self {
        Self {
            sensing_freq,
            window_cycles: 16,
            beat_floor: 1e-4,
            tone_floor: 1e-3,
            step_threshold: 1e-4,
        }
    }
}

fn components(seg: &TimeSeries, candidates: &[f64], cfg: &DetectConfig) -> Vec<Component> {
    let v = &seg.values;
    let n = v.len();
    let bin = seg.fs / n.max(1) as f64;
    let mean = v.iter().sum::<f64>() / n.max(1) as f64;
    let ms = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n.max(1) as f64;
    let best = |u: &[f64], f: f64| {
        [-1.0, 0.0, 1.0]
            .iter()
            .map(|k| {
                let fk = f + k * bin;
                (fk, if fk > 0.0 { tone_amplitude(u, seg.fs, fk) } else { 0.0 })
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("three bins")
    };
    let mut out = Vec::new();
    for (i, &f) in candidates.iter().enumerate() {
        let (freq_hz, a) = best(v, f);
        out.push(Component {
            freq_hz,
            amplitude: a,
            power: a * a / 2.0,
            label: ComponentLabel::Tone { index: i },
            detected: a > cfg.tone_floor * ms.sqrt(),
        });
    }
    let sq: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    let sq_mean = sq.iter().sum::<f64>() / n.max(1) as f64;
    let sq: Vec<f64> = sq.iter().map(|x| x - sq_mean).collect();
    for a in 0..candidates.len() {
        for b in a + 1..candidates.len() {
            let df = (candidates[a] - candidates[b]).abs();
            if df == 0.0 {
                continue;
            }
            let (freq_hz, amp) = best(&sq, df);
            out.push(Component {
                freq_hz,
                amplitude: amp,
                power: amp * amp / 2.0,
                label: ComponentLabel::Beat { a, b },
                detected: amp > cfg.beat_floor * ms,
            });
        }
    }
    out
}

fn detected_beats(c: &[Component]) -> Vec<(usize, usize)> {
    c.iter()
        .filter(|c| c.detected)
        .filter_map(|c| match c.label {
            ComponentLabel::Beat { a, b } => Some((a, b)),
            _ => None,
        })
        .collect()
}

/// Step changes of the RMS: plateau means on either side of a guard band
/// one window wide, local maxima above the threshold.
fn rms_steps(rms: &RmsSeries, threshold: f64) -> Vec<(usize, f64, f64)> {
    let r = &rms.values;
    let w = rms.window_cycles.max(1);
    let guard = w / 2 + 1;
    let n = r.len();
    if n < 2 * (w + guard) + 1 {
        return Vec::new();
    }
    let mean = |a: usize, b: usize| r[a..b].iter().sum::<f64>() / (b - a) as f64;
    let spread = |a: usize, b: usize| {
        let m = mean(a, b);
        (r[a..b].iter().map(|v| (v - m).powi(2)).sum::<f64>() / (b - a) as f64).sqrt()
    };
    let mut sorted = r.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let tau = threshold * sorted[n / 2];
    let d: Vec<(usize, f64, f64)> = (w + guard..n - w - guard)
        .map(|k| (k, mean(k - guard - w, k - guard), mean(k + guard, k + guard + w)))
        .collect();
    let mag = |e: &(usize, f64, f64)| (e.2 - e.1).abs();
    let mut out: Vec<(usize, f64, f64)> = Vec::new();
    for (i, e) in d.iter().enumerate() {
        let m = mag(e);
        if !(m > tau) {
            continue;
        }
        // a shift no larger than the ripple inside either plateau (beats not
        // averaged out by the window) is not a step
        let k = e.0;
        let ripple = spread(k - guard - w, k - guard).max(spread(k + guard, k + guard + w));
        if !(m > ripple) {
            continue;
        }
        let lo = i.saturating_sub(2 * w);
        let hi = (i + 2 * w + 1).min(d.len());
        // first maximum within the neighbourhood wins ties on flat tops
        let is_peak = d[lo..hi].iter().enumerate().all(|(j, o)| {
            let mo = mag(o);
            mo < m || (mo == m && lo + j >= i)
        });
        if is_peak && out.last().is_none_or(|p| e.0 > p.0 + 2 * w) {
            out.push(*e);
        }
    }
    out
}

/// Tone and beat components at the candidate frequencies, and the RMS steps
/// classified by whether a new beat appeared with them.
pub fn detect_interference(
    series: &TimeSeries,
    candidate_freqs: &[f64],
    cfg: &DetectConfig,
) -> Result<InterferenceReport, CurrentModeError> {
    if series.values.is_empty() {
        return Err(CurrentModeError::TooShort { needed: 1, available: 0 });
    }
    let bin_hz = series.fs / series.values.len() as f64;
    let rms = rms_impedance(series, cfg.sensing_freq, cfg.window_cycles)?;
    let steps = rms_steps(&rms, cfg.step_threshold);
    let window_s = cfg.window_cycles as f64 / cfg.sensing_freq;
    let end = series.t0 + series.duration();
    let times: Vec<f64> = steps.iter().map(|s| rms.time_s[s.0]).collect();
    let mut events = Vec::new();
    for (i, s) in steps.iter().enumerate() {
        let t = times[i];
        let before_start = if i == 0 { series.t0 } else { times[i - 1] + window_s };
        let after_end = times.get(i + 1).map_or(end, |t| t - window_s);
        let before = series.slice(before_start, t - window_s);
        let after = series.slice(t + window_s, after_end);
        let new_beat = if before.values.len() > 1 && after.values.len() > 1 {
            let b0 = detected_beats(&components(&before, candidate_freqs, cfg));
            detected_beats(&components(&after, candidate_freqs, cfg))
                .iter()
                .any(|p| !b0.contains(p))
        } else {
            false
        };
        events.push(RmsEvent {
            time_s: t,
            rms_before: s.1,
            rms_after: s.2,
            step: s.2 - s.1,
            class: if new_beat { EventClass::DipoleEvent } else { EventClass::ObjectEvent },
        });
    }
    Ok(InterferenceReport {
        bin_hz,
        components: components(series, candidate_freqs, cfg),
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dipole(f: f64, x: f64) -> SineDipole {
        SineDipole {
            phase: Some(0.3 * f),
            ..SineDipole::new(f, 1.0, DipolePose::at(x, DEFAULT_DIPOLE_LENGTH))
        }
    }

    fn scene(sensor: f64, peers: &[(f64, f64)]) -> CurrentScene {
        CurrentScene {
            sensor: dipole(sensor, 0.0),
            dipoles: peers.iter().map(|&(f, x)| dipole(f, x)).collect(),
            objects: Vec::new(),
            field: FieldModel::default(),
        }
    }

    #[test]
    fn lone_dipole_is_a_pure_sine() {
        let s = simulate_current_field(&scene(80.0, &[]), 1.0, 16_000.0).unwrap();
        for (k, v) in s.values.iter().enumerate() {
            let t = k as f64 / 16_000.0;
            assert!((v - (2.0 * PI * 80.0 * t + 24.0).sin()).abs() < 1e-12);
        }
        let rms = rms_impedance(&s, 80.0, 16).unwrap();
        assert!(rms.values.iter().all(|r| (r - 0.5f64.sqrt()).abs() < 1e-3 * 0.5f64.sqrt()));
    }

    #[test]
    fn zero_signal_rms() {
        let s = TimeSeries { fs: 1000.0, t0: 0.0, values: vec![0.0; 1000] };
        assert!(rms_impedance(&s, 80.0, 4).unwrap().values.iter().all(|&v| v == 0.0));
        assert!(matches!(rms_impedance(&s, 1.0, 4), Err(CurrentModeError::TooShort { .. })));
    }

    #[test]
    fn two_tone_rms_parseval() {
        let (a, b) = (1.0, 0.6);
        let fs = 8000.0;
        let values: Vec<f64> = (0..80_000)
            .map(|k| {
                let t = k as f64 / fs;
                a * (2.0 * PI * 100.0 * t).sin() + b * (2.0 * PI * 100.0 * 2f64.sqrt() * t).sin()
            })
            .collect();
        let s = TimeSeries { fs, t0: 0.0, values };
        let rms = rms_impedance(&s, 100.0, 200).unwrap();
        let want = ((a * a + b * b) / 2.0f64).sqrt();
        assert!(rms.values.iter().all(|r| (r - want).abs() < 0.01 * want));
    }

    #[test]
    fn aliasing_and_band_checks() {
        assert!(matches!(
            simulate_current_field(&scene(400.0, &[]), 1.0, 1500.0),
            Err(CurrentModeError::Aliasing { .. })
        ));
        assert!(simulate_current_field(&scene(60.0, &[]), 1.0, 16_000.0).is_err());
        let mut sc = scene(80.0, &[]);
        sc.objects.push(ObjectPerturbation { kind: ObjectKind::Dielectric, position: [0.0; 3], strength: 1.0 });
        assert!(sc.validate().is_err());
    }

    #[test]
    fn beat_between_70_and_75() {
        let sc = scene(70.0, &[(75.0, 0.4)]);
        let s = simulate_current_field(&sc, 4.0, 16_000.0).unwrap();
        let r = detect_interference(&s, &[70.0, 75.0], &DetectConfig::new(70.0)).unwrap();
        let beat = r.beats().next().unwrap();
        assert!(beat.detected);
        assert!((beat.freq_hz - 5.0).abs() <= r.bin_hz + 1e-9);
        // the beat of x² between a unit drive and a peer of gain g has amplitude g
        let g = sc.field.pair_gain(&sc.sensor.pose, &sc.dipoles[0].pose, &[]);
        assert!((beat.amplitude - g).abs() < 0.02 * g, "{} vs {g}", beat.amplitude);
    }

    #[test]
    fn dielectric_at_midpoint_scales_contribution() {
        let mut sc = scene(80.0, &[(95.0, 0.4)]);
        let g0 = sc.field.pair_gain(&sc.sensor.pose, &sc.dipoles[0].pose, &sc.objects);
        let obj = ObjectPerturbation { kind: ObjectKind::Dielectric, position: [0.2, 0.0, 0.0], strength: 0.4 };
        sc.objects.push(obj);
        let g1 = sc.field.pair_gain(&sc.sensor.pose, &sc.dipoles[0].pose, &sc.objects);
        assert!((g1 - 0.6 * g0).abs() < 1e-12);
        sc.objects[0].kind = ObjectKind::Conductive;
        let g2 = sc.field.pair_gain(&sc.sensor.pose, &sc.dipoles[0].pose, &sc.objects);
        assert!((g2 - 1.4 * g0).abs() < 1e-12);
        // measured tone amplitude follows
        let s = simulate_current_field(&sc, 2.0, 16_000.0).unwrap();
        let a = tone_amplitude(&s.values, 16_000.0, 95.0);
        assert!((a - g2).abs() < 1e-3 * g2);
    }

    #[test]
    fn object_and_dipole_events_are_told_apart() {
        let base = scene(80.0, &[(95.0, 0.4), (125.0, 0.2)]);
        let fs = 16_000.0;
        let cfg = DetectConfig::new(80.0);
        let cands = [80.0, 95.0, 125.0];

        let mut dip = base.clone();
        dip.dipoles[1].active = false;
        let ch = [SceneChange { time_s: 2.0, change: Change::Activate { dipole: 1 } }];
        let s = simulate_timeline(&dip, &ch, 4.0, fs).unwrap();
        let r = detect_interference(&s, &cands, &cfg).unwrap();
        assert_eq!(r.events.len(), 1, "{:?}", r.events);
        assert_eq!(r.events[0].class, EventClass::DipoleEvent);
        assert!((r.events[0].time_s - 2.0).abs() < 0.05);
        let dipole_step = r.events[0].step.abs();

        let mut obj = base.clone();
        obj.dipoles.truncate(1);
        let o = ObjectPerturbation { kind: ObjectKind::Dielectric, position: [0.2, 0.0, 0.0], strength: 0.5 };
        let ch = [SceneChange { time_s: 2.0, change: Change::InsertObject { object: o } }];
        let s = simulate_timeline(&obj, &ch, 4.0, fs).unwrap();
        let r = detect_interference(&s, &cands[..2], &cfg).unwrap();
        assert_eq!(r.events.len(), 1, "{:?}", r.events);
        assert_eq!(r.events[0].class, EventClass::ObjectEvent);
        assert!(r.events[0].step < 0.0);
        assert!(dipole_step > r.events[0].step.abs());
    }

    #[test]
    fn steady_scene_has_no_events() {
        let s = simulate_current_field(&scene(80.0, &[(95.0, 0.4)]), 3.0, 16_000.0).unwrap();
        let r = detect_interference(&s, &[80.0, 95.0], &DetectConfig::new(80.0)).unwrap();
        assert!(r.events.is_empty());
    }

    #[test]
    fn phases_are_seeded_per_index() {
        let mut a = CurrentScene::default_geometry();
        a.field.seed = 9;
        let mut b = a.clone();
        b.dipoles.push(dipole(300.0, 0.9));
        let (pa, pb) = (drive_phases(&a), drive_phases(&b));
        assert_eq!(pa[..], pb[..pa.len()]);
        a.field.seed = 10;
        assert_ne!(drive_phases(&a), pa);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn superposition_without_objects(f1 in 14u32..90, f2 in 14u32..90, x1 in 0.1f64..1.0, x2 in -1.0f64..-0.1) {
            let fs = 4000.0;
            let (f1, f2) = (5.0 * f1 as f64, 5.0 * f2 as f64);
            let both = simulate_current_field(&scene(80.0, &[(f1, x1), (f2, x2)]), 0.25, fs).unwrap();
            let one = simulate_current_field(&scene(80.0, &[(f1, x1)]), 0.25, fs).unwrap();
            let mut second = scene(80.0, &[(f1, x1), (f2, x2)]);
            second.dipoles[0].active = false;
            let two = simulate_current_field(&second, 0.25, fs).unwrap();
            let own = simulate_current_field(&scene(80.0, &[]), 0.25, fs).unwrap();
            for k in 0..both.values.len() {
                let sum = one.values[k] + two.values[k] - own.values[k];
                prop_assert!((both.values[k] - sum).abs() < 1e-12);
            }
        }

        #[test]
        fn rms_window_invariance(f in 14u32..90, cycles in 1usize..8, amp in 0.1f64..5.0) {
            let f = 5.0 * f as f64;
            let mut sc = scene(f, &[]);
            sc.sensor.amplitude = amp;
            let s = simulate_current_field(&sc, 0.5, 16_000.0).unwrap();
            let r1 = rms_impedance(&s, f, cycles).unwrap();
            let r2 = rms_impedance(&s, f, 2 * cycles).unwrap();
            let m1 = r1.values.iter().sum::<f64>() / r1.values.len() as f64;
            let m2 = r2.values.iter().sum::<f64>() / r2.values.len() as f64;
            prop_assert!((m1 - m2).abs() < 1e-3 * m1);
        }

        #[test]
        fn beat_completeness(fa in 14u32..90, fb in 14u32..90, x in 0.3f64..0.8) {
            prop_assume!(fa != fb);
            let (fa, fb) = (5.0 * fa as f64, 5.0 * fb as f64);
            let s = simulate_current_field(&scene(fa, &[(fb, x)]), 2.0, 4000.0).unwrap();
            let r = detect_interference(&s, &[fa, fb], &DetectConfig::new(fa)).unwrap();
            let beat = r.beats().next().unwrap();
            prop_assert!(beat.detected);
            prop_assert!((beat.freq_hz - (fa - fb).abs()).abs() <= r.bin_hz + 1e-9);
        }
    }
}
