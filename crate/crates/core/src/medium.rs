//! The water as a coupling channel: who hears whom and how strongly, what the
//! receive amplifier does to the sum, and how noisy it is.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MediumError {
    #[error("coupling matrix must have at least one device")]
    Empty,
    #[error("coupling matrix data has {found} entries, expected {expected}")]
    Shape { expected: usize, found: usize },
    #[error("coupling entry ({i}, {j}) is not finite")]
    NonFinite { i: usize, j: usize },
    #[error("devices {i} and {j} sit at the same position")]
    CoincidentPoses { i: usize, j: usize },
    #[error("invalid dipole pose: {0}")]
    InvalidPose(String),
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
    #[error("invalid sensing chain: {0}")]
    InvalidChain(String),
    #[error("mirror history too short: need {needed} samples, have {available}")]
    InsufficientHistory { needed: usize, available: usize },
    #[error("dimension mismatch: {weights} weights for {emissions} emissions")]
    DimensionMismatch { weights: usize, emissions: usize },
}

/// Row-major m×m matrix; entry (i, j) is how strongly receiver i hears
/// emitter j.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingMatrix {
    m: usize,
    g: Vec<f64>,
}

impl CouplingMatrix {
    pub fn new(m: usize, g: Vec<f64>) -> Result<Self, MediumError> {
        if m == 0 {
            return Err(MediumError::Empty);
        }
        if g.len() != m * m {
            return Err(MediumError::Shape {
                expected: m * m,
                found: g.len(),
            });
        }
        if let Some(k) = g.iter().position(|v| !v.is_finite()) {
            return Err(MediumError::NonFinite { i: k / m, j: k % m });
        }
        Ok(Self { m, g })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MediumError> {
        let m = rows.len();
        let mut g = Vec::with_capacity(m * m);
        for row in rows {
            if row.len() != m {
                return Err(MediumError::Shape {
                    expected: m,
                    found: row.len(),
                });
            }
            g.extend_from_slice(row);
        }
        Self::new(m, g)
    }

    pub fn zeros(m: usize) -> Self {
        assert!(m >= 1);
        Self {
            m,
            g: vec![0.0; m * m],
        }
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.g[i * self.m + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        assert!(value.is_finite());
        self.g[i * self.m + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.g[i * self.m..(i + 1) * self.m]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.m).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            m: self.m,
            g: self.g.iter().map(|v| v * c).collect(),
        }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.m).all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }
}

/// Random coupling weights: every emitter j gets one weight e − U, U uniform
/// on [0, spread], and every receiver hears j with that same weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CouplingSampler {
    pub offset: f64,
    pub spread: f64,
    /// Whether a device also hears its own emission through the coupling term
    /// (the uncalibrated self-contribution of the superposition model).
    pub include_self: bool,
}

impl Default for CouplingSampler {
    fn default() -> Self {
        Self {
            offset: -0.01,
            spread: 3e-3,
            include_self: true,
        }
    }
}

impl CouplingSampler {
    pub fn new(offset: f64) -> Self {
        Self {
            offset,
            ..Self::default()
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> CouplingMatrix {
        let weights: Vec<f64> = (0..m)
            .map(|_| self.offset - rng.random::<f64>() * self.spread)
            .collect();
        let mut g = CouplingMatrix::zeros(m);
        for i in 0..m {
            for (j, &w) in weights.iter().enumerate() {
                if i != j || self.include_self {
                    g.set(i, j, w);
                }
            }
        }
        g
    }
}

/// Off-diagonal couplings e − U[0, 3·10⁻³] with a zero diagonal.
/// See [`CouplingSampler`] for the variant that keeps the self term.
pub fn sample_couplings<R: Rng + ?Sized>(m: usize, e: f64, rng: &mut R) -> CouplingMatrix {
    CouplingSampler {
        include_self: false,
        ..CouplingSampler::new(e)
    }
    .sample(m, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DipolePose {
    pub position: [f64; 3],
    pub orientation: [f64; 3],
    pub dipole_length: f64,
}

impl DipolePose {
    pub fn new(
        position: [f64; 3],
        orientation: [f64; 3],
        dipole_length: f64,
    ) -> Result<Self, MediumError> {
        let pose = Self {
            position,
            orientation,
            dipole_length,
        };
        pose.validate()?;
        Ok(pose)
    }

    /// A pose along the x axis, oriented along x.
    pub fn at(x: f64, dipole_length: f64) -> Self {
        Self {
            position: [x, 0.0, 0.0],
            orientation: [1.0, 0.0, 0.0],
            dipole_length,
        }
    }

    pub fn validate(&self) -> Result<(), MediumError> {
        if !self.position.iter().all(|v| v.is_finite()) {
            return Err(MediumError::InvalidPose("position is not finite".into()));
        }
        let norm = self.orientation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(MediumError::InvalidPose(format!(
                "orientation norm is {norm}, expected 1"
            )));
        }
        if !(self.dipole_length > 0.0 && self.dipole_length.is_finite()) {
            return Err(MediumError::InvalidPose(format!(
                "dipole length must be positive, got {}",
                self.dipole_length
            )));
        }
        Ok(())
    }

    pub fn distance(&self, other: &DipolePose) -> f64 {
        distance(&self.position, &other.position)
    }
}

pub fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

/// Power-law attenuation normalized at one dipole length.
pub fn power_law_gain(distance: f64, dipole_length: f64, decay_exponent: f64, ref_gain: f64) -> f64 {
    ref_gain * (distance / dipole_length).powf(-decay_exponent)
}

/// Default decay exponent of the geometric coupling model (a dipole far
/// field falls off with the cube of distance).
pub const DEFAULT_DECAY_EXPONENT: f64 = 3.0;

/// Symmetric couplings from the device positions. The pair distance is
/// measured in units of the pair's mean dipole length.
pub fn coupling_from_geometry(
    poses: &[DipolePose],
    decay_exponent: f64,
    ref_gain: f64,
) -> Result<CouplingMatrix, MediumError> {
    if poses.is_empty() {
        return Err(MediumError::Empty);
    }
    for p in poses {
        p.validate()?;
    }
    let m = poses.len();
    let mut g = CouplingMatrix::zeros(m);
    for i in 0..m {
        for j in (i + 1)..m {
            let d = poses[i].distance(&poses[j]);
            if d <= 0.0 {
                return Err(MediumError::CoincidentPoses { i, j });
            }
            let len = 0.5 * (poses[i].dipole_length + poses[j].dipole_length);
            let w = power_law_gain(d, len, decay_exponent, ref_gain);
            g.set(i, j, w);
            g.set(j, i, w);
        }
    }
    Ok(g)
}

/// Least-squares slope of log(gain) against log(distance); returns
/// `(exponent, gain at the reference distance)`.
pub fn fit_power_law(distances: &[f64], gains: &[f64], ref_distance: f64) -> (f64, f64) {
    assert_eq!(distances.len(), gains.len());
    assert!(distances.len() >= 2);
    let xs: Vec<f64> = distances.iter().map(|d| (d / ref_distance).ln()).collect();
    let ys: Vec<f64> = gains.iter().map(|g| g.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (-slope, (my - slope * mx).exp())
}

/// Bounded, asymmetric, biased uniform noise (volts).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    pub amplitude_pos: f64,
    pub amplitude_neg: f64,
    pub bias: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::off()
    }
}

impl NoiseModel {
    pub const fn off() -> Self {
        Self {
            amplitude_pos: 0.0,
            amplitude_neg: 0.0,
            bias: 0.0,
            seed: 0,
        }
    }

    /// Extremes measured in the aquarium: +30 mV / −50 mV around a −7 mV bias.
    pub const fn aquarium(seed: u64) -> Self {
        Self {
            amplitude_pos: 0.03,
            amplitude_neg: 0.05,
            bias: -0.007,
            seed,
        }
    }

    pub fn is_off(&self) -> bool {
        self.amplitude_pos == 0.0 && self.amplitude_neg == 0.0 && self.bias == 0.0
    }

    /// Largest absolute deviation a sample can have.
    pub fn peak(&self) -> f64 {
        (self.bias + self.amplitude_pos)
            .abs()
            .max((self.bias - self.amplitude_neg).abs())
    }

    pub fn validate(&self) -> Result<(), MediumError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.amplitude_pos) || !ok(self.amplitude_neg) {
            return Err(MediumError::InvalidNoise(
                "amplitudes must be finite and non-negative".into(),
            ));
        }
        if !self.bias.is_finite() {
            return Err(MediumError::InvalidNoise("bias must be finite".into()));
        }
        Ok(())
    }

    /// The stream seeded by this model's seed.
    pub fn stream(&self) -> NoiseStream {
        self.stream_on(0)
    }

    /// An independent stream for the same seed (e.g. one per scenario seed).
    pub fn stream_on(&self, stream: u64) -> NoiseStream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        NoiseStream { model: *self, rng }
    }
}

#[derive(Debug, Clone)]
pub struct NoiseStream {
    model: NoiseModel,
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn sample(&mut self) -> f64 {
        let m = &self.model;
        if m.amplitude_pos == 0.0 && m.amplitude_neg == 0.0 {
            return m.bias;
        }
        let u: f64 = self.rng.random();
        m.bias - m.amplitude_neg + u * (m.amplitude_pos + m.amplitude_neg)
    }

    pub fn model(&self) -> &NoiseModel {
        &self.model
    }
}

/// Receive amplifier: optional first-order high-pass, then a gain which may
/// differ for negative outputs (amplifier asymmetry).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensingChain {
    pub highpass_cutoff: Option<f64>,
    pub gain: f64,
    pub negative_gain: Option<f64>,
}

impl Default for SensingChain {
    fn default() -> Self {
        Self {
            highpass_cutoff: None,
            gain: 1.0,
            negative_gain: None,
        }
    }
}

impl SensingChain {
    pub fn validate(&self) -> Result<(), MediumError> {
        if let Some(fc) = self.highpass_cutoff {
            if !(fc > 0.0 && fc.is_finite()) {
                return Err(MediumError::InvalidChain(format!(
                    "high-pass cutoff must be positive, got {fc}"
                )));
            }
        }
        if !self.gain.is_finite() || !self.negative_gain.unwrap_or(0.0).is_finite() {
            return Err(MediumError::InvalidChain("gains must be finite".into()));
        }
        Ok(())
    }

    fn amplify(&self, v: f64) -> f64 {
        match self.negative_gain {
            Some(gn) if v < 0.0 => gn * v,
            _ => self.gain * v,
        }
    }
}

/// Discrete single-pole high-pass, y = a·(y₋₁ + x − x₋₁), starting at rest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HighPass {
    a: f64,
    prev_in: f64,
    prev_out: f64,
}

impl HighPass {
    pub fn new(cutoff_hz: f64, sample_interval_s: f64) -> Self {
        let rc = 1.0 / (2.0 * std::f64::consts::PI * cutoff_hz);
        Self {
            a: rc / (rc + sample_interval_s),
            prev_in: 0.0,
            prev_out: 0.0,
        }
    }

    pub fn apply(&mut self, x: f64) -> f64 {
        let y = self.a * (self.prev_out + x - self.prev_in);
        self.prev_in = x;
        self.prev_out = y;
        y
    }
}

/// A sensing chain with its filter state, owned by one receiver.
#[derive(Debug, Clone)]
pub struct Receiver {
    chain: SensingChain,
    filter: Option<HighPass>,
}

impl Receiver {
    pub fn new(chain: SensingChain, sample_interval_s: f64) -> Self {
        Self {
            filter: chain
                .highpass_cutoff
                .map(|fc| HighPass::new(fc, sample_interval_s)),
            chain,
        }
    }

    /// Filter and amplify an already-superposed field value.
    pub fn condition(&mut self, field: f64) -> f64 {
        let v = match &mut self.filter {
            Some(hp) => hp.apply(field),
            None => field,
        };
        self.chain.amplify(v)
    }

    pub fn sense(
        &mut self,
        row: &[f64],
        emissions: &[f64],
        noise: &mut NoiseStream,
    ) -> Result<f64, MediumError> {
        let field = weighted_sum(row, emissions)?;
        Ok(self.condition(field) + noise.sample())
    }
}

pub fn weighted_sum(row: &[f64], emissions: &[f64]) -> Result<f64, MediumError> {
    if row.len() != emissions.len() {
        return Err(MediumError::DimensionMismatch {
            weights: row.len(),
            emissions: emissions.len(),
        });
    }
    Ok(row.iter().zip(emissions).map(|(g, e)| g * e).sum())
}

/// One sensed sample: chain(Σⱼ gⱼ·eⱼ) + noise. A filter, if configured,
/// starts from rest; use [`Receiver`] to keep filter state across samples.
pub fn superpose(
    row: &[f64],
    emissions: &[f64],
    chain: &SensingChain,
    sample_interval_s: f64,
    noise: &mut NoiseStream,
) -> Result<f64, MediumError> {
    Receiver::new(*chain, sample_interval_s).sense(row, emissions, noise)
}

/// What a passive mirror sends back: ±gain times the stored field from
/// `gamma` samples ago. `history` is oldest first, newest last.
pub fn mirror_response(
    history: &[f64],
    gamma: usize,
    gain: f64,
    invert: bool,
) -> Result<f64, MediumError> {
    if history.len() < gamma + 1 {
        return Err(MediumError::InsufficientHistory {
            needed: gamma + 1,
            available: history.len(),
        });
    }
    let sample = history[history.len() - 1 - gamma];
    let sign = if invert { -1.0 } else { 1.0 };
    Ok(sign * gain * sample)
}

/// Everything the medium contributes to a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Medium {
    pub coupling: CouplingMatrix,
    pub chain: SensingChain,
    pub noise: NoiseModel,
}

impl Medium {
    pub fn quiet(coupling: CouplingMatrix) -> Self {
        Self {
            coupling,
            chain: SensingChain::default(),
            noise: NoiseModel::off(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn sampled_couplings_in_range() {
        let g = sample_couplings(2, -0.01, &mut rng(1));
        assert_eq!(g.get(0, 0), 0.0);
        assert_eq!(g.get(1, 1), 0.0);
        for (i, j) in [(0, 1), (1, 0)] {
            let v = g.get(i, j);
            assert!((-0.013..=-0.01).contains(&v), "{v}");
        }
        assert_eq!(sample_couplings(1, -0.01, &mut rng(3)), CouplingMatrix::zeros(1));
        assert_eq!(
            sample_couplings(6, -0.01, &mut rng(9)),
            sample_couplings(6, -0.01, &mut rng(9))
        );
    }

    #[test]
    fn sampler_broadcasts_one_weight_per_emitter() {
        let g = CouplingSampler::new(-0.01).sample(5, &mut rng(4));
        for j in 0..5 {
            let w = g.get(0, j);
            assert!((-0.013..=-0.01).contains(&w));
            for i in 0..5 {
                assert_eq!(g.get(i, j), w);
            }
        }
    }

    #[test]
    fn geometry_examples() {
        let poses = [DipolePose::at(0.0, 0.02), DipolePose::at(0.02, 0.02)];
        let g = coupling_from_geometry(&poses, 3.0, 0.5).unwrap();
        assert!((g.get(0, 1) - 0.5).abs() < 1e-15);
        assert_eq!(g.get(0, 0), 0.0);

        let far = [DipolePose::at(0.0, 0.02), DipolePose::at(0.04, 0.02)];
        let h = coupling_from_geometry(&far, 3.0, 0.5).unwrap();
        assert!((h.get(0, 1) - 0.5 / 8.0).abs() < 1e-15);

        let same = [DipolePose::at(0.1, 0.02), DipolePose::at(0.1, 0.02)];
        assert_eq!(
            coupling_from_geometry(&same, 3.0, 0.5).unwrap_err(),
            MediumError::CoincidentPoses { i: 0, j: 1 }
        );
    }

    #[test]
    fn pose_validation() {
        assert!(DipolePose::new([0.0; 3], [0.0, 0.6, 0.8], 0.1).is_ok());
        assert!(DipolePose::new([0.0; 3], [0.0, 0.6, 0.9], 0.1).is_err());
        assert!(DipolePose::new([0.0; 3], [1.0, 0.0, 0.0], 0.0).is_err());
    }

    /// Received amplitude against distance, read off the aquarium decay
    /// measurement (volts at the receiver for a fixed emitter).
    pub(crate) const DECAY_TABLE: [(f64, f64); 7] = [
        (0.05, 4.4),
        (0.075, 1.35),
        (0.10, 0.58),
        (0.15, 0.18),
        (0.20, 0.08),
        (0.25, 0.043),
        (0.325, 0.019),
    ];

    #[test]
    fn decay_fit_in_plausible_band() {
        let (d, g): (Vec<f64>, Vec<f64>) = DECAY_TABLE.iter().copied().unzip();
        let (p, _) = fit_power_law(&d, &g, 0.05);
        assert!((1.5..=3.5).contains(&p), "fitted exponent {p}");
    }

    #[test]
    fn fit_recovers_exact_power_law() {
        let d = [1.0f64, 2.0, 3.0, 5.0];
        let g: Vec<f64> = d.iter().map(|x| 0.7 * x.powf(-2.5)).collect();
        let (p, a) = fit_power_law(&d, &g, 1.0);
        assert!((p - 2.5).abs() < 1e-12 && (a - 0.7).abs() < 1e-12);
    }

    #[test]
    fn superpose_examples() {
        let chain = SensingChain::default();
        let mut quiet = NoiseModel::off().stream();
        assert_eq!(superpose(&[0.1, 0.1], &[0.0, 0.0], &chain, 1e-3, &mut quiet).unwrap(), 0.0);
        let a = 0.37;
        assert_eq!(superpose(&[0.1, 0.1], &[a, -a], &chain, 1e-3, &mut quiet).unwrap(), 0.0);
        let v = superpose(&[0.1, 0.1], &[a, a], &chain, 1e-3, &mut quiet).unwrap();
        assert!((v - 0.2 * a).abs() < 1e-15);
        assert!(superpose(&[0.1], &[a, a], &chain, 1e-3, &mut quiet).is_err());
    }

    #[test]
    fn asymmetric_gain() {
        let chain = SensingChain {
            gain: 0.13,
            negative_gain: Some(0.03),
            ..Default::default()
        };
        let mut r = Receiver::new(chain, 1e-3);
        assert!((r.condition(1.0) - 0.13).abs() < 1e-15);
        assert!((r.condition(-1.0) + 0.03).abs() < 1e-15);
    }

    #[test]
    fn highpass_blocks_dc() {
        let chain = SensingChain {
            highpass_cutoff: Some(16.0),
            ..Default::default()
        };
        let mut r = Receiver::new(chain, 2e-3);
        let first = r.condition(1.0);
        assert!(first > 0.8 && first < 1.0);
        let mut last = first;
        for _ in 0..500 {
            last = r.condition(1.0);
        }
        assert!(last.abs() < 1e-6);
        // an alternating signal at the Nyquist rate passes almost unchanged
        let mut r = Receiver::new(chain, 2e-3);
        let mut y = 0.0;
        for n in 0..500 {
            y = r.condition(if n % 2 == 0 { 1.0 } else { -1.0 });
        }
        assert!(y.abs() > 0.8);
    }

    #[test]
    fn mirror_examples() {
        assert_eq!(mirror_response(&[0.1, 0.3, 0.7], 1, 1.0, true).unwrap(), -0.3);
        assert_eq!(mirror_response(&[0.1, 0.3, 0.7], 0, 1.0, false).unwrap(), 0.7);
        assert_eq!(mirror_response(&[0.1, 0.3, 0.7], 2, 2.0, false).unwrap(), 0.2);
        assert_eq!(
            mirror_response(&[0.1], 1, 1.0, false).unwrap_err(),
            MediumError::InsufficientHistory { needed: 2, available: 1 }
        );
    }

    #[test]
    fn noise_bounds() {
        let model = NoiseModel::aquarium(11);
        let mut s = model.stream();
        let lo = model.bias - model.amplitude_neg;
        let hi = model.bias + model.amplitude_pos;
        let mut sum = 0.0;
        for _ in 0..100_000 {
            let v = s.sample();
            assert!(v >= lo && v <= hi);
            sum += v;
        }
        // mean of the uniform part is (pos − neg)/2 = −0.01, plus bias
        let mean = sum / 1e5;
        assert!((mean - (-0.017)).abs() < 5e-4, "{mean}");
        assert!((model.peak() - 0.057).abs() < 1e-12);
    }

    #[test]
    fn noise_determinism() {
        let a: Vec<f64> = {
            let mut s = NoiseModel::aquarium(5).stream();
            (0..100).map(|_| s.sample()).collect()
        };
        let b: Vec<f64> = {
            let mut s = NoiseModel::aquarium(5).stream();
            (0..100).map(|_| s.sample()).collect()
        };
        assert_eq!(a, b);
        let mut other = NoiseModel::aquarium(5).stream_on(1);
        assert_ne!(a[0], other.sample());
    }

    proptest! {
        #[test]
        fn superposition_is_linear(row in proptest::collection::vec(-1.0f64..1.0, 5),
                                   e1 in proptest::collection::vec(-1.0f64..1.0, 5),
                                   e2 in proptest::collection::vec(-1.0f64..1.0, 5),
                                   a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let chain = SensingChain::default();
            let mut n = NoiseModel::off().stream();
            let mix: Vec<f64> = e1.iter().zip(&e2).map(|(u, v)| a * u + b * v).collect();
            let lhs = superpose(&row, &mix, &chain, 1e-3, &mut n).unwrap();
            let rhs = a * superpose(&row, &e1, &chain, 1e-3, &mut n).unwrap()
                + b * superpose(&row, &e2, &chain, 1e-3, &mut n).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn geometry_symmetric_and_translation_invariant(
            pts in proptest::collection::vec(proptest::array::uniform3(-1.0f64..1.0), 2..6),
            shift in proptest::array::uniform3(-5.0f64..5.0),
            p in 1.0f64..4.0,
        ) {
            let poses: Vec<DipolePose> = pts.iter()
                .map(|&position| DipolePose { position, orientation: [0.0, 0.0, 1.0], dipole_length: 0.05 })
                .collect();
            prop_assume!((0..poses.len()).all(|i| (0..i).all(|j| poses[i].distance(&poses[j]) > 1e-3)));
            let moved: Vec<DipolePose> = poses.iter().map(|q| DipolePose {
                position: [q.position[0] + shift[0], q.position[1] + shift[1], q.position[2] + shift[2]],
                ..*q
            }).collect();
            let g = coupling_from_geometry(&poses, p, 0.3).unwrap();
            let h = coupling_from_geometry(&moved, p, 0.3).unwrap();
            prop_assert!(g.is_symmetric(0.0));
            for i in 0..g.dim() {
                for j in 0..g.dim() {
                    let (u, v) = (g.get(i, j), h.get(i, j));
                    prop_assert!((u - v).abs() <= 1e-9 * u.abs().max(1e-12));
                }
            }
        }

        #[test]
        fn couplings_deterministic(seed in any::<u64>(), m in 1usize..12) {
            let s = CouplingSampler::new(-0.01);
            prop_assert_eq!(s.sample(m, &mut rng(seed)), s.sample(m, &mut rng(seed)));
        }
    }
}
