use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::family::{FamilyParam, MapFamily};
use super::AnalysisError;

/// Parameter tolerance of the bisection.
const BISECTION_TOL: f64 = 1e-4;
/// A crossing pair counts as complex only when |Im λ| exceeds this.
const COMPLEX_TOL: f64 = 1e-4;
/// Smallest transient accepted by [`bifurcation_scan`].
pub const MIN_TRANSIENT: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BifurcationKind {
    /// A real multiplier crosses −1.
    PeriodDoubling,
    /// A complex-conjugate pair crosses the unit circle.
    NeimarkSacker,
    /// A real multiplier crosses +1.
    Fold,
}

impl BifurcationKind {
    pub fn label(&self) -> &'static str {
        match self {
            BifurcationKind::PeriodDoubling => "period_doubling",
            BifurcationKind::NeimarkSacker => "neimark_sacker",
            BifurcationKind::Fold => "fold",
        }
    }

    fn of(multiplier: Complex64) -> Self {
        if multiplier.im.abs() > COMPLEX_TOL {
            BifurcationKind::NeimarkSacker
        } else if multiplier.re < 0.0 {
            BifurcationKind::PeriodDoubling
        } else {
            BifurcationKind::Fold
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BifurcationPoint {
    pub param: FamilyParam,
    pub value: f64,
    pub kind: BifurcationKind,
    /// Dominant multiplier of the state losing stability, on the stable side.
    pub multiplier: Complex64,
    /// Final bracket; the stability margin is below one at one end and above
    /// one at the other.
    pub bracket: (f64, f64),
}

/// Smallest dominant |λ| over all stationary states of the family at
/// `param = value` (below one iff something is stable).
pub fn stability_margin(family: &MapFamily, param: FamilyParam, value: f64) -> Result<f64, AnalysisError> {
    Ok(family.with(param, value)?.fixed_points().margin())
}

/// Locate where the family gains or loses its last stable stationary state
/// inside `range` and classify the crossing multiplier.
pub fn find_bifurcation(
    family: &MapFamily,
    param: FamilyParam,
    range: (f64, f64),
    kind_hint: Option<BifurcationKind>,
) -> Result<BifurcationPoint, AnalysisError> {
    let (mut lo, mut hi) = range;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(AnalysisError::Invalid(format!("bad range [{lo}, {hi}]")));
    }
    let stable_low = stability_margin(family, param, lo)? < 1.0;
    let stable_high = stability_margin(family, param, hi)? < 1.0;
    if stable_low == stable_high {
        return Err(AnalysisError::NoCrossing { lo, hi });
    }
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        let below = stability_margin(family, param, mid)? < 1.0;
        if below == stable_low {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let stable_end = if stable_low { lo } else { hi };
    let report = family.with(param, stable_end)?.fixed_points();
    let multiplier = report
        .least_unstable()
        .map(|p| p.dominant())
        .ok_or_else(|| AnalysisError::Indeterminate("no stationary state at the stable end".into()))?;
    let kind = BifurcationKind::of(multiplier);
    if let Some(expected) = kind_hint {
        if expected != kind {
            return Err(AnalysisError::KindMismatch { expected, found: kind });
        }
    }
    Ok(BifurcationPoint {
        param,
        value: 0.5 * (lo + hi),
        kind,
        multiplier,
        bracket: (lo, hi),
    })
}

/// How runs at each grid value are started.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy", deny_unknown_fields)]
pub enum InitialPolicy {
    Fixed { state: Vec<f64> },
    /// Independent uniform draws per coordinate (seeded per grid value).
    RandomInRange { lo: f64, hi: f64 },
    /// Start from the end state of the previous grid value.
    Continuation { start: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub family: MapFamily,
    pub param: FamilyParam,
    pub range: (f64, f64),
    pub grid_size: usize,
    pub transient: usize,
    pub samples: usize,
    pub initial: InitialPolicy,
    #[serde(default = "one")]
    pub runs_per_point: usize,
    #[serde(default)]
    pub seed: u64,
    /// Also bisect every stability change between neighbouring grid values.
    #[serde(default)]
    pub detect_critical: bool,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanPoint {
    pub value: f64,
    /// Post-transient values of the first coordinate, run after run.
    pub samples: Vec<f64>,
    pub diverged_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BifurcationDiagram {
    pub param: FamilyParam,
    pub transient: usize,
    pub points: Vec<ScanPoint>,
    pub critical: Vec<BifurcationPoint>,
}

impl BifurcationDiagram {
    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }
}

fn grid(range: (f64, f64), n: usize) -> Vec<f64> {
    let (lo, hi) = range;
    (0..n)
        .map(|i| {
            if i + 1 == n {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Iterate one run; returns the final state or None if it escaped.
fn run(family: &MapFamily, state: &mut [f64], transient: usize, samples: usize, out: &mut Vec<f64>) -> bool {
    for _ in 0..transient {
        if family.step(state).is_err() {
            return false;
        }
    }
    let start = out.len();
    for _ in 0..samples {
        if family.step(state).is_err() || !state[0].is_finite() {
            out.truncate(start);
            return false;
        }
        out.push(state[0]);
    }
    true
}

fn fit_state(family: &MapFamily, v: &[f64]) -> Result<Vec<f64>, AnalysisError> {
    match v.len() {
        1 => Ok(vec![v[0]; family.dim()]),
        n if n == family.dim() => Ok(v.to_vec()),
        n => Err(AnalysisError::Invalid(format!(
            "initial state has {n} entries, family needs {}",
            family.dim()
        ))),
    }
}

/// Post-transient attractor samples over a parameter grid.
///
/// Grid values are independent except under continuation, so they are
/// evaluated in parallel; every value owns its own random stream and the
/// result does not depend on the number of workers.
pub fn bifurcation_scan(cfg: &ScanConfig) -> Result<BifurcationDiagram, AnalysisError> {
    if cfg.grid_size < 2 {
        return Err(AnalysisError::Invalid("grid_size must be at least 2".into()));
    }
    if cfg.transient < MIN_TRANSIENT {
        return Err(AnalysisError::Invalid(format!(
            "transient must be at least {MIN_TRANSIENT} steps"
        )));
    }
    if cfg.runs_per_point == 0 {
        return Err(AnalysisError::Invalid("runs_per_point must be positive".into()));
    }
    if !(cfg.range.0.is_finite() && cfg.range.1.is_finite() && cfg.range.0 < cfg.range.1) {
        return Err(AnalysisError::Invalid("range must be finite and increasing".into()));
    }
    cfg.family.get(cfg.param)?;
    let values = grid(cfg.range, cfg.grid_size);
    let families: Vec<MapFamily> = values
        .iter()
        .map(|&v| cfg.family.with(cfg.param, v))
        .collect::<Result<_, _>>()?;

    let points: Vec<ScanPoint> = match &cfg.initial {
        InitialPolicy::Continuation { start } => {
            let start = fit_state(&cfg.family, start)?;
            let mut state = start.clone();
            let mut out = Vec::with_capacity(values.len());
            for (f, &value) in families.iter().zip(&values) {
                let mut samples = Vec::new();
                let mut diverged = 0;
                for _ in 0..cfg.runs_per_point {
                    if !run(f, &mut state, cfg.transient, cfg.samples, &mut samples) {
                        diverged += 1;
                        state = start.clone();
                    }
                }
                out.push(ScanPoint { value, samples, diverged_runs: diverged });
            }
            out
        }
        policy => {
            if let InitialPolicy::Fixed { state } = policy {
                fit_state(&cfg.family, state)?;
            }
            if let InitialPolicy::RandomInRange { lo, hi } = policy {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(AnalysisError::Invalid("random range must satisfy lo < hi".into()));
                }
            }
            families
                .par_iter()
                .zip(values.par_iter())
                .enumerate()
                .map(|(k, (f, &value))| {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                    rng.set_stream(k as u64);
                    let mut samples = Vec::new();
                    let mut diverged = 0;
                    for _ in 0..cfg.runs_per_point {
                        let mut state = match policy {
                            InitialPolicy::Fixed { state } => fit_state(f, state).expect("checked"),
                            InitialPolicy::RandomInRange { lo, hi } => {
                                let draws: Vec<f64> =
                                    (0..f.dim()).map(|_| rng.random_range(*lo..*hi)).collect();
                                f.initial_state(&draws)
                            }
                            InitialPolicy::Continuation { .. } => unreachable!(),
                        };
                        if !run(f, &mut state, cfg.transient, cfg.samples, &mut samples) {
                            diverged += 1;
                        }
                    }
                    ScanPoint { value, samples, diverged_runs: diverged }
                })
                .collect()
        }
    };

    let critical = if cfg.detect_critical {
        let margins: Vec<f64> = families.par_iter().map(|f| f.fixed_points().margin()).collect();
        let brackets: Vec<(f64, f64)> = (0..values.len() - 1)
            .filter(|&i| (margins[i] < 1.0) != (margins[i + 1] < 1.0))
            .map(|i| (values[i], values[i + 1]))
            .collect();
        brackets
            .par_iter()
            .map(|&r| find_bifurcation(&cfg.family, cfg.param, r, None))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        Vec::new()
    };

    Ok(BifurcationDiagram {
        param: cfg.param,
        transient: cfg.transient,
        points,
        critical,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::period::{detect_period, PeriodKind};

    #[test]
    fn transformed_map_period_doubling_at_three() {
        let f = MapFamily::Transformed { alpha: 3.0 };
        let b = find_bifurcation(&f, FamilyParam::Alpha, (2.5, 3.5), None).unwrap();
        assert!((b.value - 3.0).abs() < 1e-4);
        assert_eq!(b.kind, BifurcationKind::PeriodDoubling);
        assert!((b.multiplier.re + 1.0).abs() < 1e-3);
    }

    #[test]
    fn brackets_straddle_unity() {
        let f = MapFamily::Transformed { alpha: 3.0 };
        let b = find_bifurcation(&f, FamilyParam::Alpha, (2.2, 3.3), None).unwrap();
        let m0 = stability_margin(&f, FamilyParam::Alpha, b.bracket.0).unwrap();
        let m1 = stability_margin(&f, FamilyParam::Alpha, b.bracket.1).unwrap();
        assert_ne!(m0 < 1.0, m1 < 1.0);
        assert!(b.bracket.1 - b.bracket.0 <= 1e-4);
    }

    #[test]
    fn coupled_pair_bifurcations() {
        let f = MapFamily::CoupledPair { alpha: 3.1, k2: 0.0 };
        let pd = find_bifurcation(&f, FamilyParam::K2, (-0.4, 0.0), None).unwrap();
        let ns = find_bifurcation(&f, FamilyParam::K2, (0.0, 0.5), None).unwrap();
        assert_eq!(pd.kind, BifurcationKind::PeriodDoubling);
        assert!((pd.value + 0.21).abs() < 5e-3, "{}", pd.value);
        assert_eq!(ns.kind, BifurcationKind::NeimarkSacker);
        assert!((ns.value - 0.33).abs() < 5e-3, "{}", ns.value);
    }

    #[test]
    fn no_crossing_and_kind_mismatch() {
        let f = MapFamily::Transformed { alpha: 2.0 };
        assert!(matches!(
            find_bifurcation(&f, FamilyParam::Alpha, (1.5, 2.5), None),
            Err(AnalysisError::NoCrossing { .. })
        ));
        assert!(matches!(
            find_bifurcation(&f, FamilyParam::Alpha, (2.5, 3.5), Some(BifurcationKind::NeimarkSacker)),
            Err(AnalysisError::KindMismatch { .. })
        ));
    }

    fn alpha_scan(initial: InitialPolicy) -> ScanConfig {
        ScanConfig {
            family: MapFamily::Transformed { alpha: 3.0 },
            param: FamilyParam::Alpha,
            range: (2.5, 3.57),
            grid_size: 108,
            transient: 20_000,
            samples: 64,
            initial,
            runs_per_point: 1,
            seed: 3,
            detect_critical: true,
        }
    }

    #[test]
    fn transformed_scan_splits_at_three() {
        let d = bifurcation_scan(&alpha_scan(InitialPolicy::Fixed { state: vec![0.05] })).unwrap();
        for p in &d.points {
            let tail = p.samples.iter().copied().cycle().take(256).collect::<Vec<_>>();
            let k = detect_period(&tail, 1e-6).unwrap();
            if p.value < 2.99 {
                assert_eq!(k.kind, PeriodKind::P1, "alpha {}", p.value);
            } else if p.value > 3.01 && p.value < 3.44 {
                assert_eq!(k.kind, PeriodKind::P2, "alpha {}", p.value);
            }
        }
        assert_eq!(d.critical.len(), 1);
        assert!((d.critical[0].value - 3.0).abs() < 1e-4);
    }

    #[test]
    fn scan_policies_are_deterministic() {
        let r = alpha_scan(InitialPolicy::RandomInRange { lo: -0.1, hi: 0.1 });
        assert_eq!(bifurcation_scan(&r).unwrap(), bifurcation_scan(&r).unwrap());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let single = pool.install(|| bifurcation_scan(&r).unwrap());
        assert_eq!(single, bifurcation_scan(&r).unwrap());
        let c = alpha_scan(InitialPolicy::Continuation { start: vec![0.05] });
        assert_eq!(bifurcation_scan(&c).unwrap(), bifurcation_scan(&c).unwrap());
    }

    #[test]
    fn scan_rejects_bad_configs() {
        let mut c = alpha_scan(InitialPolicy::Fixed { state: vec![0.05] });
        c.grid_size = 1;
        assert!(bifurcation_scan(&c).is_err());
        let mut c = alpha_scan(InitialPolicy::Fixed { state: vec![0.05] });
        c.transient = 10;
        assert!(bifurcation_scan(&c).is_err());
        let mut c = alpha_scan(InitialPolicy::Fixed { state: vec![0.05] });
        c.param = FamilyParam::K3;
        assert!(bifurcation_scan(&c).is_err());
    }

    #[test]
    fn divergence_is_recorded_per_point() {
        let mut c = alpha_scan(InitialPolicy::Fixed { state: vec![0.05] });
        c.range = (3.5, 4.5);
        c.grid_size = 5;
        c.detect_critical = false;
        let d = bifurcation_scan(&c).unwrap();
        assert_eq!(d.points.len(), 5);
        assert_eq!(d.points[4].diverged_runs, 1);
        assert!(d.points[4].samples.is_empty());
        assert!(d.points.iter().all(|p| p.samples.iter().all(|v| v.is_finite())));
    }
}
