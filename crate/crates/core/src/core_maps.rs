//! The map equations iterated by every oscillating device.
//!
//! Everything here is a pure function of its arguments. The simulator and the
//! analysis toolkit both call into this module, so the arithmetic (including
//! the order of floating-point operations) is kept in exactly one place.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::medium::CouplingMatrix;

/// Magnitude above which a state is considered to have escaped.
pub const DEFAULT_BLOWUP_BOUND: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MapError {
    #[error("state diverged (value {value})")]
    Divergence { value: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("history too short: need {needed} past values, have {available}")]
    InsufficientHistory { needed: usize, available: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapParams {
    pub alpha: f64,
}

impl MapParams {
    pub const fn new(alpha: f64) -> Self {
        Self { alpha }
    }

    /// Whether α lies in the band [−1, 4] explored by the reference studies.
    pub fn in_studied_band(&self) -> bool {
        (-1.0..=4.0).contains(&self.alpha)
    }
}

impl Default for MapParams {
    fn default() -> Self {
        Self { alpha: 3.1 }
    }
}

/// Gains of the receive path. `k1_*` cancel the device's own signal; `k2`
/// scales what is left (the contribution of the other emitters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CouplingGains {
    pub k1_pos: f64,
    pub k1_neg: f64,
    pub k2: f64,
}

impl CouplingGains {
    pub const fn new(k1_pos: f64, k1_neg: f64, k2: f64) -> Self {
        Self { k1_pos, k1_neg, k2 }
    }

    pub const fn symmetric(k1: f64, k2: f64) -> Self {
        Self::new(k1, k1, k2)
    }

    /// The self-signal gain that applies to an emission of the given sign.
    pub fn k1_for(&self, xi_o: f64) -> f64 {
        if xi_o >= 0.0 {
            self.k1_pos
        } else {
            self.k1_neg
        }
    }
}

impl Default for CouplingGains {
    fn default() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DelayGains {
    pub k3: f64,
    pub k4: f64,
    pub gamma: usize,
}

impl DelayGains {
    pub const fn new(k3: f64, k4: f64) -> Self {
        Self { k3, k4, gamma: 2 }
    }
}

impl Default for DelayGains {
    fn default() -> Self {
        Self::new(0.0, 0.0)
    }
}

/// Current state plus a fixed-capacity window of past states.
///
/// The window always holds `max(gamma, 2) + 1` values, newest last, so
/// `lag(0)` is `x`, `lag(1)` is x_{n−1} and so on.
#[derive(Debug, Clone, PartialEq)]
pub struct OscState {
    pub x: f64,
    history: VecDeque<f64>,
}

impl OscState {
    /// A state whose (virtual) past is constant and equal to `x0`.
    pub fn new(x0: f64, gamma: usize) -> Self {
        let cap = gamma.max(2) + 1;
        Self {
            x: x0,
            history: std::iter::repeat_n(x0, cap).collect(),
        }
    }

    /// Build from an explicit past, oldest first; the last value becomes `x`.
    /// The window is padded at the front with the oldest value if short.
    pub fn with_history(past: &[f64], gamma: usize) -> Self {
        let cap = gamma.max(2) + 1;
        assert!(!past.is_empty(), "history needs at least the current state");
        let start = past.len().saturating_sub(cap);
        let mut history: VecDeque<f64> = past[start..].iter().copied().collect();
        while history.len() < cap {
            history.push_front(past[0]);
        }
        Self {
            x: *past.last().unwrap(),
            history,
        }
    }

    pub fn capacity(&self) -> usize {
        self.history.len()
    }

    /// x_{n−k}. Panics if `k` exceeds the window.
    pub fn lag(&self, k: usize) -> f64 {
        self.history[self.history.len() - 1 - k]
    }

    pub fn try_lag(&self, k: usize) -> Result<f64, MapError> {
        if k >= self.history.len() {
            return Err(MapError::InsufficientHistory {
                needed: k,
                available: self.history.len() - 1,
            });
        }
        Ok(self.lag(k))
    }

    pub fn push(&mut self, x: f64) {
        self.history.pop_front();
        self.history.push_back(x);
        self.x = x;
    }
}

#[inline]
fn finite(value: f64) -> Result<f64, MapError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(MapError::Divergence { value })
    }
}

#[inline]
fn bounded(value: f64, bound: f64) -> Result<f64, MapError> {
    if value.is_finite() && value.abs() <= bound {
        Ok(value)
    } else {
        Err(MapError::Divergence { value })
    }
}

/// The transformed logistic map x(2 − αx − α).
#[inline]
pub fn logistic_step(x: f64, p: MapParams) -> Result<f64, MapError> {
    finite(x * (2.0 - p.alpha * x - p.alpha))
}

/// One microcontroller iteration: the map plus the residual field left after
/// cancelling the device's own emission.
///
/// `xi_o` is whatever the device emitted this step; the caller decides
/// whether that is f(xₙ) or xₙ itself.
pub fn coupled_step(
    x: f64,
    p: MapParams,
    g: CouplingGains,
    xi_w: f64,
    xi_o: f64,
) -> Result<f64, MapError> {
    coupled_step_bounded(x, p, g, xi_w, xi_o, DEFAULT_BLOWUP_BOUND)
}

pub fn coupled_step_bounded(
    x: f64,
    p: MapParams,
    g: CouplingGains,
    xi_w: f64,
    xi_o: f64,
    bound: f64,
) -> Result<f64, MapError> {
    let fx = logistic_step(x, p)?;
    bounded(fx + g.k2 * (xi_w - g.k1_for(xi_o) * xi_o), bound)
}

fn row_dot(row: &[f64], v: &[f64]) -> f64 {
    row.iter().zip(v).map(|(g, x)| g * x).sum()
}

/// Synchronous update of m devices coupled through the superposed field.
/// The coupling sums all use the pre-update vector.
pub fn multi_coupled_step(
    states: &[f64],
    p: MapParams,
    g: &CouplingMatrix,
) -> Result<Vec<f64>, MapError> {
    if states.len() != g.dim() {
        return Err(MapError::DimensionMismatch {
            expected: g.dim(),
            found: states.len(),
        });
    }
    states
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let fx = logistic_step(x, p)?;
            bounded(fx + row_dot(g.row(i), states), DEFAULT_BLOWUP_BOUND)
        })
        .collect()
}

/// The one-step symmetric pair map (F, G) with coupling `k2`.
#[inline]
pub fn pair_step(x: f64, y: f64, p: MapParams, k2: f64) -> Result<(f64, f64), MapError> {
    let nx = logistic_step(x, p)? + k2 * y;
    let ny = logistic_step(y, p)? + k2 * x;
    Ok((finite(nx)?, finite(ny)?))
}

/// The pair map applied twice.
pub fn second_iterate_pair(
    x: f64,
    y: f64,
    p: MapParams,
    k2: f64,
) -> Result<(f64, f64), MapError> {
    let (x1, y1) = pair_step(x, y, p, k2)?;
    pair_step(x1, y1, p, k2)
}

/// xₙ(2 − αxₙ − α) + k3·x_{n−1} + k4·x_{n−2}.
pub fn delayed_step(s: &OscState, p: MapParams, d: &DelayGains) -> Result<f64, MapError> {
    let x1 = s.try_lag(1)?;
    let x2 = s.try_lag(2)?;
    delayed_triple_step(s.x, x1, x2, p, d)
}

/// First component of the equivalent three-variable system
/// (x, y, z) ↦ (f(x) + k3·y + k4·z, x, y).
#[inline]
pub fn delayed_triple_step(
    x: f64,
    y: f64,
    z: f64,
    p: MapParams,
    d: &DelayGains,
) -> Result<f64, MapError> {
    let fx = logistic_step(x, p)?;
    bounded(fx + d.k3 * y + d.k4 * z, DEFAULT_BLOWUP_BOUND)
}

/// Synchronous update with an additional delayed copy of the field,
/// xₙ₊₁ⁱ = f(xₙⁱ) + Σ gⁱʲxₙʲ + Σ g̃ⁱʲx_{n−γ}ʲ.
pub fn mirror_coupled_step(
    states: &[OscState],
    p: MapParams,
    g: &CouplingMatrix,
    g_tilde: &CouplingMatrix,
    gamma: usize,
) -> Result<Vec<f64>, MapError> {
    let m = g.dim();
    for found in [states.len(), g_tilde.dim()] {
        if found != m {
            return Err(MapError::DimensionMismatch { expected: m, found });
        }
    }
    let now: Vec<f64> = states.iter().map(|s| s.x).collect();
    let delayed: Vec<f64> = states
        .iter()
        .map(|s| s.try_lag(gamma))
        .collect::<Result<_, _>>()?;
    (0..m)
        .map(|i| {
            let fx = logistic_step(now[i], p)?;
            let value = fx + row_dot(g.row(i), &now) + row_dot(g_tilde.row(i), &delayed);
            bounded(value, DEFAULT_BLOWUP_BOUND)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const A31: MapParams = MapParams::new(3.1);

    #[test]
    fn logistic_examples() {
        assert_eq!(logistic_step(0.0, A31).unwrap(), 0.0);
        assert!((logistic_step(0.08714, A31).unwrap() + 0.11940).abs() < 1e-5);
        // 0.1 * (2 - 0.31 - 3.1)
        assert!((logistic_step(0.1, A31).unwrap() + 0.141).abs() < 1e-12);
    }

    #[test]
    fn logistic_reports_non_finite() {
        let err = logistic_step(f64::MAX, A31).unwrap_err();
        assert!(matches!(err, MapError::Divergence { .. }));
    }

    #[test]
    fn coupled_examples() {
        let g = CouplingGains::new(0.0, 0.0, 0.5);
        let y = coupled_step(0.1, A31, g, 0.02, -0.141).unwrap();
        assert!((y + 0.131).abs() < 1e-12);

        let off = CouplingGains::new(0.2, 0.4, 0.0);
        assert_eq!(
            coupled_step(0.1, A31, off, 123.0, -0.141).unwrap(),
            logistic_step(0.1, A31).unwrap()
        );
    }

    #[test]
    fn sign_dependent_k1() {
        let g = CouplingGains::new(0.13, 0.03, 1.0);
        assert_eq!(g.k1_for(0.5), 0.13);
        assert_eq!(g.k1_for(0.0), 0.13);
        assert_eq!(g.k1_for(-0.5), 0.03);
    }

    #[test]
    fn coupled_step_blowup_bound() {
        let g = CouplingGains::new(0.0, 0.0, 1.0);
        let err = coupled_step_bounded(0.0, A31, g, 10.0, 0.0, 5.0).unwrap_err();
        assert_eq!(err, MapError::Divergence { value: 10.0 });
    }

    #[test]
    fn multi_examples() {
        let one = CouplingMatrix::zeros(1);
        assert_eq!(
            multi_coupled_step(&[0.1], A31, &one).unwrap(),
            vec![logistic_step(0.1, A31).unwrap()]
        );

        let g = CouplingMatrix::from_rows(&[vec![0.1, 0.1], vec![0.1, 0.1]]).unwrap();
        assert_eq!(multi_coupled_step(&[0.0, 0.0], A31, &g).unwrap(), vec![0.0, 0.0]);

        let g = CouplingMatrix::from_rows(&[vec![0.0, 0.05], vec![0.05, 0.0]]).unwrap();
        let out = multi_coupled_step(&[0.1, 0.1], A31, &g).unwrap();
        for v in out {
            assert!((v + 0.136).abs() < 1e-12);
        }

        let err = multi_coupled_step(&[0.1], A31, &g).unwrap_err();
        assert_eq!(err, MapError::DimensionMismatch { expected: 2, found: 1 });
    }

    #[test]
    fn second_iterate_examples() {
        let x0 = 0.08714;
        let (x2, y2) = second_iterate_pair(x0, x0, A31, 0.0).unwrap();
        assert!((x2 - x0).abs() < 1e-4 && (y2 - x0).abs() < 1e-4);
        assert_eq!(second_iterate_pair(0.0, 0.0, A31, 0.3).unwrap(), (0.0, 0.0));
        let (a, b) = second_iterate_pair(0.1, 0.1, A31, 0.05).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn delayed_examples() {
        let d0 = DelayGains::new(0.0, 0.0);
        let s = OscState::with_history(&[0.3, -0.2, 0.1], 2);
        assert_eq!(delayed_step(&s, A31, &d0).unwrap(), logistic_step(0.1, A31).unwrap());
        let zero = OscState::new(0.0, 2);
        assert_eq!(delayed_step(&zero, A31, &DelayGains::new(0.4, -0.2)).unwrap(), 0.0);

        let d = DelayGains::new(0.1, 0.1);
        let xs: f64 = (1.0 - 3.1 + 0.2) / 3.1;
        assert!((xs + 0.6129).abs() < 1e-4);
        let fixed = OscState::new(xs, 2);
        assert!((delayed_step(&fixed, A31, &d).unwrap() - xs).abs() < 1e-9);
    }

    #[test]
    fn osc_state_window() {
        let mut s = OscState::new(0.5, 4);
        assert_eq!(s.capacity(), 5);
        s.push(1.0);
        s.push(2.0);
        assert_eq!(s.x, 2.0);
        assert_eq!((s.lag(0), s.lag(1), s.lag(2), s.lag(3)), (2.0, 1.0, 0.5, 0.5));
        assert!(s.try_lag(5).is_err());
        let h = OscState::with_history(&[1.0, 2.0, 3.0, 4.0], 1);
        assert_eq!(h.capacity(), 3);
        assert_eq!((h.lag(0), h.lag(2)), (4.0, 2.0));
    }

    #[test]
    fn mirror_examples() {
        let g = CouplingMatrix::from_rows(&[vec![0.0, -0.01], vec![-0.012, 0.0]]).unwrap();
        let states = vec![
            OscState::with_history(&[0.05, -0.1, 0.08], 2),
            OscState::with_history(&[-0.02, 0.09, -0.11], 2),
        ];
        let plain = multi_coupled_step(&[0.08, -0.11], A31, &g).unwrap();
        let zero = CouplingMatrix::zeros(2);
        assert_eq!(mirror_coupled_step(&states, A31, &g, &zero, 2).unwrap(), plain);

        let doubled = g.scaled(2.0);
        let a = mirror_coupled_step(&states, A31, &g, &g, 0).unwrap();
        let b = multi_coupled_step(&[0.08, -0.11], A31, &doubled).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-15);
        }
        let err = mirror_coupled_step(&states, A31, &g, &g, 3).unwrap_err();
        assert!(matches!(err, MapError::InsufficientHistory { .. }));
    }

    proptest! {
        #[test]
        fn balancing_identity(x in -1.5f64..1.5, alpha in -1.0f64..4.0,
                              k1p in 0.0f64..1.0, k1n in 0.0f64..1.0, k2 in -2.0f64..2.0) {
            let p = MapParams::new(alpha);
            let g = CouplingGains::new(k1p, k1n, k2);
            let xi_o = logistic_step(x, p).unwrap();
            let xi_w = g.k1_for(xi_o) * xi_o;
            prop_assert_eq!(coupled_step(x, p, g, xi_w, xi_o).unwrap(), xi_o);
        }

        #[test]
        fn origin_invariance(alpha in -1.0f64..4.0,
                             entries in proptest::collection::vec(-1.0f64..1.0, 9),
                             tilde in proptest::collection::vec(-1.0f64..1.0, 9),
                             gamma in 0usize..5) {
            let p = MapParams::new(alpha);
            let g = CouplingMatrix::new(3, entries).unwrap();
            let gt = CouplingMatrix::new(3, tilde).unwrap();
            prop_assert_eq!(multi_coupled_step(&[0.0; 3], p, &g).unwrap(), vec![0.0; 3]);
            let states = vec![OscState::new(0.0, gamma); 3];
            prop_assert_eq!(mirror_coupled_step(&states, p, &g, &gt, gamma).unwrap(), vec![0.0; 3]);
        }

        #[test]
        fn exchange_symmetry(alpha in 2.5f64..3.5,
                             upper in proptest::collection::vec(-0.05f64..0.05, 6),
                             xs in proptest::collection::vec(-0.2f64..0.2, 4),
                             perm in Just([2usize, 0, 3, 1]).prop_shuffle()) {
            let p = MapParams::new(alpha);
            let mut rows = vec![vec![0.0; 4]; 4];
            let mut it = upper.iter();
            for i in 0..4 {
                for j in (i + 1)..4 {
                    let v = *it.next().unwrap();
                    rows[i][j] = v;
                    rows[j][i] = v;
                }
            }
            let g = CouplingMatrix::from_rows(&rows).unwrap();
            let permuted_rows: Vec<Vec<f64>> = (0..4)
                .map(|i| (0..4).map(|j| rows[perm[i]][perm[j]]).collect())
                .collect();
            let gp = CouplingMatrix::from_rows(&permuted_rows).unwrap();
            let xp: Vec<f64> = perm.iter().map(|&k| xs[k]).collect();
            let out = multi_coupled_step(&xs, p, &g).unwrap();
            let out_p = multi_coupled_step(&xp, p, &gp).unwrap();
            for i in 0..4 {
                prop_assert!((out_p[i] - out[perm[i]]).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn second_iterate_consistency() {
        // 10^4 deterministic pseudo-random samples.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let x = rng.random_range(-1.0..1.0);
            let y = rng.random_range(-1.0..1.0);
            let p = MapParams::new(rng.random_range(-1.0..4.0));
            let k2 = rng.random_range(-0.5..0.5);
            let (x1, y1) = pair_step(x, y, p, k2).unwrap();
            let twice = pair_step(x1, y1, p, k2).unwrap();
            // independent transcription of the pair map
            let f = |u: f64, v: f64| u * (2.0 - p.alpha * u - p.alpha) + k2 * v;
            let (ox, oy) = (f(x, y), f(y, x));
            let (ox, oy) = (f(ox, oy), f(oy, ox));
            let got = second_iterate_pair(x, y, p, k2).unwrap();
            assert_eq!(got, twice);
            assert!((got.0 - ox).abs() <= 1e-14 && (got.1 - oy).abs() <= 1e-14);
        }
    }

    #[test]
    fn delayed_matches_triple_system() {
        let p = A31;
        let d = DelayGains::new(-0.3, 0.12);
        let mut s = OscState::with_history(&[0.02, -0.05, 0.1], 2);
        let (mut x, mut y, mut z) = (0.1, -0.05, 0.02);
        for _ in 0..1000 {
            let next = delayed_step(&s, p, &d).unwrap();
            s.push(next);
            let nx = x * (2.0 - p.alpha * x - p.alpha) + d.k3 * y + d.k4 * z;
            (x, y, z) = (nx, x, y);
            assert_eq!(s.x.to_bits(), x.to_bits());
        }
    }
}
