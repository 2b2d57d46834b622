use serde::{Deserialize, Serialize};

use super::fixed_points::{coupled_pair_stability, delayed_stability, fixed_points_single, FixedPointReport};
use super::AnalysisError;
use crate::core_maps::{delayed_triple_step, logistic_step, pair_step, DelayGains, MapError, MapParams};

/// A one-parameter family of maps that can be scanned and analysed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family", deny_unknown_fields)]
pub enum MapFamily {
    /// The single transformed logistic map.
    Transformed { alpha: f64 },
    /// Two symmetrically coupled maps; fixed points are those of the second
    /// iterate (period-2 states).
    CoupledPair { alpha: f64, k2: f64 },
    /// The map with delayed self-feedback, as the system (x, y, z).
    Delayed { alpha: f64, k3: f64, k4: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyParam {
    Alpha,
    K2,
    K3,
    K4,
}

impl FamilyParam {
    pub fn name(&self) -> &'static str {
        match self {
            FamilyParam::Alpha => "alpha",
            FamilyParam::K2 => "k2",
            FamilyParam::K3 => "k3",
            FamilyParam::K4 => "k4",
        }
    }
}

impl MapFamily {
    pub fn dim(&self) -> usize {
        match self {
            MapFamily::Transformed { .. } => 1,
            MapFamily::CoupledPair { .. } => 2,
            MapFamily::Delayed { .. } => 3,
        }
    }

    pub fn get(&self, param: FamilyParam) -> Result<f64, AnalysisError> {
        use FamilyParam::*;
        match (*self, param) {
            (MapFamily::Transformed { alpha }, Alpha)
            | (MapFamily::CoupledPair { alpha, .. }, Alpha)
            | (MapFamily::Delayed { alpha, .. }, Alpha) => Ok(alpha),
            (MapFamily::CoupledPair { k2, .. }, K2) => Ok(k2),
            (MapFamily::Delayed { k3, .. }, K3) => Ok(k3),
            (MapFamily::Delayed { k4, .. }, K4) => Ok(k4),
            _ => Err(AnalysisError::UnknownParam { param }),
        }
    }

    /// The same family with `param` set to `value`.
    pub fn with(&self, param: FamilyParam, value: f64) -> Result<Self, AnalysisError> {
        use FamilyParam::*;
        let mut f = *self;
        match (&mut f, param) {
            (MapFamily::Transformed { alpha }, Alpha)
            | (MapFamily::CoupledPair { alpha, .. }, Alpha)
            | (MapFamily::Delayed { alpha, .. }, Alpha) => *alpha = value,
            (MapFamily::CoupledPair { k2, .. }, K2) => *k2 = value,
            (MapFamily::Delayed { k3, .. }, K3) => *k3 = value,
            (MapFamily::Delayed { k4, .. }, K4) => *k4 = value,
            _ => return Err(AnalysisError::UnknownParam { param }),
        }
        Ok(f)
    }

    /// Advance `state` (length [`Self::dim`]) by one step.
    pub fn step(&self, state: &mut [f64]) -> Result<(), MapError> {
        match *self {
            MapFamily::Transformed { alpha } => {
                state[0] = logistic_step(state[0], MapParams::new(alpha))?;
            }
            MapFamily::CoupledPair { alpha, k2 } => {
                let (x, y) = pair_step(state[0], state[1], MapParams::new(alpha), k2)?;
                state[0] = x;
                state[1] = y;
            }
            MapFamily::Delayed { alpha, k3, k4 } => {
                let d = DelayGains::new(k3, k4);
                let x = delayed_triple_step(state[0], state[1], state[2], MapParams::new(alpha), &d)?;
                state[2] = state[1];
                state[1] = state[0];
                state[0] = x;
            }
        }
        if state.iter().any(|v| v.abs() > crate::core_maps::DEFAULT_BLOWUP_BOUND) {
            return Err(MapError::Divergence { value: state[0] });
        }
        Ok(())
    }

    pub fn fixed_points(&self) -> FixedPointReport {
        match *self {
            MapFamily::Transformed { alpha } => fixed_points_single(MapParams::new(alpha)),
            MapFamily::CoupledPair { alpha, k2 } => coupled_pair_stability(MapParams::new(alpha), k2),
            MapFamily::Delayed { alpha, k3, k4 } => {
                delayed_stability(MapParams::new(alpha), &DelayGains::new(k3, k4))
            }
        }
    }

    /// Initial state from independent per-coordinate draws. The delayed map
    /// starts from a constant history, so only the first draw is used.
    pub fn initial_state(&self, draws: &[f64]) -> Vec<f64> {
        match self {
            MapFamily::Delayed { .. } => vec![draws[0]; 3],
            _ => draws[..self.dim()].to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_access() {
        let f = MapFamily::Delayed { alpha: 3.1, k3: 0.1, k4: -0.2 };
        assert_eq!(f.get(FamilyParam::K4).unwrap(), -0.2);
        assert_eq!(f.with(FamilyParam::K3, 0.5).unwrap().get(FamilyParam::K3).unwrap(), 0.5);
        assert!(f.with(FamilyParam::K2, 0.5).is_err());
        let t = MapFamily::Transformed { alpha: 3.0 };
        assert!(matches!(t.get(FamilyParam::K2), Err(AnalysisError::UnknownParam { .. })));
    }

    #[test]
    fn delayed_step_shifts_history() {
        let f = MapFamily::Delayed { alpha: 3.1, k3: 0.2, k4: 0.1 };
        let mut s = vec![0.1, 0.2, 0.3];
        f.step(&mut s).unwrap();
        assert!((s[0] - (-0.141 + 0.04 + 0.03)).abs() < 1e-12);
        assert_eq!(&s[1..], &[0.1, 0.2]);
    }
}
