//! Dynamical-systems toolkit: stationary states and their stability,
//! bifurcations, period classification, synchronization metrics and the
//! estimators built on top of them.

mod bifurcation;
mod family;
mod fixed_points;
mod group;
mod period;
mod reflection;
mod sync;

pub use bifurcation::{
    bifurcation_scan, find_bifurcation, stability_margin, BifurcationDiagram, BifurcationKind,
    BifurcationPoint, InitialPolicy, ScanConfig, ScanPoint, MIN_TRANSIENT,
};
pub use family::{FamilyParam, MapFamily};
pub use fixed_points::{
    central_difference_jacobian, coupled_pair_stability, delayed_stability, eigenvalues,
    fixed_points_single, FixedPoint, FixedPointReport, STABILITY_TOL,
};
pub use group::{
    build_e_curve, build_m_curve, estimate_group_stats, swarm_ratio, CalibrationCurve,
    GroupCalibration, GroupCurveConfig, GroupEstimate, Knot, ParamEstimate,
};
pub use period::{detect_period, settling_step, PeriodClass, PeriodKind, MIN_TAIL, TESTED_PERIODS};
pub use reflection::{classify_reflection, classify_reflection_with, Reflection, ReflectionConfig};
pub use sync::{
    cycle_ratio, dispersion_series, envelope, sync_envelope_metrics, time_to_sync, Envelope,
    EnvelopeStatus, SyncMetrics, DEFAULT_SYNC_EPSILON,
};

use thiserror::Error;

use crate::core_maps::MapError;
use crate::sim::SimError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("no stability change in [{lo}, {hi}]")]
    NoCrossing { lo: f64, hi: f64 },
    #[error("expected a {expected:?} bifurcation, found {found:?}")]
    KindMismatch {
        expected: BifurcationKind,
        found: BifurcationKind,
    },
    #[error("{param:?} is not a parameter of this map family")]
    UnknownParam { param: FamilyParam },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("sequence too short: need {needed}, have {available}")]
    TooShort { needed: usize, available: usize },
    #[error("trace has no usable channels: {0}")]
    InsufficientChannels(String),
    #[error("ratio {ratio} outside the calibrated range [{lo}, {hi}]")]
    OutOfRange { ratio: f64, lo: f64, hi: f64 },
    #[error("indeterminate: {0}")]
    Indeterminate(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Map(#[from] MapError),
}
