//! Simulation and analysis of nonlinear oscillators that couple through a
//! shared electric field in water.
//!
//! * [`core_maps`] — the map equations every device iterates.
//! * [`medium`] — coupling weights, superposition, sensing chain, noise and
//!   the passive mirror.
//! * [`sim`] — synchronous and event-driven engines, k₁ calibration, DAC.
//! * [`analysis`] — fixed points, bifurcations, periods, synchronization and
//!   the collective-perception estimators.
//! * [`currentmode`] — fixed-frequency dipoles sensed through RMS impedance.

pub mod analysis;
pub mod core_maps;
pub mod currentmode;
pub mod medium;
pub mod sim;
