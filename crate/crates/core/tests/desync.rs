//! Two free-running oscillators on slightly different clocks, heard by a
//! fast listener: the sensed field beats between the sum and the difference
//! of their emissions.

use efco::analysis::{sync_envelope_metrics, EnvelopeStatus};
use efco::core_maps::CouplingGains;
use efco::sim::{run_event_driven, CouplingSource, DeviceSpec, Scenario, TimeBound};

const T: f64 = 2e-3;

fn scene(rel_skew_hz: f64, duration: f64) -> Scenario {
    let mut a = DeviceSpec::oscillator(3.1, 0.1);
    a.gains = CouplingGains::new(0.0, 0.0, 0.0);
    let mut b = a;
    // one P2 cycle (2T) of relative drift per beat
    b.clock_skew = 1.0 / (1.0 - rel_skew_hz * 2.0 * T) - 1.0;
    let mut l = DeviceSpec::listener();
    l.clock_period = 5e-5;
    l.pulse_duration = 5e-5;
    let rows = vec![vec![0.0; 3], vec![0.0; 3], vec![0.1, 0.1, 0.0]];
    Scenario::new(vec![a, b, l], CouplingSource::Explicit { rows }, TimeBound::Duration(duration))
}

fn p2_half_amplitude() -> f64 {
    // independent oracle: the period-2 orbit of x(2 − αx − α) solves
    // α²x² + α(α − 3)x − (α − 3) = 0
    let a = 3.1f64;
    let (qa, qb, qc) = (a * a, a * (a - 3.0), -(a - 3.0));
    let d = (qb * qb - 4.0 * qa * qc).sqrt();
    ((-qb + d) / (2.0 * qa) - (-qb - d) / (2.0 * qa)) / 2.0
}

#[test]
fn envelope_spans_sum_and_difference() {
    let trace = run_event_driven(&scene(0.2, 12.0), 12.0).unwrap();
    let m = sync_envelope_metrics(&trace, 1e-3).unwrap();
    assert_eq!(m.envelope_status, EnvelopeStatus::Measured);
    let env = m.envelope.unwrap();
    let amp = p2_half_amplitude();
    let (want_max, want_min) = (amp * (0.1 + 0.1), amp * (0.1 - 0.1));
    assert!((env.max - want_max).abs() < 0.05 * want_max, "{env:?}");
    assert!((env.min - want_min).abs() < 0.05 * want_max, "{env:?}");
    assert!((env.beat_period_s - 5.0).abs() < 0.25, "{env:?}");
}

#[test]
fn short_record_is_flagged() {
    let trace = run_event_driven(&scene(0.2, 3.0), 3.0).unwrap();
    let m = sync_envelope_metrics(&trace, 1e-3).unwrap();
    assert_eq!(m.envelope_status, EnvelopeStatus::ShorterThanBeat);
    assert!(m.envelope.is_none());
}
