//! Populations coupled through random per-emitter weights, with and without
//! a delayed reflector in the water.

use efco::analysis::{
    classify_reflection, detect_period, dispersion_series, settling_step, sync_envelope_metrics,
    time_to_sync, PeriodKind, Reflection, DEFAULT_SYNC_EPSILON,
};
use efco::medium::sample_couplings;
use efco::sim::{run_synchronous, Action, DeviceSpec, MirrorGain, Scenario, ScheduledEvent};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

fn with_mirror(mut s: Scenario, on_step: u64) -> Scenario {
    let m = s.devices.len();
    let mut mirror = DeviceSpec::mirror(2, MirrorGain::Fixed { gain: 2.0 });
    mirror.active = false;
    s.devices.push(mirror);
    s.schedule.push(ScheduledEvent { device: m, step: on_step, action: Action::Activate });
    s
}

#[test]
fn swarm_synchronizes_quickly() {
    let times: Vec<f64> = (0..20)
        .map(|seed| {
            let t = run_synchronous(&Scenario::swarm(10, -0.01, 200, seed), 200).unwrap();
            let m = sync_envelope_metrics(&t, DEFAULT_SYNC_EPSILON).unwrap();
            m.time_to_sync.expect("synchronizes") as f64
        })
        .collect();
    assert!(median(times.clone()) <= 12.0, "{times:?}");
}

#[test]
fn mirror_turns_period_two_into_period_four() {
    let mut p4 = 0;
    let mut times = Vec::new();
    for seed in 0..20 {
        let t = run_synchronous(&with_mirror(Scenario::swarm(10, -0.01, 600, seed), 50), 600).unwrap();
        let states = t.oscillator_states();
        let x = states[0];
        if detect_period(&x[x.len() - 256..], 1e-6).unwrap().kind == PeriodKind::P4 {
            p4 += 1;
        }
        let d = dispersion_series(&states);
        let synced = time_to_sync(&d, DEFAULT_SYNC_EPSILON);
        let settled = settling_step(x, 4, 1e-6);
        if let (Some(a), Some(b)) = (synced, settled) {
            times.push(a.max(b) as f64);
        }
        assert_eq!(classify_reflection(&t).unwrap(), Reflection::Mirror);
    }
    assert!(p4 >= 18, "{p4}");
    assert!(median(times) <= 160.0);
}

#[test]
fn spec_sampler_has_zero_diagonal_and_spread_around_offset() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = sample_couplings(10, -0.01, &mut rng);
    for i in 0..10 {
        assert_eq!(g.get(i, i), 0.0);
        for j in 0..10 {
            if i != j {
                assert!((g.get(i, j) + 0.01).abs() <= 3e-3 + 1e-15);
            }
        }
    }
}
