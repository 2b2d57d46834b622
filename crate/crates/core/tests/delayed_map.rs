//! Delayed self-feedback: stationary-state stability and the regimes seen
//! in parameter scans.

use efco::analysis::{
    bifurcation_scan, delayed_stability, detect_period, FamilyParam, InitialPolicy, MapFamily,
    PeriodKind, ScanConfig,
};
use efco::core_maps::{delayed_step, delayed_triple_step, DelayGains, MapParams, OscState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scan(family: MapFamily, param: FamilyParam, range: (f64, f64), grid: usize) -> Vec<(f64, PeriodKind)> {
    let cfg = ScanConfig {
        family,
        param,
        range,
        grid_size: grid,
        transient: 3000,
        samples: 256,
        initial: InitialPolicy::RandomInRange { lo: 0.0, hi: 0.1 },
        runs_per_point: 4,
        seed: 11,
        detect_critical: false,
    };
    let d = bifurcation_scan(&cfg).unwrap();
    d.points
        .iter()
        .map(|p| {
            if p.diverged_runs > 0 {
                return (p.value, PeriodKind::Divergent);
            }
            // every run must agree for the grid value to get a label
            let kinds: Vec<PeriodKind> = p
                .samples
                .chunks(256)
                .map(|c| detect_period(c, 1e-6).unwrap().kind)
                .collect();
            let k = if kinds.iter().all(|k| *k == kinds[0]) { kinds[0] } else { PeriodKind::Aperiodic };
            (p.value, k)
        })
        .collect()
}

#[test]
fn negative_k3_settles_on_the_origin() {
    let f = MapFamily::Delayed { alpha: 3.1, k3: 0.0, k4: 0.0 };
    let pts = scan(f, FamilyParam::K3, (-1.0, -0.0333), 30);
    for (k3, kind) in &pts {
        // the P2 cycle gives way to the now-stable zero state
        if *k3 > -0.7 && *k3 < -0.15 {
            assert_eq!(*kind, PeriodKind::P1, "k3 = {k3}");
        }
    }
    for (k3, _) in pts {
        let r = delayed_stability(MapParams::new(3.1), &DelayGains::new(k3, 0.0));
        let origin = r.points.iter().find(|q| q.state[0] == 0.0).unwrap();
        // λ(λ² + (α − 2)λ − k3) = 0: stable iff −1 ≤ k3 ≤ 3 − α
        let analytic = (-1.0 - 1e-9..=3.0 - 3.1 + 1e-9).contains(&k3);
        assert_eq!(origin.stable, analytic, "k3 = {k3}");
    }
}

#[test]
fn negative_k4_with_companion_gain_gives_period_four() {
    let f = MapFamily::Delayed { alpha: 3.1, k3: 0.138, k4: 0.0 };
    let pts = scan(f, FamilyParam::K4, (-0.3, 0.0), 31);
    let p4: Vec<f64> = pts.iter().filter(|p| p.1 == PeriodKind::P4).map(|p| p.0).collect();
    assert!(!p4.is_empty());
    for k4 in &p4 {
        assert!(*k4 < -0.15, "{k4}");
    }
    assert!(pts.iter().filter(|p| p.0 <= -0.2).all(|p| p.1 == PeriodKind::P4));
    // positive k4 at the same companion gain never gives period four
    let pos = scan(f, FamilyParam::K4, (0.0, 0.3), 16);
    assert!(pos.iter().all(|p| p.1 != PeriodKind::P4));
}

#[test]
fn delayed_step_matches_three_variable_system() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let p = MapParams::new(rng.random_range(2.8..3.3));
        let d = DelayGains::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
        let x0 = rng.random_range(-0.1..0.1);
        let mut st = OscState::new(x0, 2);
        let (mut x, mut y, mut z) = (x0, x0, x0);
        for _ in 0..1000 {
            let (Ok(a), Ok(b)) = (delayed_step(&st, p, &d), delayed_triple_step(x, y, z, p, &d)) else {
                break;
            };
            assert_eq!(a.to_bits(), b.to_bits());
            st.push(a);
            (x, y, z) = (b, x, y);
        }
    }
}
