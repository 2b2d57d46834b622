use super::{run_synchronous, CouplingSource, DeviceSpec, Role, Scenario, SimError, TimeBound};
use crate::medium::Medium;

/// Smallest number of samples of each emission sign the median needs.
const MIN_SAMPLES: usize = 3;

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Estimate a lone device's self-signal gains and store them in its
/// [`CouplingGains`](crate::core_maps::CouplingGains).
///
/// The device runs open-loop (k2 = 0) for `cycles` two-step oscillation
/// cycles (one emission of each sign per cycle) in `medium`, whose
/// coupling must be the 1×1 self-coupling. The ratios ξʷ/ξᵒ are split by
/// the sign of ξᵒ and the median of each group is returned as
/// `(k1_pos, k1_neg)`.
pub fn calibrate_k1(
    device: &mut DeviceSpec,
    medium: &Medium,
    cycles: u64,
) -> Result<(f64, f64), SimError> {
    if device.role != Role::Oscillator {
        return Err(SimError::Calibration("only oscillators emit".into()));
    }
    if medium.coupling.dim() != 1 {
        return Err(SimError::Calibration(format!(
            "device must be alone in the medium, found {} devices",
            medium.coupling.dim()
        )));
    }
    let mut open = *device;
    open.gains.k2 = 0.0;
    open.active = true;
    let mut scenario = Scenario::new(
        vec![open],
        CouplingSource::Explicit { rows: medium.coupling.rows() },
        TimeBound::Steps(2 * cycles),
    );
    scenario.noise = medium.noise;
    scenario.chain = medium.chain;
    let trace = run_synchronous(&scenario, 2 * cycles)?;
    if let Some(div) = trace.divergence {
        return Err(SimError::Calibration(format!(
            "device diverged at step {} during calibration",
            div.step
        )));
    }
    let d = &trace.devices[0];
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (&o, &w) in d.xi_o.iter().zip(&d.xi_w) {
        if o.abs() < 1e-12 {
            continue;
        }
        if o >= 0.0 { pos.push(w / o) } else { neg.push(w / o) }
    }
    if pos.is_empty() && neg.is_empty() {
        return Err(SimError::Calibration("device emitted nothing".into()));
    }
    for (name, v) in [("positive", &pos), ("negative", &neg)] {
        if v.len() < MIN_SAMPLES {
            return Err(SimError::Calibration(format!(
                "only {} {name} emissions, need {MIN_SAMPLES}",
                v.len()
            )));
        }
    }
    let k1 = (median(&mut pos), median(&mut neg));
    if k1.0 < 0.0 || k1.1 < 0.0 {
        return Err(SimError::Calibration(format!(
            "self-signal gains came out negative: {k1:?}"
        )));
    }
    device.gains.k1_pos = k1.0;
    device.gains.k1_neg = k1.1;
    Ok(k1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core_maps::CouplingGains;
    use crate::medium::{CouplingMatrix, NoiseModel, SensingChain};

    fn medium(self_gain: f64) -> Medium {
        Medium::quiet(CouplingMatrix::new(1, vec![self_gain]).unwrap())
    }

    #[test]
    fn symmetric_self_gain() {
        let mut dev = DeviceSpec::oscillator(3.1, 0.1);
        let k1 = calibrate_k1(&mut dev, &medium(0.1), 200).unwrap();
        assert!((k1.0 - 0.1).abs() < 1e-12 && (k1.1 - 0.1).abs() < 1e-12);
        assert_eq!((dev.gains.k1_pos, dev.gains.k1_neg), k1);
    }

    #[test]
    fn asymmetric_amplifier() {
        let mut m = medium(1.0);
        m.chain = SensingChain {
            gain: 0.13,
            negative_gain: Some(0.03),
            ..SensingChain::default()
        };
        let mut dev = DeviceSpec::oscillator(3.1, 0.1);
        let (hi, lo) = calibrate_k1(&mut dev, &m, 500).unwrap();
        assert!((hi - 0.13).abs() < 0.005 && (lo - 0.03).abs() < 0.005);
    }

    #[test]
    fn needs_both_signs() {
        // α = 0.5: the state creeps up to the fixed point at 1 and never turns negative
        let mut dev = DeviceSpec::oscillator(0.5, 0.5);
        let err = calibrate_k1(&mut dev, &medium(0.1), 100).unwrap_err();
        assert!(matches!(err, SimError::Calibration(_)));
        let mut silent = DeviceSpec::oscillator(3.1, 0.0);
        assert!(calibrate_k1(&mut silent, &medium(0.1), 100).is_err());
    }

    #[test]
    fn refuses_company() {
        let mut dev = DeviceSpec::oscillator(3.1, 0.1);
        assert!(calibrate_k1(&mut dev, &Medium::quiet(CouplingMatrix::zeros(2)), 10).is_err());
    }

    fn solo_run(dev: DeviceSpec, m: &Medium, steps: u64) -> Vec<f64> {
        let mut s = Scenario::new(
            vec![dev],
            CouplingSource::Explicit { rows: m.coupling.rows() },
            TimeBound::Steps(steps),
        );
        s.noise = m.noise;
        s.chain = m.chain;
        s.seed = 5;
        run_synchronous(&s, steps).unwrap().devices[0].x.clone()
    }

    #[test]
    fn calibration_closes_the_loop() {
        let mut m = medium(1.0);
        m.chain = SensingChain {
            gain: 0.13,
            negative_gain: Some(0.03),
            ..SensingChain::default()
        };
        let mut dev = DeviceSpec::oscillator(3.1, 0.1);
        calibrate_k1(&mut dev, &m, 200).unwrap();
        let open = solo_run(DeviceSpec { gains: CouplingGains { k2: 0.0, ..dev.gains }, ..dev }, &m, 300);
        let closed = solo_run(DeviceSpec { gains: CouplingGains { k2: 1.0, ..dev.gains }, ..dev }, &m, 300);
        for (a, b) in open.iter().zip(&closed) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }

        // with noise, what is left of the feedback after cancellation is the
        // noise alone, at every step
        let mut noisy = medium(0.4);
        noisy.noise = NoiseModel::aquarium(21);
        let mut dev = DeviceSpec::oscillator(3.1, 0.1);
        calibrate_k1(&mut dev, &noisy, 1000).unwrap();
        dev.gains.k2 = 1.0;
        let x = solo_run(dev, &noisy, 300);
        let amp = noisy.noise.peak() / dev.volts_per_unit();
        let p = dev.map;
        for w in x.windows(2) {
            let free = crate::core_maps::logistic_step(w[0], p).unwrap();
            assert!((w[1] - free).abs() <= amp, "residual {} > {amp}", (w[1] - free).abs());
        }
    }

    #[test]
    fn noisy_estimates_are_tight() {
        let noise = NoiseModel::aquarium(0);
        let mut estimates = Vec::new();
        for seed in 0..40 {
            let mut m = medium(0.1);
            m.noise = NoiseModel { seed, ..noise };
            let mut dev = DeviceSpec::oscillator(3.1, 0.1);
            estimates.push(calibrate_k1(&mut dev, &m, 1000).unwrap().0);
        }
        let mean = estimates.iter().sum::<f64>() / 40.0;
        let sd = (estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / 39.0).sqrt();
        // noise amplitude expressed as a gain error at the smallest emission
        let dev = DeviceSpec::default();
        let amp = noise.peak() / (dev.volts_per_unit() * 0.087);
        assert!(sd < amp / 1000f64.sqrt(), "sd {sd}, bound {}", amp / 1000f64.sqrt());
    }
}
