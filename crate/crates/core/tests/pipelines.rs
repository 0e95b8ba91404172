use std::f64::consts::{FRAC_PI_2, PI};

use photon_comb::acquisition::{histogram, jitter_average, sample_events, AcquisitionConfig, AcquisitionMode};
use photon_comb::analysis::{bin_layout, bin_populations};
use photon_comb::averaging::{averaged_exact, averaged_trace, ModelTag};
use photon_comb::fitting::{fit, FitData, FitMode, FitParams, FreeMask};
use photon_comb::model::{default_config, Preset, TimeGrid};
use photon_comb::numerics::QuadratureSpec;
use photon_comb::transmission::{exact_amplitude_comb, CombPropagator};

fn fwhm(times: &[f64], values: &[f64], around: usize) -> f64 {
    let peak = values[around];
    let half = peak / 2.0;
    let mut lo = around;
    while lo > 0 && values[lo] > half {
        lo -= 1;
    }
    let mut hi = around;
    while hi + 1 < values.len() && values[hi] > half {
        hi += 1;
    }
    times[hi] - times[lo]
}

#[test]
fn output_energy_never_exceeds_input() {
    for preset in [Preset::Fig1a, Preset::Fig1b, Preset::Fig1c, Preset::Fig6, Preset::Fig8] {
        let cfg = default_config(preset);
        let grid = TimeGrid::new(0.0, 4000.0, 0.25).unwrap();
        let wave = exact_amplitude_comb(&grid, &cfg).unwrap();
        let two_gamma = 2.0 * cfg.rates().gamma_s * 1e-3;
        let prob = wave.probability();
        let energy: f64 = prob.windows(2).map(|w| 0.5 * (w[0] + w[1]) * grid.step_ns).sum::<f64>() * two_gamma;
        assert!(energy <= 1.0, "{preset:?}: {energy}");
        assert!(energy > 0.0);
    }
}

#[test]
fn output_intensity_can_exceed_the_incident_peak() {
    let cfg = default_config(Preset::Fig1a);
    let grid = TimeGrid::new(0.0, 200.0, 0.25).unwrap();
    let peak = exact_amplitude_comb(&grid, &cfg)
        .unwrap()
        .probability()
        .into_iter()
        .fold(0.0, f64::max);
    assert!(peak > 1.0 && peak < 1.1, "{peak}");
}

#[test]
fn jitter_broadens_pulses() {
    let cfg = default_config(Preset::Fig2a);
    let grid = TimeGrid::new(0.0, 400.0, 0.25).unwrap();
    let times = grid.times();
    let prop = CombPropagator::new(&cfg, &times, cfg.vibration.p).unwrap();
    let sharp = prop.envelope_normalized(cfg.vibration.p, cfg.vibration.phi);
    let nodes = photon_comb::acquisition::jitter_nodes(cfg.vibration.phi, cfg.phase_jitter, 33);
    let mut smooth = vec![0.0; times.len()];
    for (phi, w) in nodes {
        for (s, v) in smooth.iter_mut().zip(prop.envelope_normalized(cfg.vibration.p, phi)) {
            *s += w * v;
        }
    }
    let start = times.iter().position(|&t| t >= 150.0).unwrap();
    let end = start + (cfg.period_ns() / grid.step_ns) as usize;
    let argmax = |v: &[f64]| (start..end).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
    let w_sharp = fwhm(&times, &sharp, argmax(&sharp));
    let w_smooth = fwhm(&times, &smooth, argmax(&smooth));
    assert!(w_smooth > w_sharp, "{w_smooth} vs {w_sharp}");

    let direct = jitter_average(
        |t, phi| {
            let i = (t / grid.step_ns) as usize;
            prop.envelope_normalized(cfg.vibration.p, phi)[i]
        },
        cfg.vibration.phi,
        cfg.phase_jitter,
        33,
    )(times[start]);
    assert!((direct - smooth[start]).abs() < 1e-12);
}

#[test]
fn qubit_bins_follow_modulation_phase() {
    let quad = QuadratureSpec::default();
    let grid = TimeGrid::new(0.0, 200.0, 0.25).unwrap();
    let layout = bin_layout(2, 10.0, 0.0).unwrap();
    let cfg = default_config(Preset::Fig6);
    let pop = |phi: f64| bin_populations(&averaged_exact(&grid, &cfg.with_phi(phi), &quad).unwrap(), &layout).unwrap();
    let (zero, half) = (pop(0.0), pop(PI));
    assert!(zero.get('A').unwrap() > zero.get('B').unwrap());
    assert!((zero.get('A').unwrap() - half.get('B').unwrap()).abs() < 1e-9);
    assert!((zero.get('B').unwrap() - half.get('A').unwrap()).abs() < 1e-9);
}

#[test]
fn ququart_occupancy_moves_with_phase() {
    let quad = QuadratureSpec::default();
    let grid = TimeGrid::new(0.0, 200.0, 0.25).unwrap();
    let layout = bin_layout(4, 10.0, 0.0).unwrap();
    let cfg = default_config(Preset::Fig8).with_phi(-FRAC_PI_2);
    for model in [ModelTag::Approx, ModelTag::Exact] {
        let trace = averaged_trace(&grid, &cfg, model, &quad).unwrap();
        let pops = bin_populations(&trace, &layout).unwrap();
        let g = |c| pops.get(c).unwrap();
        let (inner, outer) = (g('B').min(g('C')), g('A').max(g('D')));
        assert!(inner > outer, "{model:?}: {:?}", pops.values);
    }
    let approx = averaged_trace(&grid, &cfg.with_phi(0.0), ModelTag::Approx, &quad).unwrap();
    let pops = bin_populations(&approx, &layout).unwrap();
    assert!(pops.get('A').unwrap().min(pops.get('B').unwrap()) > pops.get('C').unwrap().max(pops.get('D').unwrap()));
}

#[test]
fn fixed_start_round_trip_recovers_shape() {
    let cfg = default_config(Preset::Fig1b).with_phi(0.3);
    let acq = AcquisitionConfig::new(AcquisitionMode::FixedStart, 0.0, 600.0, 1_000_000, 2024);
    let events = sample_events(&cfg, &acq).unwrap();
    let data = FitData::from_histogram(&histogram(&events, &acq), &cfg).unwrap();
    let mut init = FitParams::from_config(&cfg);
    init.p = 2.7;
    init.phi = 0.0;
    let r = fit(&data, &init, &FreeMask::shape(), &cfg, FitMode::FixedStart).unwrap();
    assert!((r.params.p - 3.1).abs() < 0.02 * 3.1, "{:?}", r.params);
    assert!((r.params.phi - 0.3).abs() < 0.05, "{:?}", r.params);
    assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
    let reduced = r.chi2 / r.dof as f64;
    assert!(reduced > 0.5 && reduced < 2.0, "{reduced}");
}
