//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Exits with status 0 after printing the summary; set
//! `ACCEPTANCE_STRICT=1` to exit nonzero when any criterion fails.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, PI};
use std::time::{Duration, Instant};

use photon_comb::acquisition::{
    histogram, ks_critical, ks_statistic, sample_events, AcquisitionConfig, AcquisitionMode,
};
use photon_comb::analysis::{bin_layout, bin_populations, pulse_times};
use photon_comb::averaging::{
    averaged_exact, averaged_exact_table, averaged_extrema, averaged_trace, resonant_baseline, CountTrace, ModelTag,
};
use photon_comb::fitting::{fit, scan_optimal_p, FitData, FitMode, FitParams, FreeMask, ModelEvaluator};
use photon_comb::model::{default_config, PhysicsConfig, Preset, TimeGrid};
use photon_comb::numerics::{QuadratureSpec, SeriesTruncation};
use photon_comb::transmission::{
    exact_amplitude, improved_amplitude, probability_approx, satellite_kernel_quadrature, satellite_kernel_trace,
    single_line_output,
};

type Outcome = Result<(bool, String), String>;

struct Check {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn fig1() -> [(Preset, PhysicsConfig); 3] {
    [Preset::Fig1a, Preset::Fig1b, Preset::Fig1c].map(|p| (p, default_config(p)))
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn extrema_table() -> Outcome {
    let want = [(1, 1.8, 2.089, 0.397), (2, 3.1, 1.877, 0.463), (3, 4.2, 1.768, 0.504)];
    let mut ok = true;
    let mut parts = Vec::new();
    for (m, p, hi, lo) in want {
        let e = averaged_extrema(m, p, 5.2);
        ok &= (e.max - hi).abs() <= 0.002 && (e.min - lo).abs() <= 0.002;
        parts.push(format!("m={m}: ({:.4}, {:.4})", e.max, e.min));
    }
    let res = resonant_baseline(5.2);
    ok &= (res - 0.264).abs() <= 0.002;
    parts.push(format!("res {res:.4}"));
    Ok((ok, parts.join(", ")))
}

fn baseline_consistency() -> Outcome {
    let cfg = default_config(Preset::Fig1a).with_p(0.0).with_sideband(0);
    let tv = cfg.period_ns();
    let grid = TimeGrid::new(0.0, tv * 199.0 / 200.0, tv / 200.0).map_err(err)?;
    let trace = averaged_exact(&grid, &cfg, &QuadratureSpec::default()).map_err(err)?;
    let dev = trace.values.iter().map(|v| (v - 0.264).abs()).fold(0.0, f64::max);
    let closed = resonant_baseline(5.2);
    let dev_closed = trace.values.iter().map(|v| (v - closed).abs()).fold(0.0, f64::max);
    Ok((
        dev <= 1e-4,
        format!(
            "{} points, max |N - 0.264| = {dev:.3e}, max |N - e^(-T/2) I0(T/2)| = {dev_closed:.3e}",
            trace.values.len()
        ),
    ))
}

fn exact_reduction() -> Outcome {
    let cfg = default_config(Preset::Fig1a).with_p(0.0).with_sideband(0);
    let grid = TimeGrid::new(0.0, 600.0, 0.5).map_err(err)?;
    let wave = exact_amplitude(&grid, &cfg, &QuadratureSpec::default()).map_err(err)?;
    let worst = grid
        .times()
        .iter()
        .zip(&wave.samples)
        .map(|(&t, a)| (a - single_line_output(t, cfg.b_mhz(), &cfg.source)).norm())
        .fold(0.0, f64::max);
    Ok((worst <= 1e-8, format!("L_inf = {worst:.3e} over {} points", grid.len())))
}

fn satellite_kernels() -> Outcome {
    let mut cfg = default_config(Preset::Fig1a);
    cfg.apply("b_mhz", 1.47).map_err(err)?;
    let grid = TimeGrid::new(0.0, 600.0, 2.0).map_err(err)?;
    let quad = QuadratureSpec::new(1e-13, 1e-12, 50).map_err(err)?;
    let mut closed_worst = 0.0f64;
    for n in [1, 2, 3, -1, -2, -3] {
        let trace = satellite_kernel_trace(n, &grid, &cfg, &SeriesTruncation::default()).map_err(err)?;
        for (t, v) in grid.times().iter().zip(&trace.values) {
            let q = satellite_kernel_quadrature(n, *t, &cfg, &quad).map_err(err)?;
            closed_worst = closed_worst.max((v - q).norm());
        }
    }
    let full = satellite_kernel_trace(1, &grid, &cfg, &SeriesTruncation::default()).map_err(err)?;
    let first = satellite_kernel_trace(1, &grid, &cfg, &SeriesTruncation::first_term()).map_err(err)?;
    let first_worst = full
        .values
        .iter()
        .zip(&first.values)
        .map(|(a, b)| (a.re - b.re).abs().max((a.im - b.im).abs()))
        .fold(0.0, f64::max);
    Ok((
        closed_worst <= 1e-8 && first_worst <= 0.005,
        format!("closed form vs quadrature {closed_worst:.3e} (<= 1e-8); k=1 truncation {first_worst:.4} (<= 0.005)"),
    ))
}

fn misfit_ordering() -> Outcome {
    let quad = QuadratureSpec::default();
    let grid = TimeGrid::new(0.0, 600.0, 0.5).map_err(err)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for (preset, cfg) in fig1() {
        let exact = exact_amplitude(&grid, &cfg, &quad).map_err(err)?.probability();
        let improved = improved_amplitude(&grid, &cfg, &quad).map_err(err)?.probability();
        let approx = grid
            .times()
            .iter()
            .map(|&t| probability_approx(t, &cfg))
            .collect::<photon_comb::Result<Vec<f64>>>()
            .map_err(err)?;
        let linf = |v: &[f64]| v.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let (mi, ma) = (linf(&improved), linf(&approx));
        let half = (cfg.period_ns() / 2.0 / grid.step_ns).round() as usize;
        let mut rel = 0.0f64;
        for i in 0..exact.len() {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(exact.len() - 1);
            let peak = exact[lo..=hi].iter().cloned().fold(0.0, f64::max);
            if peak > 0.0 {
                rel = rel.max((improved[i] - exact[i]).abs() / peak);
            }
        }
        ok &= mi < ma && rel < 0.02;
        parts.push(format!("{}: improved {mi:.4} vs approx {ma:.4}, worst/local peak {:.1}%", preset.name(), rel * 100.0));
    }
    Ok((ok, parts.join("; ")))
}

fn pulse_multiplicity() -> Outcome {
    let quad = QuadratureSpec::default();
    let mut ok = true;
    let mut parts = Vec::new();
    for (preset, cfg) in fig1() {
        let m = cfg.vibration.m as usize;
        let roots_ok = match pulse_times(&cfg, 6) {
            Ok(t) => t.len() == 6 * m,
            Err(_) => false,
        };
        let tv = cfg.period_ns();
        let settle = 1e3 / cfg.rates().b;
        let first = (settle / tv).ceil() as usize;
        let last = (600.0 / tv).floor() as usize;
        let grid = TimeGrid::new(0.0, 600.0, 0.25).map_err(err)?;
        let env = exact_amplitude(&grid, &cfg, &quad).map_err(err)?.envelope_normalized(&cfg.source);
        let times = grid.times();
        let mut counts = Vec::new();
        for k in first..last {
            let (lo, hi) = (k as f64 * tv, (k + 1) as f64 * tv);
            let c = (1..env.len() - 1)
                .filter(|&i| times[i] >= lo && times[i] < hi && env[i] > env[i - 1] && env[i] >= env[i + 1])
                .count();
            counts.push(c);
        }
        let maxima_ok = !counts.is_empty() && counts.iter().all(|&c| c == m);
        ok &= roots_ok && maxima_ok;
        parts.push(format!(
            "{}: roots {} per period, maxima per period {:?} (want {m})",
            preset.name(),
            if roots_ok { "ok" } else { "wrong" },
            counts
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn optimal_p() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (m, want) in [(1, 1.8412), (2, 3.0542), (3, 4.2012)] {
        let p = scan_optimal_p(m, (0.0, 8.0), 0.05).map_err(err)?;
        ok &= (p - want).abs() <= 1e-3;
        parts.push(format!("m={m}: {p:.5}"));
    }
    Ok((ok, parts.join(", ")))
}

fn time_bins() -> Outcome {
    let quad = QuadratureSpec::default();
    let cfg = default_config(Preset::Fig6);
    let grid = TimeGrid::new(0.0, 200.0, 0.25).map_err(err)?;
    let layout = bin_layout(2, cfg.vibration.omega_mhz, 0.0).map_err(err)?;
    let pops = |model: ModelTag, phi: f64| {
        averaged_trace(&grid, &cfg.with_phi(phi), model, &quad).and_then(|t| bin_populations(&t, &layout))
    };
    let (zero, pi, half) = (
        pops(ModelTag::Approx, 0.0).map_err(err)?,
        pops(ModelTag::Approx, PI).map_err(err)?,
        pops(ModelTag::Approx, FRAC_PI_2).map_err(err)?,
    );
    let g = |p: &photon_comb::analysis::BinPopulations, c| p.get(c).unwrap_or(f64::NAN);
    let swap = (g(&zero, 'A') - g(&pi, 'B')).abs();
    let even = (g(&half, 'A') - g(&half, 'B')).abs();
    let exact_half = pops(ModelTag::Exact, FRAC_PI_2).map_err(err)?;
    Ok((
        swap <= 1e-12 && even <= 1e-6 && g(&zero, 'A') > g(&zero, 'B'),
        format!(
            "averaged-approx trace: P_A(0) = {:.6}, |P_A(0) - P_B(pi)| = {swap:.2e}, |P_A - P_B|(pi/2) = {even:.2e}; \
             t0-averaged exact at pi/2: ({:.4}, {:.4})",
            g(&zero, 'A'),
            g(&exact_half, 'A'),
            g(&exact_half, 'B')
        ),
    ))
}

fn monte_carlo() -> Outcome {
    let quad = QuadratureSpec::default();
    let cfg = default_config(Preset::Fig1a);
    let acq = AcquisitionConfig::new(AcquisitionMode::FixedStart, 0.0, 600.0, 1_000_000, 42);
    let events = sample_events(&cfg, &acq).map_err(err)?;
    let hist = histogram(&events, &acq);
    let table = averaged_exact_table(&cfg, &quad).map_err(err)?;
    let grid = TimeGrid::new(0.0, 600.0, 0.1).map_err(err)?;
    let trace = CountTrace {
        grid,
        values: grid.times().iter().map(|&t| table.at(t)).collect(),
        model: ModelTag::Exact,
    };
    let gof = photon_comb::acquisition::compare_to_theory(&hist, &trace).map_err(err)?;
    let reduced = gof.reduced();

    let free = cfg.with_thickness(0.0);
    let acq = AcquisitionConfig::new(AcquisitionMode::Coincidence, 0.0, 800.0, 1_000_000, 42);
    let delays = sample_events(&free, &acq).map_err(err)?;
    let rate = 2.0 * free.rates().gamma_s * 1e-3;
    let d = ks_statistic(&delays, |t| 1.0 - (-rate * t).exp());
    let scaled = d * (delays.len() as f64).sqrt();
    let crit = ks_critical(0.01);
    Ok((
        (0.8..=1.3).contains(&reduced) && scaled < crit,
        format!(
            "fixed-start chi2/dof = {reduced:.3} (dof {}); coincidence KS D sqrt(N) = {scaled:.3} < {crit:.3}",
            gof.dof
        ),
    ))
}

fn fit_round_trip() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;

    for (mode, cfg) in [
        (FitMode::Coincidence, default_config(Preset::Fig1a).with_phi(0.7)),
        (FitMode::FixedStart, default_config(Preset::Fig1b).with_phi(0.3)),
    ] {
        let truth = FitParams::from_config(&cfg);
        let lo: Vec<f64> = (0..75).map(|i| 8.0 * i as f64).collect();
        let hi: Vec<f64> = lo.iter().map(|t| t + 8.0).collect();
        let ev = ModelEvaluator::new(&cfg, mode, &lo, &hi, cfg.vibration.p).map_err(err)?;
        let values = ev.values(&truth).map_err(err)?;
        let sigma = values.iter().map(|v| 1e-3 * v.max(1e-2)).collect();
        let data = FitData { lo, hi, values, sigma };
        let mut init = truth;
        init.p *= 0.85;
        init.phi = 0.0;
        init.scale = 0.9;
        let r = fit(&data, &init, &FreeMask::shape(), &cfg, mode).map_err(err)?;
        let (ep, ephi) = (
            (r.params.p - truth.p).abs() / truth.p,
            (r.params.phi - truth.phi).abs() / truth.phi.abs(),
        );
        ok &= ep <= 1e-4 && ephi <= 1e-4;
        parts.push(format!("noiseless {}: rel err p {ep:.1e}, phi {ephi:.1e}", mode.name()));
    }

    let cfg = default_config(Preset::Fig2b).with_phi(0.5);
    let mut acq = AcquisitionConfig::new(AcquisitionMode::Coincidence, 0.0, 800.0, 1_000_000, 42);
    acq.dphi = FRAC_PI_3;
    let events = sample_events(&cfg, &acq).map_err(err)?;
    let data = FitData::from_histogram(&histogram(&events, &acq), &cfg).map_err(err)?;
    let mut init = FitParams::from_config(&cfg);
    init.p = 2.8;
    init.phi = 0.0;
    init.dphi = 0.6;
    let free = FreeMask {
        dphi: true,
        ..FreeMask::shape()
    };
    let r = fit(&data, &init, &free, &cfg, FitMode::Coincidence).map_err(err)?;
    let ep = (r.params.p - cfg.vibration.p).abs() / cfg.vibration.p;
    let ed = (r.params.dphi - FRAC_PI_3).abs() / FRAC_PI_3;
    ok &= ep <= 0.02 && ed <= 0.10;
    parts.push(format!(
        "1e6 events: p = {:.4} ({:.2}%), dphi = {:.4} ({:.1}%)",
        r.params.p,
        ep * 100.0,
        r.params.dphi,
        ed * 100.0
    ));
    Ok((ok, parts.join("; ")))
}

fn main() {
    let checks = [
        Check { id: 1, name: "averaged extrema table", budget: Duration::from_secs(1), run: extrema_table },
        Check { id: 2, name: "baseline consistency", budget: Duration::from_secs(30), run: baseline_consistency },
        Check { id: 3, name: "exact-reduction oracle", budget: Duration::from_secs(5), run: exact_reduction },
        Check { id: 4, name: "satellite kernel", budget: Duration::from_secs(5), run: satellite_kernels },
        Check { id: 5, name: "misfit ordering", budget: Duration::from_secs(30), run: misfit_ordering },
        Check { id: 6, name: "pulse multiplicity", budget: Duration::from_secs(10), run: pulse_multiplicity },
        Check { id: 7, name: "optimal-p scan", budget: Duration::from_secs(1), run: optimal_p },
        Check { id: 8, name: "time-bin control", budget: Duration::from_secs(10), run: time_bins },
        Check { id: 9, name: "Monte Carlo consistency", budget: Duration::from_secs(60), run: monte_carlo },
        Check { id: 10, name: "fit round-trip", budget: Duration::from_secs(60), run: fit_round_trip },
    ];
    let mut failed = Vec::new();
    for c in &checks {
        let start = Instant::now();
        let outcome = (c.run)();
        let took = start.elapsed();
        let (pass, detail) = match outcome {
            Ok((pass, detail)) => (pass, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let in_time = took <= c.budget;
        let pass = pass && in_time;
        println!(
            "{} [{:>2}] {}: {} ({:.2} s{})",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            detail,
            took.as_secs_f64(),
            if in_time { String::new() } else { format!(", over {} s budget", c.budget.as_secs()) }
        );
        if !pass {
            failed.push(c.id);
        }
    }
    println!(
        "acceptance: {} passed, {} failed{}",
        checks.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" {failed:?}") }
    );
    if !failed.is_empty() && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
