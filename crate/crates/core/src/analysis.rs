//! Phase diagnostics, pulse and dark-window timing, and time bins.

use std::f64::consts::{FRAC_PI_2, TAU};

use serde::{Deserialize, Serialize};

use crate::averaging::{CountTrace, ModelTag};
use crate::model::{angular, ns_to_us, PhysicsConfig, TimeGrid};
use crate::numerics::find_roots_sampled;
use crate::transmission::psi;
use crate::{Error, Result};

/// Bracket scan density for phase roots.
pub const SAMPLES_PER_PERIOD: usize = 400;

/// Relative band around the nominal slopes used by [`classify_slopes`].
pub const SLOPE_BAND: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Slope {
    PulseForming,
    Stopped,
    Transitional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTrace {
    pub grid: TimeGrid,
    pub psi: Vec<f64>,
    pub slopes: Vec<Slope>,
}

/// `psi_m(t) = m(Omega t + phi) - p sin(Omega t + phi)`.
pub fn phase_difference(t_ns: f64, cfg: &PhysicsConfig) -> f64 {
    psi(t_ns, cfg)
}

/// `d psi_m / dt` in rad/us.
pub fn phase_rate(t_ns: f64, cfg: &PhysicsConfig) -> f64 {
    let omega = angular(cfg.vibration.omega_mhz);
    let theta = omega * ns_to_us(t_ns) + cfg.vibration.phi;
    omega * (cfg.vibration.m as f64 - cfg.vibration.p * theta.cos())
}

/// `psi_m` on the grid, every sample still unclassified.
pub fn phase_trace(grid: &TimeGrid, cfg: &PhysicsConfig) -> PhaseTrace {
    let psi = grid.times().iter().map(|&t| phase_difference(t, cfg)).collect::<Vec<_>>();
    PhaseTrace {
        grid: *grid,
        slopes: vec![Slope::Transitional; psi.len()],
        psi,
    }
}

/// Label samples whose slope is within [`SLOPE_BAND`] of `(m + p) Omega`
/// as pulse forming and within the band of `(m - p) Omega` as stopped.
pub fn classify_slopes(trace: PhaseTrace, cfg: &PhysicsConfig) -> PhaseTrace {
    let omega = angular(cfg.vibration.omega_mhz);
    let m = cfg.vibration.m as f64;
    let p = cfg.vibration.p;
    let forming = (m + p) * omega;
    let stopped = (m - p) * omega;
    let slopes = trace
        .grid
        .times()
        .iter()
        .map(|&t| {
            let s = phase_rate(t, cfg);
            if (s - forming).abs() <= SLOPE_BAND * forming.abs() {
                Slope::PulseForming
            } else if (s - stopped).abs() <= SLOPE_BAND * stopped.abs() {
                Slope::Stopped
            } else {
                Slope::Transitional
            }
        })
        .collect();
    PhaseTrace { slopes, ..trace }
}

fn phase_roots<G: Fn(f64) -> f64>(g: G, cfg: &PhysicsConfig, periods: usize) -> Result<Vec<f64>> {
    let tv = cfg.period_ns();
    let start = cfg.grid.start_ns;
    let end = start + periods as f64 * tv;
    let pad = tv / SAMPLES_PER_PERIOD as f64;
    let samples = (periods + 1) * SAMPLES_PER_PERIOD;
    let roots = find_roots_sampled(g, start - pad, end + pad, samples)?;
    let eps = 1e-9 * tv;
    let mut out: Vec<f64> = Vec::with_capacity(roots.len());
    for r in roots {
        if r >= start - eps && r < end - eps && out.last().is_none_or(|&last| r - last > eps) {
            out.push(r.max(start));
        }
    }
    Ok(out)
}

/// Instants with `psi_m = (2n + 1) pi` over `periods` vibration periods
/// from the grid start; each period must hold exactly `m` of them.
pub fn pulse_times(cfg: &PhysicsConfig, periods: usize) -> Result<Vec<f64>> {
    let times = phase_roots(|t| (0.5 * psi(t, cfg)).cos(), cfg, periods)?;
    let m = cfg.vibration.m.unsigned_abs() as usize;
    let tv = cfg.period_ns();
    for k in 0..periods {
        let lo = cfg.grid.start_ns + k as f64 * tv;
        let count = times.iter().filter(|&&t| t >= lo - 1e-9 * tv && t < lo + tv - 1e-9 * tv).count();
        if count != m {
            return Err(Error::Numerics(crate::numerics::NumericsError::RootCount {
                expected: m,
                found: count,
                roots: times,
            }));
        }
    }
    Ok(times)
}

/// Instants with `psi_m = 2 n pi` over `periods` vibration periods.
///
/// Where `psi_m` reverses inside a dark window it crosses the same level
/// more than once, so the count per period is not fixed.
pub fn dark_window_times(cfg: &PhysicsConfig, periods: usize) -> Result<Vec<f64>> {
    if cfg.vibration.m == 0 && cfg.vibration.p == 0.0 {
        return Err(Error::Degenerate("psi vanishes identically when m = 0 and p = 0".into()));
    }
    phase_roots(|t| (0.5 * psi(t, cfg)).sin(), cfg, periods)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinLayout {
    pub dimension: usize,
    pub period_ns: f64,
    /// Start of bin A within the first period.
    pub origin_ns: f64,
    pub phi_lo: f64,
    pub labels: Vec<char>,
}

impl BinLayout {
    pub fn width_ns(&self) -> f64 {
        self.period_ns / self.dimension as f64
    }

    /// `[start, end)` of each bin in the period starting at `origin_ns`.
    pub fn bounds(&self) -> Vec<(char, f64, f64)> {
        let w = self.width_ns();
        self.labels
            .iter()
            .enumerate()
            .map(|(i, &l)| (l, self.origin_ns + i as f64 * w, self.origin_ns + (i + 1) as f64 * w))
            .collect()
    }

    /// Bin index of `t_ns`; edges belong to the later bin.
    pub fn index_of(&self, t_ns: f64) -> usize {
        let x = (t_ns - self.origin_ns).rem_euclid(self.period_ns);
        ((x / self.width_ns()).floor() as usize).min(self.dimension - 1)
    }
}

/// Bins synchronized to a local oscillator `sin(Omega t + phi_lo)`.
///
/// Bin A starts where the oscillator phase is `pi/2`, so qubit bin A is
/// centered on the pulses of the first sideband (`Omega t = pi`) and B on
/// the dark windows; ququad bins are the four quarters from the same origin.
pub fn bin_layout(dimension: usize, omega_mhz: f64, phi_lo: f64) -> Result<BinLayout> {
    let labels = match dimension {
        2 => vec!['A', 'B'],
        4 => vec!['A', 'B', 'C', 'D'],
        d => return Err(Error::Invalid(format!("bin dimension must be 2 or 4, got {d}"))),
    };
    if !(omega_mhz > 0.0) {
        return Err(Error::Invalid(format!("omega must be positive, got {omega_mhz}")));
    }
    let period_ns = 1e3 / omega_mhz;
    let omega = angular(omega_mhz) * 1e-3;
    let origin_ns = ((FRAC_PI_2 - phi_lo) / omega).rem_euclid(period_ns);
    Ok(BinLayout {
        dimension,
        period_ns,
        origin_ns,
        phi_lo,
        labels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PopulationMode {
    /// One period of a steady periodic trace (the last full period covered).
    Periodic,
    /// The whole trace, folded into bins by phase.
    Packet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinPopulations {
    pub labels: Vec<char>,
    pub values: Vec<f64>,
    pub model: ModelTag,
}

impl BinPopulations {
    pub fn get(&self, label: char) -> Option<f64> {
        self.labels.iter().position(|&l| l == label).map(|i| self.values[i])
    }
}

/// Bin populations of a trace in periodic mode.
pub fn bin_populations(trace: &CountTrace, layout: &BinLayout) -> Result<BinPopulations> {
    bin_populations_with(trace, layout, PopulationMode::Periodic)
}

/// Integrate the piecewise-linear trace over each bin and normalize.
pub fn bin_populations_with(trace: &CountTrace, layout: &BinLayout, mode: PopulationMode) -> Result<BinPopulations> {
    let times = trace.times();
    let n = times.len();
    if n < 2 {
        return Err(Error::Invalid("trace needs at least two samples".into()));
    }
    let (lo, hi) = match mode {
        PopulationMode::Periodic => {
            let hi = times[n - 1];
            let lo = hi - layout.period_ns;
            if lo < times[0] - 1e-9 * layout.period_ns {
                return Err(Error::Invalid("trace shorter than one vibration period".into()));
            }
            (lo.max(times[0]), hi)
        }
        PopulationMode::Packet => (times[0], times[n - 1]),
    };
    let value_at = |t: f64| -> f64 {
        let x = ((t - times[0]) / trace.grid.step_ns).clamp(0.0, (n - 1) as f64);
        let i = (x.floor() as usize).min(n - 2);
        let f = x - i as f64;
        trace.values[i] * (1.0 - f) + trace.values[i + 1] * f
    };
    // Break points: grid samples and bin edges inside [lo, hi].
    let mut cuts: Vec<f64> = times.iter().copied().filter(|&t| t > lo && t < hi).collect();
    let w = layout.width_ns();
    let first = ((lo - layout.origin_ns) / w).floor() as i64;
    let last = ((hi - layout.origin_ns) / w).ceil() as i64;
    for k in first..=last {
        let e = layout.origin_ns + k as f64 * w;
        if e > lo && e < hi {
            cuts.push(e);
        }
    }
    cuts.push(lo);
    cuts.push(hi);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-12 * layout.period_ns);
    let mut mass = vec![0.0; layout.dimension];
    for seg in cuts.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let bin = layout.index_of(0.5 * (a + b));
        mass[bin] += 0.5 * (b - a) * (value_at(a) + value_at(b));
    }
    let total: f64 = mass.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Invalid("trace has no positive mass".into()));
    }
    Ok(BinPopulations {
        labels: layout.labels.clone(),
        values: mass.iter().map(|v| v / total).collect(),
        model: trace.model,
    })
}

/// Detector chosen by the router cascade for an event at `t_ns`.
///
/// The first router splits each period into halves; for four bins a second
/// stage (R2 after the first half, R3 after the second) splits each half into
/// quarters. Gate edges go to the later bin.
pub fn router_assign(event_time_ns: f64, layout: &BinLayout) -> char {
    let x = (event_time_ns - layout.origin_ns).rem_euclid(layout.period_ns);
    let half = layout.period_ns / 2.0;
    let first = usize::from(x >= half);
    let index = if layout.dimension == 4 {
        let within = x - first as f64 * half;
        2 * first + usize::from(within >= half / 2.0)
    } else {
        first
    };
    layout.labels[index]
}

/// Phase of the output field at pulse `pulse_index` of a bunch (counted in
/// time order from 0) relative to the unmodulated incident field.
///
/// At a pulse the scattered field adds in phase to the comb, so the pulse
/// carries the comb phase `p sin theta_p`.
pub fn per_pulse_phase(cfg: &PhysicsConfig, pulse_index: usize) -> Result<f64> {
    let m = cfg.vibration.m;
    if !(m == 1 || m == 2) {
        return Err(Error::Invalid(format!("per-pulse phase is defined for m = 1 or 2, got {m}")));
    }
    if pulse_index >= m as usize {
        return Err(Error::Invalid(format!("bunch of {m} pulses has no pulse {pulse_index}")));
    }
    let mut c = *cfg;
    c.grid.start_ns = 0.0;
    let omega = angular(cfg.vibration.omega_mhz) * 1e-3;
    let mut angles: Vec<f64> = pulse_times(&c, 1)?
        .iter()
        .map(|&t| (omega * t + cfg.vibration.phi).rem_euclid(TAU))
        .collect();
    angles.sort_by(f64::total_cmp);
    let theta = angles[pulse_index];
    let phase = cfg.vibration.p * theta.sin();
    Ok(if phase.abs() < 1e-12 { 0.0 } else { phase })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::averaging::averaged_approx;
    use crate::model::{default_config, Preset};
    use std::f64::consts::PI;

    #[test]
    fn phase_values() {
        let cfg = default_config(Preset::Fig1a);
        assert!((phase_difference(50.0, &cfg) - PI).abs() < 1e-12);
        assert!((phase_difference(100.0, &cfg) - TAU).abs() < 1e-12);
        let b = default_config(Preset::Fig1b);
        let omega = angular(10.0) * 1e-3;
        let r = crate::numerics::find_roots(|x| phase_difference(x / omega, &b) - PI, 0.0, PI, 1).unwrap();
        assert!((r[0] - 2.50).abs() < 0.01);
    }

    #[test]
    fn slopes() {
        let cfg = default_config(Preset::Fig1a);
        let omega = angular(10.0);
        assert!((phase_rate(50.0, &cfg) - 2.8 * omega).abs() < 1e-9);
        assert!((phase_rate(0.0, &cfg) + 0.8 * omega).abs() < 1e-9);
        let grid = TimeGrid::new(0.0, 100.0, 1.0).unwrap();
        let tr = classify_slopes(phase_trace(&grid, &cfg), &cfg);
        assert_eq!(tr.slopes[50], Slope::PulseForming);
        assert_eq!(tr.slopes[0], Slope::Stopped);
        assert_eq!(tr.slopes[25], Slope::Transitional);
    }

    #[test]
    fn pulse_counts() {
        for (preset, m) in [(Preset::Fig1a, 1), (Preset::Fig1b, 2), (Preset::Fig1c, 3)] {
            let cfg = default_config(preset);
            let t = pulse_times(&cfg, 5).unwrap();
            assert_eq!(t.len(), 5 * m);
        }
        let a = pulse_times(&default_config(Preset::Fig1a), 3).unwrap();
        for (k, t) in a.iter().enumerate() {
            assert!((t - (50.0 + 100.0 * k as f64)).abs() < 1e-9);
        }
        let b = pulse_times(&default_config(Preset::Fig1b), 2).unwrap();
        // symmetric about Omega t = pi, intra-bunch gap shorter than inter-bunch
        assert!((b[0] + b[1] - 100.0).abs() < 1e-9);
        assert!(b[1] - b[0] < b[2] - b[1]);
    }

    #[test]
    fn dark_windows() {
        let a = dark_window_times(&default_config(Preset::Fig1a), 2).unwrap();
        for k in 0..2 {
            assert!(a.iter().any(|t| (t - 100.0 * k as f64).abs() < 1e-9));
        }
        let cfg = default_config(Preset::Fig1a).with_p(0.0).with_sideband(0);
        assert!(matches!(dark_window_times(&cfg, 1), Err(Error::Degenerate(_))));
    }

    #[test]
    fn layouts() {
        let q = bin_layout(2, 10.0, 0.0).unwrap();
        assert!((q.origin_ns - 25.0).abs() < 1e-12);
        let (label, lo, hi) = q.bounds()[0];
        assert_eq!(label, 'A');
        assert!((lo - 25.0).abs() < 1e-12 && (hi - 75.0).abs() < 1e-12);
        let d = bin_layout(4, 10.0, 0.0).unwrap();
        assert!((d.width_ns() - 25.0).abs() < 1e-12);
        let s = bin_layout(2, 10.0, PI / 2.0).unwrap();
        assert!((s.origin_ns - 0.0).abs() < 1e-9 || (s.origin_ns - 100.0).abs() < 1e-9);
        assert!(bin_layout(3, 10.0, 0.0).is_err());
    }

    #[test]
    fn routing() {
        let d = bin_layout(4, 10.0, 0.0).unwrap();
        assert_eq!(router_assign(37.5, &d), 'A');
        assert_eq!(router_assign(50.0, &d), 'B');
        assert_eq!(router_assign(75.0, &d), 'C');
        assert_eq!(router_assign(100.0, &d), 'D');
        assert_eq!(router_assign(125.0, &d), 'A');
        assert_eq!(router_assign(24.999, &d), 'D');
        let q = bin_layout(2, 10.0, 0.0).unwrap();
        assert_eq!(router_assign(75.0, &q), 'B');
        assert_eq!(router_assign(50.0, &q), 'A');
    }

    fn approx_trace(cfg: &PhysicsConfig) -> CountTrace {
        let grid = TimeGrid::new(0.0, 200.0, 0.25).unwrap();
        CountTrace {
            grid,
            values: grid.times().iter().map(|&t| averaged_approx(t, cfg).unwrap()).collect(),
            model: ModelTag::Approx,
        }
    }

    #[test]
    fn qubit_populations() {
        let layout = bin_layout(2, 10.0, 0.0).unwrap();
        let cfg = default_config(Preset::Fig6);
        let p0 = bin_populations(&approx_trace(&cfg), &layout).unwrap();
        assert!(p0.get('A').unwrap() > p0.get('B').unwrap());
        assert!((p0.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let half = bin_populations(&approx_trace(&cfg.with_phi(PI / 2.0)), &layout).unwrap();
        assert!((half.values[0] - half.values[1]).abs() < 1e-8);
        let pi = bin_populations(&approx_trace(&cfg.with_phi(PI)), &layout).unwrap();
        assert!((pi.values[0] - p0.values[1]).abs() < 1e-12);
    }

    #[test]
    fn pulse_phases() {
        assert_eq!(per_pulse_phase(&default_config(Preset::Fig1a), 0).unwrap(), 0.0);
        let b = default_config(Preset::Fig1b);
        let first = per_pulse_phase(&b, 0).unwrap();
        let second = per_pulse_phase(&b, 1).unwrap();
        assert!((first - FRAC_PI_2).abs() < 0.3);
        assert!((second + FRAC_PI_2).abs() < 0.3);
        assert!((first + second).abs() < 1e-9);
        assert!(per_pulse_phase(&default_config(Preset::Fig1c), 0).is_err());
    }
}
