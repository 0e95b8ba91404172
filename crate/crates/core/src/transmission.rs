//! Photon amplitudes at the absorber exit.
//!
//! Everything is in the frame rotating at the source carrier, so amplitudes
//! are slowly varying envelopes. With `theta = Omega t + phi` the field seen
//! by the vibrating absorber is `a_L(t) e^{i p sin theta}`, and comb
//! component `k` carries `J_k(p) e^{i k theta}`.
//!
//! Each comb component `k` is scattered through the kernel
//! `K(u_k, t) = b int_0^t j_1(b tau) e^{u_k tau} dtau`, with
//! `u_k = i(dw - k Omega) - (gamma_a - gamma_s)`, so that
//! `a_ext = a_L [e^{i p sin theta} - sum_k J_k(p) e^{i k theta} K(u_k, t)]`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{ns_to_us, PhysicsConfig, Rates, SourceParams, TimeGrid, VibrationParams};
use crate::numerics::{
    bessel_j, integrate_complex, integrate_complex_panels, scaled_j, scaled_j_sequence, QuadratureSpec,
    SeriesTruncation,
};
use crate::{Error, Result};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Above this `|b/u|` the series form of the kernel loses too much to
/// cancellation and the kernel is integrated directly.
const SERIES_RATIO_LIMIT: f64 = 4.0;

/// Complex amplitude samples on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexWaveform {
    pub grid: TimeGrid,
    pub samples: Vec<Complex64>,
}

impl ComplexWaveform {
    pub fn times(&self) -> Vec<f64> {
        self.grid.times()
    }

    /// `|a|^2` per sample.
    pub fn probability(&self) -> Vec<f64> {
        self.samples.iter().map(|a| a.norm_sqr()).collect()
    }

    /// `|a|^2 e^{2 gamma_s t}`, the probability relative to the bare packet.
    pub fn envelope_normalized(&self, source: &SourceParams) -> Vec<f64> {
        let g = crate::model::angular(source.gamma_mhz);
        self.grid
            .times()
            .iter()
            .zip(&self.samples)
            .map(|(&t, a)| a.norm_sqr() * (2.0 * g * ns_to_us(t)).exp())
            .collect()
    }
}

/// Satellite kernel over a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SatelliteKernelResult {
    pub n: i32,
    pub grid: TimeGrid,
    pub values: Vec<Complex64>,
    pub truncation: SeriesTruncation,
    /// Largest magnitude of the last retained series term over the grid.
    pub last_term: f64,
}

impl SatelliteKernelResult {
    /// Whether the series had decayed below the cutoff everywhere.
    pub fn converged(&self) -> bool {
        self.last_term <= self.truncation.cutoff
    }
}

/// `Theta(t - t0) e^{-gamma_s (t - t0)}`.
pub fn incident_amplitude(t_ns: f64, source: &SourceParams, t0_ns: f64) -> Complex64 {
    if t_ns < t0_ns {
        return ZERO;
    }
    let g = crate::model::angular(source.gamma_mhz);
    Complex64::new((-g * ns_to_us(t_ns - t0_ns)).exp(), 0.0)
}

/// `(k, J_k(p))` for `k` in `-m_max..=m_max`.
pub fn comb_amplitudes(p: f64, m_max: u32) -> Vec<(i32, f64)> {
    let m_max = m_max as i32;
    (-m_max..=m_max).map(|k| (k, bessel_j(k, p))).collect()
}

fn phase_angle(t_ns: f64, vib: &VibrationParams) -> f64 {
    crate::model::angular(vib.omega_mhz) * ns_to_us(t_ns) + vib.phi
}

/// Incident field seen in the absorber frame, `a_L e^{i p sin(Omega t + phi)}`.
pub fn modulated_amplitude(t_ns: f64, vib: &VibrationParams, source: &SourceParams) -> Complex64 {
    let theta = phase_angle(t_ns, vib);
    incident_amplitude(t_ns, source, 0.0) * Complex64::from_polar(1.0, vib.p * theta.sin())
}

/// Output of an unmodulated single-line absorber in resonance,
/// `a_L(t) J_0(2 sqrt(b t))`.
pub fn single_line_output(t_ns: f64, b_mhz: f64, source: &SourceParams) -> Complex64 {
    if t_ns < 0.0 {
        return ZERO;
    }
    let bt = crate::model::angular(b_mhz) * ns_to_us(t_ns);
    incident_amplitude(t_ns, source, 0.0) * bessel_j(0, 2.0 * bt.sqrt())
}

/// `S_m(t) = J_m(p) [J_0(2 sqrt(b t)) - 1]`.
pub fn resonant_factor(t_ns: f64, cfg: &PhysicsConfig) -> f64 {
    let bt = cfg.rates().b * ns_to_us(t_ns.max(0.0));
    bessel_j(cfg.vibration.m, cfg.vibration.p) * (bessel_j(0, 2.0 * bt.sqrt()) - 1.0)
}

/// Field scattered by the resonant comb component, `a_L S_m e^{i m theta}`.
pub fn scattered_resonant(t_ns: f64, cfg: &PhysicsConfig) -> Complex64 {
    let theta = phase_angle(t_ns, &cfg.vibration);
    incident_amplitude(t_ns, &cfg.source, 0.0)
        * resonant_factor(t_ns, cfg)
        * Complex64::from_polar(1.0, cfg.vibration.m as f64 * theta)
}

/// `psi_m = m theta - p sin theta`.
pub fn psi(t_ns: f64, cfg: &PhysicsConfig) -> f64 {
    let theta = phase_angle(t_ns, &cfg.vibration);
    cfg.vibration.m as f64 * theta - cfg.vibration.p * theta.sin()
}

/// Detection probability from the resonant component alone,
/// `e^{-2 gamma t} [1 + 2 S_m cos psi_m + S_m^2]`.
pub fn probability_approx(t_ns: f64, cfg: &PhysicsConfig) -> Result<f64> {
    require_equal_linewidths(cfg)?;
    if t_ns < 0.0 {
        return Ok(0.0);
    }
    let g = cfg.rates().gamma_s;
    let s = resonant_factor(t_ns, cfg);
    let envelope = (-2.0 * g * ns_to_us(t_ns)).exp();
    Ok(envelope * (1.0 + 2.0 * s * psi(t_ns, cfg).cos() + s * s))
}

pub(crate) fn require_equal_linewidths(cfg: &PhysicsConfig) -> Result<()> {
    if cfg.equal_linewidths() {
        Ok(())
    } else {
        Err(Error::OutOfScope(format!(
            "requires gamma_s = gamma_a (got {} and {} MHz)",
            cfg.source.gamma_mhz, cfg.absorber.gamma_mhz
        )))
    }
}

/// Kernel value with the magnitude of the last series term used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelValue {
    pub value: Complex64,
    pub last_term: f64,
}

/// `b int_0^t j_1(b tau) e^{u tau} dtau` for angular `b`, `u` and `t` in us.
///
/// Uses the closed form `1 - e^{b/u} + e^{u t} sum_{k>=1} (b/u)^k j_k(b t)`
/// truncated per `trunc`, `1 - J_0(2 sqrt(b t))` at `u = 0`, and adaptive
/// quadrature when `|b/u|` is large.
pub fn response_kernel(u: Complex64, b: f64, t_us: f64, trunc: &SeriesTruncation) -> Result<KernelValue> {
    if b == 0.0 || t_us <= 0.0 {
        return Ok(KernelValue { value: ZERO, last_term: 0.0 });
    }
    let y = b * t_us;
    if u == ZERO {
        let v = 1.0 - bessel_j(0, 2.0 * y.sqrt());
        return Ok(KernelValue {
            value: Complex64::new(v, 0.0),
            last_term: 0.0,
        });
    }
    let z = b / u;
    if z.norm() > SERIES_RATIO_LIMIT {
        let f = |tau: f64| b * scaled_j(1, b * tau) * (u * tau).exp();
        let panels = oscillation_panels(0.0, t_us, u.im.abs().max(b));
        let v = integrate_complex_panels(f, &panels, &QuadratureSpec::new(1e-13, 1e-12, 50)?)?;
        return Ok(KernelValue { value: v, last_term: 0.0 });
    }
    let seq = scaled_j_sequence(trunc.k_max as usize, y);
    Ok(kernel_from_sequence(z, u, t_us, &seq, trunc))
}

fn kernel_from_sequence(z: Complex64, u: Complex64, t_us: f64, seq: &[f64], trunc: &SeriesTruncation) -> KernelValue {
    let mut power = Complex64::new(1.0, 0.0);
    let mut sum = ZERO;
    let mut last = 0.0;
    for &jk in seq.iter().skip(1) {
        power *= z;
        let term = power * jk;
        sum += term;
        last = term.norm();
        if last < trunc.cutoff && trunc.k_max > 1 {
            break;
        }
    }
    KernelValue {
        value: 1.0 - z.exp() + (u * t_us).exp() * sum,
        last_term: last,
    }
}

/// Break points every half period of the fastest oscillation.
fn oscillation_panels(a: f64, b: f64, rate: f64) -> Vec<f64> {
    let width = if rate > 0.0 { PI / rate } else { b - a };
    let n = (((b - a) / width).ceil() as usize).clamp(1, 4000);
    (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect()
}

/// Exponent `u_k` of comb component `k`.
pub fn comb_exponent(rates: &Rates, k: i32) -> Complex64 {
    Complex64::new(
        rates.gamma_s - rates.gamma_a,
        rates.detuning - k as f64 * rates.omega,
    )
}

/// Exponent of the satellite kernel with index `n`,
/// `u = i n Omega - (gamma_a - gamma_s)`.
fn satellite_exponent(rates: &Rates, n: i32) -> Complex64 {
    Complex64::new(rates.gamma_s - rates.gamma_a, n as f64 * rates.omega)
}

/// Satellite kernel `K_n(t) = 1 - e^{-i b/(n Omega + i(gamma_a - gamma_s))} + M_n(t)`.
pub fn satellite_kernel(n: i32, t_ns: f64, cfg: &PhysicsConfig, trunc: &SeriesTruncation) -> Result<Complex64> {
    Ok(satellite_kernel_value(n, t_ns, cfg, trunc)?.value)
}

fn satellite_kernel_value(n: i32, t_ns: f64, cfg: &PhysicsConfig, trunc: &SeriesTruncation) -> Result<KernelValue> {
    if n == 0 {
        return Err(Error::Invalid("satellite index must be nonzero".into()));
    }
    let r = cfg.rates();
    let u = satellite_exponent(&r, n);
    if (r.b / u).norm() > SERIES_RATIO_LIMIT {
        return Err(Error::Invalid(format!(
            "satellite series needs |b/(n Omega)| <= {SERIES_RATIO_LIMIT}, got {}",
            (r.b / u).norm()
        )));
    }
    response_kernel(u, r.b, ns_to_us(t_ns), trunc)
}

/// `K_n` over a grid; warns when the truncated series has not decayed.
pub fn satellite_kernel_trace(
    n: i32,
    grid: &TimeGrid,
    cfg: &PhysicsConfig,
    trunc: &SeriesTruncation,
) -> Result<SatelliteKernelResult> {
    let mut values = Vec::with_capacity(grid.len());
    let mut last_term: f64 = 0.0;
    for t in grid.times() {
        let kv = satellite_kernel_value(n, t, cfg, trunc)?;
        values.push(kv.value);
        last_term = last_term.max(kv.last_term);
    }
    let result = SatelliteKernelResult {
        n,
        grid: *grid,
        values,
        truncation: *trunc,
        last_term,
    };
    if !result.converged() {
        log::warn!(
            "satellite kernel n={n}: last series term {:.3e} exceeds cutoff {:.1e}",
            result.last_term,
            trunc.cutoff
        );
    }
    Ok(result)
}

/// Field scattered by the comb component `m + n`,
/// `-a_L J_{m+n}(p) e^{i(m+n) theta} K(t)`.
///
/// Component `m + n` is detuned from the line by `-n Omega`, so its kernel
/// is [`satellite_kernel`] with index `-n`.
pub fn satellite_amplitude(n: i32, grid: &TimeGrid, cfg: &PhysicsConfig) -> Result<ComplexWaveform> {
    let trunc = SeriesTruncation::default();
    let k = cfg.vibration.m + n;
    let jk = bessel_j(k, cfg.vibration.p);
    let kern = satellite_kernel_trace(-n, grid, cfg, &trunc)?;
    let samples = grid
        .times()
        .iter()
        .zip(&kern.values)
        .map(|(&t, kv)| {
            let theta = phase_angle(t, &cfg.vibration);
            -incident_amplitude(t, &cfg.source, 0.0) * jk * Complex64::from_polar(1.0, k as f64 * theta) * kv
        })
        .collect();
    Ok(ComplexWaveform { grid: *grid, samples })
}

/// Exact output amplitude by direct quadrature of the response convolution
/// `a_A(t) - b int_0^t a_A(t - tau) j_1(b tau) e^{-gamma_a tau + i dw tau} dtau`.
pub fn exact_amplitude(grid: &TimeGrid, cfg: &PhysicsConfig, quad: &QuadratureSpec) -> Result<ComplexWaveform> {
    let samples = grid
        .times()
        .par_iter()
        .map(|&t| exact_amplitude_at(t, cfg, quad))
        .collect::<Result<Vec<_>>>()?;
    Ok(ComplexWaveform { grid: *grid, samples })
}

/// Single-point form of [`exact_amplitude`].
pub fn exact_amplitude_at(t_ns: f64, cfg: &PhysicsConfig, quad: &QuadratureSpec) -> Result<Complex64> {
    let direct = modulated_amplitude(t_ns, &cfg.vibration, &cfg.source);
    if t_ns <= 0.0 {
        return Ok(direct);
    }
    let r = cfg.rates();
    if r.b == 0.0 {
        return Ok(direct);
    }
    let t = ns_to_us(t_ns);
    let p = cfg.vibration.p;
    let phi = cfg.vibration.phi;
    let decay = Complex64::new(-r.gamma_a, r.detuning);
    let f = |tau: f64| {
        let s = t - tau;
        let a_in = (-r.gamma_s * s).exp() * Complex64::from_polar(1.0, p * (r.omega * s + phi).sin());
        a_in * r.b * scaled_j(1, r.b * tau) * (decay * tau).exp()
    };
    let rate = p * r.omega + r.detuning.abs() + r.b;
    let panels = oscillation_panels(0.0, t, rate);
    let conv = integrate_complex_panels(f, &panels, quad).map_err(|e| match e {
        crate::numerics::NumericsError::NonConvergence { a, b, estimate, .. } => {
            Error::Numerics(crate::numerics::NumericsError::NonConvergence { a, b, estimate, at: t_ns })
        }
        other => Error::Numerics(other),
    })?;
    Ok(direct - conv)
}

/// Resonant term plus the two nearest satellites added to the incident comb.
pub fn improved_amplitude(grid: &TimeGrid, cfg: &PhysicsConfig, _quad: &QuadratureSpec) -> Result<ComplexWaveform> {
    let r = cfg.rates();
    let m = cfg.vibration.m;
    let trunc = SeriesTruncation::default();
    let mut samples = Vec::with_capacity(grid.len());
    for t in grid.times() {
        let theta = phase_angle(t, &cfg.vibration);
        let a_l = incident_amplitude(t, &cfg.source, 0.0);
        let mut a = a_l * Complex64::from_polar(1.0, cfg.vibration.p * theta.sin());
        for k in [m - 1, m, m + 1] {
            let kern = response_kernel(comb_exponent(&r, k), r.b, ns_to_us(t), &trunc)?;
            a -= a_l * bessel_j(k, cfg.vibration.p) * Complex64::from_polar(1.0, k as f64 * theta) * kern.value;
        }
        samples.push(a);
    }
    Ok(ComplexWaveform { grid: *grid, samples })
}

/// Exact amplitude assembled from cached per-component kernels.
///
/// The kernels depend on the rates and the sample times but not on `p` or
/// `phi`, so one bank serves many modulation settings (jitter averaging,
/// fitting, sampling).
#[derive(Debug, Clone)]
pub struct CombPropagator {
    times_ns: Vec<f64>,
    k_lo: i32,
    envelope: Vec<f64>,
    omega: f64,
    /// `kernels[i][k - k_lo]`
    kernels: Vec<Vec<Complex64>>,
}

impl CombPropagator {
    /// Bank covering comb orders needed for modulation indices up to `p_max`.
    pub fn new(cfg: &PhysicsConfig, times_ns: &[f64], p_max: f64) -> Result<Self> {
        let r = cfg.rates();
        let half = (p_max.max(0.0).ceil() as i32 + 25).min(80);
        let m = cfg.vibration.m;
        let (k_lo, k_hi) = ((-half).min(m - 2), half.max(m + 2));
        let trunc = SeriesTruncation::default();
        let kernels = times_ns
            .par_iter()
            .map(|&t| {
                let t_us = ns_to_us(t);
                if t_us <= 0.0 || r.b == 0.0 {
                    return Ok(vec![ZERO; (k_hi - k_lo + 1) as usize]);
                }
                let seq = scaled_j_sequence(trunc.k_max as usize, r.b * t_us);
                (k_lo..=k_hi)
                    .map(|k| {
                        let u = comb_exponent(&r, k);
                        if u == ZERO {
                            Ok(Complex64::new(1.0 - bessel_j(0, 2.0 * (r.b * t_us).sqrt()), 0.0))
                        } else if (r.b / u).norm() > SERIES_RATIO_LIMIT {
                            Ok(response_kernel(u, r.b, t_us, &trunc)?.value)
                        } else {
                            Ok(kernel_from_sequence(r.b / u, u, t_us, &seq, &trunc).value)
                        }
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let envelope = times_ns
            .iter()
            .map(|&t| incident_amplitude(t, &cfg.source, 0.0).re)
            .collect();
        Ok(Self {
            times_ns: times_ns.to_vec(),
            k_lo,
            envelope,
            omega: r.omega,
            kernels,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times_ns
    }

    /// Lowest comb order held in the bank.
    pub fn lowest_order(&self) -> i32 {
        self.k_lo
    }

    /// Kernels at sample `i`, indexed by `k - lowest_order()`.
    pub fn kernels_at(&self, i: usize) -> &[Complex64] {
        &self.kernels[i]
    }

    /// Amplitudes for modulation index `p` and phase `phi`.
    pub fn amplitudes(&self, p: f64, phi: f64) -> Vec<Complex64> {
        let n = self.kernels.first().map_or(0, |k| k.len());
        let k_hi = self.k_lo + n as i32 - 1;
        let top = self.k_lo.unsigned_abs().max(k_hi.unsigned_abs()) as usize;
        let j = crate::numerics::bessel_j_sequence(top, p);
        let coeff: Vec<f64> = (self.k_lo..=k_hi)
            .map(|k| {
                let v = j[k.unsigned_abs() as usize];
                if k < 0 && k % 2 != 0 {
                    -v
                } else {
                    v
                }
            })
            .collect();
        self.times_ns
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let theta = self.omega * ns_to_us(t) + phi;
                let step = Complex64::from_polar(1.0, theta);
                let mut rot = Complex64::from_polar(1.0, self.k_lo as f64 * theta);
                let mut scattered = ZERO;
                for (c, kern) in coeff.iter().zip(&self.kernels[i]) {
                    scattered += *c * rot * kern;
                    rot *= step;
                }
                self.envelope[i] * (Complex64::from_polar(1.0, p * theta.sin()) - scattered)
            })
            .collect()
    }

    /// `|a|^2 e^{2 gamma_s t}` for `p` and `phi`.
    pub fn envelope_normalized(&self, p: f64, phi: f64) -> Vec<f64> {
        self.amplitudes(p, phi)
            .iter()
            .zip(&self.envelope)
            .map(|(a, e)| if *e > 0.0 { a.norm_sqr() / (e * e) } else { 0.0 })
            .collect()
    }
}

/// Exact amplitude on a grid through [`CombPropagator`].
pub fn exact_amplitude_comb(grid: &TimeGrid, cfg: &PhysicsConfig) -> Result<ComplexWaveform> {
    let prop = CombPropagator::new(cfg, &grid.times(), cfg.vibration.p)?;
    Ok(ComplexWaveform {
        grid: *grid,
        samples: prop.amplitudes(cfg.vibration.p, cfg.vibration.phi),
    })
}

/// Kernel of the satellite with index `n` by direct quadrature; used as a
/// cross-check of the series form.
pub fn satellite_kernel_quadrature(n: i32, t_ns: f64, cfg: &PhysicsConfig, quad: &QuadratureSpec) -> Result<Complex64> {
    let r = cfg.rates();
    let u = satellite_exponent(&r, n);
    let t = ns_to_us(t_ns);
    if t <= 0.0 {
        return Ok(ZERO);
    }
    Ok(integrate_complex(|tau| r.b * scaled_j(1, r.b * tau) * (u * tau).exp(), 0.0, t, quad)?)
}
