//! Count rates averaged over the random formation time `t0`.
//!
//! For equal line widths the steady-state average depends on time only
//! through `theta = Omega t + phi`, and with
//! `G(tau) = b j_1(b tau) e^{i(phi(t - tau) + dw tau)}` and
//! `C(tau) = int_0^tau G` it reads
//! `N = 1 - 2 f_s Re[e^{-i phi(t)} int e^{-2 gamma tau} G]
//!        + 2 f_s Re int e^{-2 gamma tau} G conj(C)`,
//! where `phi(t) = p sin(Omega t + phi)`.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{ns_to_us, PhysicsConfig, TimeGrid};
use crate::numerics::{bessel_i0e, bessel_j, scaled_j, CumulativeRule, QuadratureSpec};
use crate::transmission::{psi, require_equal_linewidths};
use crate::{Error, Result};

/// Tail cut of the `t0` integrals: `e^{-2 gamma tau}` below this is dropped.
pub const TAIL_CUTOFF: f64 = 1e-9;

const PANEL_ORDER: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelTag {
    Exact,
    Approx,
    Improved,
}

/// Real-valued trace on a grid, normalized so that no absorber gives 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountTrace {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    pub model: ModelTag,
}

impl CountTrace {
    pub fn times(&self) -> Vec<f64> {
        self.grid.times()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AveragedExtrema {
    pub max: f64,
    pub min: f64,
    pub res: f64,
}

/// `e^{-T_a/2} I_0(T_a/2)`, the steady transmission of a resting absorber.
pub fn resonant_baseline(thickness: f64) -> f64 {
    bessel_i0e(thickness / 2.0)
}

fn v_u(m: i32, p: f64, thickness: f64) -> (f64, f64, f64) {
    let jm = bessel_j(m, p);
    let v = jm * (1.0 - (-thickness / 4.0).exp());
    let tail = jm * jm * (resonant_baseline(thickness) - (-thickness / 2.0).exp());
    (jm, v, tail)
}

/// Pulse and dark-window levels of the averaged approximation.
pub fn averaged_extrema(m: i32, p: f64, thickness: f64) -> AveragedExtrema {
    let (_, v, tail) = v_u(m, p, thickness);
    let a = (1.0 + v).powi(2) + tail;
    let b = (1.0 - v).powi(2) + tail;
    AveragedExtrema {
        max: a.max(b),
        min: a.min(b),
        res: resonant_baseline(thickness),
    }
}

/// `1 - 2 V_m cos psi_m + U_m`.
pub fn averaged_approx(t_ns: f64, cfg: &PhysicsConfig) -> Result<f64> {
    require_equal_linewidths(cfg)?;
    let (_, v, tail) = v_u(cfg.vibration.m, cfg.vibration.p, cfg.absorber.thickness);
    Ok(1.0 - 2.0 * v * psi(t_ns, cfg).cos() + v * v + tail)
}

/// Correction `<C_{m+sign}>` from the satellite `m + sign`.
pub fn satellite_correction(t_ns: f64, cfg: &PhysicsConfig, sign: i32) -> f64 {
    let r = cfg.rates();
    let m = cfg.vibration.m;
    let p = cfg.vibration.p;
    let w = r.b / Complex64::new(2.0 * r.gamma_s, -r.omega);
    let (big_b, big_d) = (w.re, w.im);
    let decay = (-big_b).exp();
    let theta = r.omega * ns_to_us(t_ns) + cfg.vibration.phi;
    let k = m + sign;
    let psi_k = k as f64 * theta - p * theta.sin();
    let s = sign as f64;
    2.0 * bessel_j(k, p)
        * ((psi_k.cos() - decay * (psi_k + s * big_d).cos())
            - bessel_j(m, p) * (theta.cos() - decay * (theta + big_d).cos()))
}

/// Averaged approximation corrected by the two nearest satellites.
pub fn averaged_improved(t_ns: f64, cfg: &PhysicsConfig) -> Result<f64> {
    let base = averaged_approx(t_ns, cfg)?;
    let r = cfg.rates();
    if r.omega < 5.0 * (2.0 * r.gamma_s).max(r.b) {
        log::warn!(
            "satellite corrections assume Omega >> 2 gamma, b (Omega = {:.3}, 2 gamma = {:.3}, b = {:.3} rad/us)",
            r.omega,
            2.0 * r.gamma_s,
            r.b
        );
    }
    Ok(base - satellite_correction(t_ns, cfg, 1) - satellite_correction(t_ns, cfg, -1))
}

/// Averaged approximation and its improvement on a grid.
pub fn averaged_trace(grid: &TimeGrid, cfg: &PhysicsConfig, model: ModelTag, quad: &QuadratureSpec) -> Result<CountTrace> {
    let values = match model {
        ModelTag::Exact => return averaged_exact(grid, cfg, quad),
        ModelTag::Approx => grid.times().iter().map(|&t| averaged_approx(t, cfg)).collect::<Result<Vec<_>>>()?,
        ModelTag::Improved => grid.times().iter().map(|&t| averaged_improved(t, cfg)).collect::<Result<Vec<_>>>()?,
    };
    Ok(CountTrace { grid: *grid, values, model })
}

/// Panel quadrature of the `t0`-averaged double integral.
///
/// Nodes, weights and `b j_1(b tau)` are fixed by the rates; the
/// modulation enters only at evaluation.
#[derive(Debug, Clone)]
pub struct AveragedEngine {
    rule: CumulativeRule,
    panel_width: f64,
    tau: Vec<f64>,
    weight: Vec<f64>,
    kernel: Vec<f64>,
    decay: Vec<f64>,
    sin_w: Vec<f64>,
    cos_w: Vec<f64>,
    detuning: f64,
}

impl AveragedEngine {
    /// Engine for `cfg` resolving modulation indices up to `p_max`;
    /// `refine` halves the panel width that many times.
    pub fn new(cfg: &PhysicsConfig, p_max: f64, refine: u32) -> Result<Self> {
        require_equal_linewidths(cfg)?;
        let r = cfg.rates();
        let two_gamma = 2.0 * r.gamma_s;
        let span = -TAIL_CUTOFF.ln() / two_gamma;
        let rate = r.detuning.abs() + p_max * r.omega + r.b + two_gamma;
        let period = TAU / r.omega;
        let mut width = (period / 4.0).min(3.0 / rate);
        width /= 2f64.powi(refine as i32);
        let panels = (span / width).ceil() as usize;
        let width = span / panels as f64;
        let rule = CumulativeRule::new(PANEL_ORDER);
        let n = panels * PANEL_ORDER;
        let mut tau = Vec::with_capacity(n);
        let mut weight = Vec::with_capacity(n);
        for k in 0..panels {
            for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                tau.push((k as f64 + x) * width);
                weight.push(w * width);
            }
        }
        let kernel = tau.iter().map(|&s| r.b * scaled_j(1, r.b * s)).collect();
        let decay = tau.iter().map(|&s| (-two_gamma * s).exp()).collect();
        let sin_w = tau.iter().map(|&s| (r.omega * s).sin()).collect();
        let cos_w = tau.iter().map(|&s| (r.omega * s).cos()).collect();
        Ok(Self {
            rule,
            panel_width: width,
            tau,
            weight,
            kernel,
            decay,
            sin_w,
            cos_w,
            detuning: r.detuning,
        })
    }

    /// `<N>` at vibration angle `theta` for modulation index `p` and source
    /// recoilless fraction `f_s`.
    pub fn evaluate(&self, theta: f64, p: f64, f_s: f64) -> f64 {
        let (st, ct) = theta.sin_cos();
        let n = PANEL_ORDER;
        let mut g = [Complex64::new(0.0, 0.0); PANEL_ORDER];
        let mut single = Complex64::new(0.0, 0.0);
        let mut double = Complex64::new(0.0, 0.0);
        let mut carried = Complex64::new(0.0, 0.0);
        for start in (0..self.tau.len()).step_by(n) {
            for l in 0..n {
                let j = start + l;
                // sin(theta - Omega tau)
                let s = st * self.cos_w[j] - ct * self.sin_w[j];
                g[l] = self.kernel[j] * Complex64::from_polar(1.0, p * s + self.detuning * self.tau[j]);
            }
            let mut panel_sum = Complex64::new(0.0, 0.0);
            for i in 0..n {
                let j = start + i;
                let wd = self.weight[j] * self.decay[j];
                let mut c = Complex64::new(0.0, 0.0);
                for (s, gl) in self.rule.running[i].iter().zip(&g) {
                    c += *s * gl;
                }
                let c_here = carried + c * self.panel_width;
                single += wd * g[i];
                double += wd * g[i] * c_here.conj();
                panel_sum += self.weight[j] * g[i];
            }
            carried += panel_sum;
        }
        let phase = Complex64::from_polar(1.0, -p * st);
        1.0 + f_s * (-2.0 * (phase * single).re + 2.0 * double.re)
    }
}

/// `t0`-averaged count rate by quadrature of the double integral.
///
/// The panel width is halved until two successive refinements agree to the
/// tolerance in `quad` on a probe of vibration angles.
pub fn averaged_exact(grid: &TimeGrid, cfg: &PhysicsConfig, quad: &QuadratureSpec) -> Result<CountTrace> {
    let engine = converged_engine(cfg, cfg.vibration.p, quad)?;
    let omega = cfg.rates().omega;
    let (p, phi, f_s) = (cfg.vibration.p, cfg.vibration.phi, cfg.source.f_s);
    let values = grid
        .times()
        .par_iter()
        .map(|&t| engine.evaluate(omega * ns_to_us(t) + phi, p, f_s))
        .collect();
    Ok(CountTrace {
        grid: *grid,
        values,
        model: ModelTag::Exact,
    })
}

fn converged_engine(cfg: &PhysicsConfig, p_max: f64, quad: &QuadratureSpec) -> Result<AveragedEngine> {
    let probe: Vec<f64> = (0..8).map(|k| k as f64 * PI / 4.0 + 0.1).collect();
    let p = cfg.vibration.p;
    let f_s = cfg.source.f_s;
    let mut engine = AveragedEngine::new(cfg, p_max, 0)?;
    let mut values: Vec<f64> = probe.iter().map(|&th| engine.evaluate(th, p, f_s)).collect();
    let max_refine = quad.max_depth.min(6);
    for level in 1..=max_refine {
        let finer = AveragedEngine::new(cfg, p_max, level)?;
        let next: Vec<f64> = probe.iter().map(|&th| finer.evaluate(th, p, f_s)).collect();
        let converged = values
            .iter()
            .zip(&next)
            .all(|(a, b)| (a - b).abs() <= quad.abs_tol.max(quad.rel_tol * b.abs()));
        if converged {
            return Ok(engine);
        }
        engine = finer;
        values = next;
    }
    Err(Error::Numerics(crate::numerics::NumericsError::NonConvergence {
        a: 0.0,
        b: -TAIL_CUTOFF.ln() / (2.0 * cfg.rates().gamma_s),
        estimate: f64::NAN,
        at: 0.0,
    }))
}

/// `<N>` tabulated over one vibration period and interpolated with its
/// trigonometric series; exact up to the band limit of the table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedExactTable {
    omega: f64,
    phi: f64,
    /// Real Fourier coefficients `a_0, (a_n, b_n)...`.
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl AveragedExactTable {
    pub const DEFAULT_SAMPLES: usize = 128;

    pub fn new(engine: &AveragedEngine, cfg: &PhysicsConfig, p: f64, phi: f64, f_s: f64, samples: usize) -> Self {
        let k = samples.max(4) & !1;
        let values: Vec<f64> = (0..k)
            .into_par_iter()
            .map(|j| engine.evaluate(TAU * j as f64 / k as f64, p, f_s))
            .collect();
        let half = k / 2;
        let mut cos = vec![0.0; half + 1];
        let mut sin = vec![0.0; half + 1];
        for n in 0..=half {
            let (mut a, mut b) = (0.0, 0.0);
            for (j, v) in values.iter().enumerate() {
                let x = TAU * (n * j) as f64 / k as f64;
                a += v * x.cos();
                b += v * x.sin();
            }
            let scale = if n == 0 || n == half { 1.0 } else { 2.0 } / k as f64;
            cos[n] = a * scale;
            sin[n] = if n == half { 0.0 } else { b * scale };
        }
        Self {
            omega: cfg.rates().omega,
            phi,
            cos,
            sin,
        }
    }

    /// Value at vibration angle `theta`.
    pub fn at_angle(&self, theta: f64) -> f64 {
        let step = Complex64::from_polar(1.0, theta);
        let mut rot = Complex64::new(1.0, 0.0);
        let mut acc = 0.0;
        for (a, b) in self.cos.iter().zip(&self.sin) {
            acc += a * rot.re + b * rot.im;
            rot *= step;
        }
        acc
    }

    /// Value at time `t_ns`.
    pub fn at(&self, t_ns: f64) -> f64 {
        self.at_angle(self.omega * ns_to_us(t_ns) + self.phi)
    }

    /// Average over one period.
    pub fn mean(&self) -> f64 {
        self.cos[0]
    }
}

/// Table for the modulation in `cfg`, with the engine converged per `quad`.
pub fn averaged_exact_table(cfg: &PhysicsConfig, quad: &QuadratureSpec) -> Result<AveragedExactTable> {
    let engine = converged_engine(cfg, cfg.vibration.p, quad)?;
    Ok(AveragedExactTable::new(
        &engine,
        cfg,
        cfg.vibration.p,
        cfg.vibration.phi,
        cfg.source.f_s,
        AveragedExactTable::DEFAULT_SAMPLES,
    ))
}

/// Engine valid for modulation indices up to `p_max`, converged per `quad`.
pub fn averaged_engine(cfg: &PhysicsConfig, p_max: f64, quad: &QuadratureSpec) -> Result<AveragedEngine> {
    converged_engine(&cfg.with_p(p_max), p_max, quad)
}
