//! Forward model of normalized counts and weighted least-squares fits.
//!
//! Data points are channel averages. Coincidence counts are normalized to
//! the counts expected without a resonant absorber, so the model is
//! `scale * <f_s |a|^2 e^{2 gamma_s t} + 1 - f_s>_jitter`; fixed-start counts
//! are modelled by the jitter-averaged `t0` average.

use std::borrow::Cow;
use std::f64::consts::{PI, TAU};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{jitter_nodes, AcquisitionMode, EventHistogram, DEFAULT_JITTER_NODES};
use crate::averaging::{averaged_engine, AveragedEngine, AveragedExactTable};
use crate::model::{ns_to_us, PhysicsConfig};
use crate::numerics::{bessel_j, gauss_legendre, QuadratureSpec};
use crate::transmission::CombPropagator;
use crate::{Error, Result};

pub type FitMode = AcquisitionMode;

/// Gauss-Legendre nodes per channel when averaging the model.
const CHANNEL_NODES: usize = 6;

pub const PARAM_NAMES: [&str; 6] = ["p", "phi", "dphi", "f_s", "T_a", "scale"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    pub p: f64,
    pub phi: f64,
    pub dphi: f64,
    pub f_s: f64,
    /// Absorber thickness; `None` keeps the value of the physics config.
    pub t_a: Option<f64>,
    pub scale: f64,
}

impl FitParams {
    pub fn from_config(cfg: &PhysicsConfig) -> Self {
        Self {
            p: cfg.vibration.p,
            phi: cfg.vibration.phi,
            dphi: cfg.phase_jitter,
            f_s: cfg.source.f_s,
            t_a: None,
            scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Invalid(format!("fit parameter {what}")));
        if !(self.p >= 0.0) || !self.p.is_finite() {
            return bad("p must be >= 0");
        }
        if !self.phi.is_finite() {
            return bad("phi must be finite");
        }
        if !(0.0..=TAU).contains(&self.dphi) {
            return bad("dphi must lie in [0, 2pi]");
        }
        if !(0.0..=1.0).contains(&self.f_s) {
            return bad("f_s must lie in [0, 1]");
        }
        if let Some(t) = self.t_a {
            if !(t >= 0.0) || !t.is_finite() {
                return bad("T_a must be >= 0");
            }
        }
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return bad("scale must be > 0");
        }
        Ok(())
    }

    fn get(&self, i: usize, cfg: &PhysicsConfig) -> f64 {
        match i {
            0 => self.p,
            1 => self.phi,
            2 => self.dphi,
            3 => self.f_s,
            4 => self.t_a.unwrap_or(cfg.absorber.thickness),
            _ => self.scale,
        }
    }

    fn set(&mut self, i: usize, v: f64) {
        match i {
            0 => self.p = v,
            1 => self.phi = v,
            2 => self.dphi = v,
            3 => self.f_s = v,
            4 => self.t_a = Some(v),
            _ => self.scale = v,
        }
    }

    fn thickness(&self, cfg: &PhysicsConfig) -> f64 {
        self.t_a.unwrap_or(cfg.absorber.thickness)
    }
}

/// Which parameters the fit may move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FreeMask {
    pub p: bool,
    pub phi: bool,
    pub dphi: bool,
    pub f_s: bool,
    pub t_a: bool,
    pub scale: bool,
}

impl FreeMask {
    pub fn none() -> Self {
        Self::default()
    }

    /// `p`, `phi` and `scale`.
    pub fn shape() -> Self {
        Self {
            p: true,
            phi: true,
            scale: true,
            ..Self::default()
        }
    }

    fn flags(&self) -> [bool; 6] {
        [self.p, self.phi, self.dphi, self.f_s, self.t_a, self.scale]
    }

    pub fn count(&self) -> usize {
        self.flags().iter().filter(|&&f| f).count()
    }
}

/// Channel-averaged measurements with one-sigma errors. A point with
/// `lo == hi` is a sample at that time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitData {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub values: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl FitData {
    pub fn from_points(t_ns: &[f64], values: &[f64], sigma: &[f64]) -> Result<Self> {
        let d = Self {
            lo: t_ns.to_vec(),
            hi: t_ns.to_vec(),
            values: values.to_vec(),
            sigma: sigma.to_vec(),
        };
        d.validate()?;
        Ok(d)
    }

    /// Counts normalized to the expectation without resonant absorption,
    /// with Poisson errors (empty channels get a one-count error).
    pub fn from_histogram(hist: &EventHistogram, cfg: &PhysicsConfig) -> Result<Self> {
        let n: f64 = hist.in_range() as f64;
        if n == 0.0 {
            return Err(Error::Invalid("histogram has no counts in range".into()));
        }
        let rate = 2.0 * cfg.rates().gamma_s * 1e-3;
        let base: Vec<f64> = hist
            .edges
            .windows(2)
            .map(|w| match hist.mode {
                AcquisitionMode::Coincidence => (-rate * w[0]).exp() - (-rate * w[1]).exp(),
                AcquisitionMode::FixedStart => w[1] - w[0],
            })
            .collect();
        let total: f64 = base.iter().sum();
        let mut d = Self {
            lo: Vec::new(),
            hi: Vec::new(),
            values: Vec::new(),
            sigma: Vec::new(),
        };
        for ((w, &c), b) in hist.edges.windows(2).zip(&hist.counts).zip(&base) {
            let expect = n * b / total;
            if expect <= 0.0 {
                continue;
            }
            d.lo.push(w[0]);
            d.hi.push(w[1]);
            d.values.push(c as f64 / expect);
            d.sigma.push((c as f64).max(1.0).sqrt() / expect);
        }
        d.validate()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.values.len();
        if n == 0 {
            return Err(Error::Invalid("fit data is empty".into()));
        }
        if self.lo.len() != n || self.hi.len() != n || self.sigma.len() != n {
            return Err(Error::Invalid("fit data columns differ in length".into()));
        }
        if self.sigma.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Invalid("fit errors must be positive".into()));
        }
        if self.lo.iter().zip(&self.hi).any(|(a, b)| !(b >= a)) {
            return Err(Error::Invalid("fit channels must have lo <= hi".into()));
        }
        Ok(())
    }
}

enum Bank {
    Coincidence(CombPropagator),
    FixedStart(AveragedEngine),
}

/// Channel-averaged model on fixed data support, with the kernel bank or
/// averaging engine cached for one absorber thickness.
pub struct ModelEvaluator {
    cfg: PhysicsConfig,
    mode: FitMode,
    p_max: f64,
    times: Vec<f64>,
    /// `(first node, node count)` per data point.
    groups: Vec<(usize, usize)>,
    weights: Vec<f64>,
    thickness: f64,
    bank: Bank,
}

impl ModelEvaluator {
    pub fn new(cfg: &PhysicsConfig, mode: FitMode, lo: &[f64], hi: &[f64], p_max: f64) -> Result<Self> {
        cfg.validate()?;
        let (x, w) = gauss_legendre(CHANNEL_NODES);
        let rate = 2.0 * cfg.rates().gamma_s * 1e-3;
        let mut times = Vec::new();
        let mut weights = Vec::new();
        let mut groups = Vec::with_capacity(lo.len());
        for (&a, &b) in lo.iter().zip(hi) {
            let first = times.len();
            if b > a {
                let mid = 0.5 * (a + b);
                let half = 0.5 * (b - a);
                let mut ws: Vec<f64> = Vec::with_capacity(CHANNEL_NODES);
                for (xi, wi) in x.iter().zip(&w) {
                    let t = mid + half * xi;
                    times.push(t);
                    ws.push(match mode {
                        AcquisitionMode::Coincidence => wi * (-rate * (t - a)).exp(),
                        AcquisitionMode::FixedStart => *wi,
                    });
                }
                let s: f64 = ws.iter().sum();
                weights.extend(ws.iter().map(|v| v / s));
            } else {
                times.push(a);
                weights.push(1.0);
            }
            groups.push((first, times.len() - first));
        }
        let bank = Self::build(cfg, mode, &times, p_max)?;
        Ok(Self {
            cfg: *cfg,
            mode,
            p_max,
            times,
            groups,
            weights,
            thickness: cfg.absorber.thickness,
            bank,
        })
    }

    fn build(cfg: &PhysicsConfig, mode: FitMode, times: &[f64], p_max: f64) -> Result<Bank> {
        Ok(match mode {
            AcquisitionMode::Coincidence => Bank::Coincidence(CombPropagator::new(cfg, times, p_max)?),
            AcquisitionMode::FixedStart => {
                Bank::FixedStart(averaged_engine(cfg, p_max, &QuadratureSpec::default())?)
            }
        })
    }

    fn bank_for(&self, thickness: f64) -> Result<Cow<'_, Bank>> {
        if thickness == self.thickness {
            Ok(Cow::Borrowed(&self.bank))
        } else {
            let cfg = self.cfg.with_thickness(thickness);
            Ok(Cow::Owned(Self::build(&cfg, self.mode, &self.times, self.p_max)?))
        }
    }

    /// Model value per data point.
    pub fn values(&self, params: &FitParams) -> Result<Vec<f64>> {
        params.validate()?;
        if params.p > self.p_max {
            return Err(Error::Invalid(format!(
                "p = {} exceeds the evaluator range {}",
                params.p, self.p_max
            )));
        }
        let thickness = params.thickness(&self.cfg);
        let bank = self.bank_for(thickness)?;
        let nodes = jitter_nodes(params.phi, params.dphi, DEFAULT_JITTER_NODES);
        let mut at_nodes = vec![0.0; self.times.len()];
        match bank.as_ref() {
            Bank::Coincidence(prop) => {
                for &(phi, w) in &nodes {
                    for (acc, v) in at_nodes.iter_mut().zip(prop.envelope_normalized(params.p, phi)) {
                        *acc += w * (params.f_s * v + 1.0 - params.f_s);
                    }
                }
            }
            Bank::FixedStart(engine) => {
                let cfg = self.cfg.with_thickness(thickness);
                let omega = cfg.rates().omega;
                let table =
                    AveragedExactTable::new(engine, &cfg, params.p, 0.0, params.f_s, AveragedExactTable::DEFAULT_SAMPLES);
                for (acc, &t) in at_nodes.iter_mut().zip(&self.times) {
                    let theta = omega * ns_to_us(t);
                    *acc = nodes.iter().map(|&(phi, w)| w * table.at_angle(theta + phi)).sum();
                }
            }
        }
        Ok(self
            .groups
            .iter()
            .map(|&(first, n)| {
                let s: f64 = (first..first + n).map(|j| self.weights[j] * at_nodes[j]).sum();
                params.scale * s
            })
            .collect())
    }

    fn bank_kind(bank: &Bank) -> &'static str {
        match bank {
            Bank::Coincidence(_) => "coincidence",
            Bank::FixedStart(_) => "fixed-start",
        }
    }
}

impl Clone for Bank {
    fn clone(&self) -> Self {
        match self {
            Bank::Coincidence(p) => Bank::Coincidence(p.clone()),
            Bank::FixedStart(e) => Bank::FixedStart(e.clone()),
        }
    }
}

impl std::fmt::Debug for ModelEvaluator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelEvaluator")
            .field("mode", &Self::bank_kind(&self.bank))
            .field("points", &self.groups.len())
            .field("thickness", &self.thickness)
            .finish()
    }
}

/// Normalized counts at `t_ns`.
pub fn model_counts(t_ns: f64, params: &FitParams, cfg: &PhysicsConfig, mode: FitMode) -> Result<f64> {
    let cfg = cfg.with_thickness(params.thickness(cfg));
    let ev = ModelEvaluator::new(&cfg, mode, &[t_ns], &[t_ns], params.p.max(cfg.vibration.p))?;
    Ok(ev.values(params)?[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Grid over `p` for the coarse scan.
    pub grid_p: usize,
    /// Grid over `phi` for the coarse scan.
    pub grid_phi: usize,
    /// Relative change of the objective below which the simplex has settled.
    pub f_tol: f64,
    /// Simplex size, in units of the initial steps, below which it has settled.
    pub x_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            grid_p: 13,
            grid_phi: 16,
            f_tol: 1e-12,
            x_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: FitParams,
    /// Confidence half-widths; `None` for frozen parameters.
    pub errors: [Option<f64>; 6],
    /// Weighted residual sum of squares.
    pub chi2: f64,
    pub dof: usize,
    pub iterations: usize,
    /// Best objective after each refinement iteration.
    pub history: Vec<f64>,
    /// Parameters that ended on a bound.
    pub pinned: Vec<String>,
}

impl FitResult {
    pub fn error(&self, name: &str) -> Option<f64> {
        PARAM_NAMES.iter().position(|n| *n == name).and_then(|i| self.errors[i])
    }

    /// `{params, errors, chi2, dof, iterations}`.
    pub fn report(&self) -> serde_json::Value {
        let mut errors = serde_json::Map::new();
        for (name, e) in PARAM_NAMES.iter().zip(&self.errors) {
            if let Some(e) = e {
                errors.insert((*name).into(), serde_json::json!(e));
            }
        }
        serde_json::json!({
            "params": {
                "p": self.params.p,
                "phi": self.params.phi,
                "dphi": self.params.dphi,
                "f_s": self.params.f_s,
                "T_a": self.params.t_a,
                "scale": self.params.scale,
            },
            "errors": errors,
            "chi2": self.chi2,
            "dof": self.dof,
            "iterations": self.iterations,
        })
    }
}

struct Problem<'a> {
    data: &'a FitData,
    eval: &'a ModelEvaluator,
    cfg: &'a PhysicsConfig,
    base: FitParams,
    /// Indices moved by the simplex; `scale` is profiled when free.
    moving: Vec<usize>,
    profile_scale: bool,
    bounds: Vec<(f64, f64)>,
}

impl Problem<'_> {
    fn params_at(&self, x: &[f64]) -> FitParams {
        let mut p = self.base;
        for (&i, &v) in self.moving.iter().zip(x) {
            p.set(i, v);
        }
        p
    }

    fn chi2(&self, params: &FitParams) -> f64 {
        match self.eval.values(params) {
            Ok(model) => chi2(self.data, &model),
            Err(_) => f64::INFINITY,
        }
    }

    /// Objective with `scale` at its weighted least-squares value when free.
    fn profiled(&self, x: &[f64]) -> (f64, FitParams) {
        let mut params = self.params_at(x);
        if !self.profile_scale {
            return (self.chi2(&params), params);
        }
        params.scale = 1.0;
        let model = match self.eval.values(&params) {
            Ok(m) => m,
            Err(_) => return (f64::INFINITY, params),
        };
        let (mut num, mut den) = (0.0, 0.0);
        for ((v, m), s) in self.data.values.iter().zip(&model).zip(&self.data.sigma) {
            num += v * m / (s * s);
            den += m * m / (s * s);
        }
        if !(den > 0.0) || !(num > 0.0) {
            return (f64::INFINITY, params);
        }
        params.scale = num / den;
        let scaled: Vec<f64> = model.iter().map(|m| m * params.scale).collect();
        (chi2(self.data, &scaled), params)
    }

    fn clamp(&self, x: &mut [f64]) {
        for (v, (lo, hi)) in x.iter_mut().zip(&self.bounds) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

fn chi2(data: &FitData, model: &[f64]) -> f64 {
    data.values
        .iter()
        .zip(model)
        .zip(&data.sigma)
        .map(|((v, m), s)| ((v - m) / s).powi(2))
        .sum()
}

fn bounds_of(i: usize, p_max: f64) -> (f64, f64) {
    match i {
        0 => (0.0, p_max),
        1 => (f64::NEG_INFINITY, f64::INFINITY),
        2 => (0.0, TAU),
        3 => (0.0, 1.0),
        4 => (0.0, 1e3),
        _ => (f64::MIN_POSITIVE, f64::INFINITY),
    }
}

fn initial_step(i: usize, v: f64) -> f64 {
    match i {
        0 => 0.1 * v.abs().max(1.0),
        1 | 2 => 0.2,
        3 => 0.05,
        4 => 0.1 * v.abs().max(1.0),
        _ => 0.1 * v.abs().max(1e-3),
    }
}

fn wrap_angle(x: f64) -> f64 {
    let w = (x + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

struct SimplexOutcome {
    x: Vec<f64>,
    f: f64,
    iterations: usize,
    converged: bool,
}

/// Nelder-Mead with projection onto the bounds.
fn nelder_mead(
    prob: &Problem,
    start: &[f64],
    steps: &[f64],
    opts: &FitOptions,
    budget: usize,
    history: &mut Vec<f64>,
) -> SimplexOutcome {
    let n = start.len();
    let f = |x: &[f64]| prob.profiled(x).0;
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(start.to_vec());
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] += steps[i];
        prob.clamp(&mut v);
        if v[i] == start[i] {
            v[i] -= steps[i];
            prob.clamp(&mut v);
        }
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.par_iter().map(|x| f(x)).collect();
    let mut iterations = 0;
    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        let best = values[0];
        let spread = values[n] - best;
        let size = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).zip(steps).map(|((a, b), s)| (a - b).abs() / s))
            .fold(0.0, f64::max);
        if (spread <= opts.f_tol * (1.0 + best.abs()) && size <= opts.x_tol) || size <= 1e-14 {
            return SimplexOutcome {
                x: simplex[0].clone(),
                f: best,
                iterations,
                converged: true,
            };
        }
        if iterations >= budget {
            return SimplexOutcome {
                x: simplex[0].clone(),
                f: best,
                iterations,
                converged: false,
            };
        }
        iterations += 1;
        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| {
            let mut v: Vec<f64> = centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (c - w)).collect();
            prob.clamp(&mut v);
            v
        };
        let xr = along(1.0);
        let fr = f(&xr);
        if fr < values[0] {
            let xe = along(2.0);
            let fe = f(&xe);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
        } else {
            let (xc, fc) = if fr < values[n] {
                let xc = along(0.5);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = along(-0.5);
                let fc = f(&xc);
                (xc, fc)
            };
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                let x0 = simplex[0].clone();
                let shrunk: Vec<Vec<f64>> = simplex[1..]
                    .iter()
                    .map(|v| {
                        let mut s: Vec<f64> = v.iter().zip(&x0).map(|(a, b)| b + 0.5 * (a - b)).collect();
                        prob.clamp(&mut s);
                        s
                    })
                    .collect();
                let fs: Vec<f64> = shrunk.par_iter().map(|x| f(x)).collect();
                for (k, (s, v)) in shrunk.into_iter().zip(fs).enumerate() {
                    simplex[k + 1] = s;
                    values[k + 1] = v;
                }
            }
        }
        history.push(values.iter().cloned().fold(f64::INFINITY, f64::min));
    }
}

/// Weighted least-squares fit of `data` starting from `init`.
///
/// A coarse grid over `(p, phi)` (when both are free) seeds a bounded
/// Nelder-Mead refinement; confidence half-widths come from a
/// finite-difference Hessian of the objective at the optimum.
pub fn fit(data: &FitData, init: &FitParams, free: &FreeMask, cfg: &PhysicsConfig, mode: FitMode) -> Result<FitResult> {
    fit_with(data, init, free, cfg, mode, &FitOptions::default())
}

pub fn fit_with(
    data: &FitData,
    init: &FitParams,
    free: &FreeMask,
    cfg: &PhysicsConfig,
    mode: FitMode,
    opts: &FitOptions,
) -> Result<FitResult> {
    data.validate()?;
    init.validate()?;
    let p_max = 2.0 * init.p.max(1.0) + 2.0;
    let base_cfg = cfg.with_thickness(init.thickness(cfg));
    let eval = ModelEvaluator::new(&base_cfg, mode, &data.lo, &data.hi, p_max)?;
    let flags = free.flags();
    let moving: Vec<usize> = (0..5).filter(|&i| flags[i]).collect();
    let prob = Problem {
        data,
        eval: &eval,
        cfg: &base_cfg,
        base: *init,
        moving: moving.clone(),
        profile_scale: flags[5],
        bounds: moving.iter().map(|&i| bounds_of(i, p_max)).collect(),
    };
    let dof = data.len().saturating_sub(free.count());
    if free.count() == 0 {
        let chi2 = prob.chi2(init);
        return Ok(FitResult {
            params: *init,
            errors: [None; 6],
            chi2,
            dof,
            iterations: 0,
            history: vec![chi2],
            pinned: Vec::new(),
        });
    }

    let mut start: Vec<f64> = moving.iter().map(|&i| init.get(i, &base_cfg)).collect();
    if free.p && free.phi {
        let ip = moving.iter().position(|&i| i == 0).unwrap();
        let iphi = moving.iter().position(|&i| i == 1).unwrap();
        let half = 0.5 * init.p.max(1.0);
        let (lo, hi) = ((init.p - half).max(0.0), (init.p + half).min(p_max));
        let mut candidates = Vec::new();
        for a in 0..opts.grid_p.max(1) {
            for c in 0..opts.grid_phi.max(1) {
                let mut x = start.clone();
                x[ip] = if opts.grid_p > 1 {
                    lo + (hi - lo) * a as f64 / (opts.grid_p - 1) as f64
                } else {
                    init.p
                };
                x[iphi] = init.phi - PI + TAU * c as f64 / opts.grid_phi.max(1) as f64;
                candidates.push(x);
            }
        }
        candidates.push(start.clone());
        let scored: Vec<f64> = candidates.par_iter().map(|x| prob.profiled(x).0).collect();
        let best = (0..candidates.len())
            .min_by(|&a, &b| scored[a].total_cmp(&scored[b]))
            .unwrap();
        start = candidates[best].clone();
    }

    let mut history = Vec::new();
    let mut iterations = 0;
    let mut best_x = start;
    let mut best_f;
    if moving.is_empty() {
        best_f = prob.profiled(&best_x).0;
        history.push(best_f);
    } else {
        let mut steps: Vec<f64> = moving.iter().zip(&best_x).map(|(&i, &v)| initial_step(i, v)).collect();
        best_f = prob.profiled(&best_x).0;
        history.push(best_f);
        let mut converged = false;
        for _ in 0..4 {
            let budget = opts.max_iterations.saturating_sub(iterations);
            let out = nelder_mead(&prob, &best_x, &steps, opts, budget, &mut history);
            iterations += out.iterations;
            let improved = best_f - out.f;
            if out.f <= best_f {
                best_x = out.x;
                best_f = out.f;
            }
            converged = out.converged;
            if !out.converged || improved <= opts.f_tol * (1.0 + best_f.abs()) {
                break;
            }
            for s in &mut steps {
                *s *= 0.1;
            }
        }
        if !converged {
            return Err(Error::FitNonConvergence { iterations });
        }
    }
    let (chi2, mut params) = prob.profiled(&best_x);
    let errors = hessian_errors(&prob, &params, flags);
    if free.phi {
        params.phi = wrap_angle(params.phi);
    }
    let mut pinned = Vec::new();
    for (k, &i) in moving.iter().enumerate() {
        let (lo, hi) = prob.bounds[k];
        let v = best_x[k];
        if (lo.is_finite() && v - lo <= 1e-9 * (1.0 + lo.abs())) || (hi.is_finite() && hi - v <= 1e-9 * (1.0 + hi.abs())) {
            log::warn!("fit parameter {} is pinned at its bound ({v})", PARAM_NAMES[i]);
            pinned.push(PARAM_NAMES[i].to_string());
        }
    }
    Ok(FitResult {
        params,
        errors,
        chi2,
        dof,
        iterations,
        history,
        pinned,
    })
}

/// Half-widths `sqrt(diag(2 H^{-1}))` of the objective over all free
/// parameters, scale included.
fn hessian_errors(prob: &Problem, at: &FitParams, flags: [bool; 6]) -> [Option<f64>; 6] {
    let free: Vec<usize> = (0..6).filter(|&i| flags[i]).collect();
    let n = free.len();
    let x0: Vec<f64> = free.iter().map(|&i| at.get(i, prob.cfg)).collect();
    let h: Vec<f64> = free
        .iter()
        .zip(&x0)
        .map(|(&i, &v)| match i {
            1 | 2 => 1e-4,
            _ => 1e-4 * v.abs().max(1e-2),
        })
        .collect();
    let f = |d: &[(usize, f64)]| {
        let mut p = *at;
        for &(k, s) in d {
            p.set(free[k], x0[k] + s);
        }
        prob.chi2(&p)
    };
    let f0 = prob.chi2(at);
    let mut hess = DMatrix::<f64>::zeros(n, n);
    for a in 0..n {
        let fp = f(&[(a, h[a])]);
        let fm = f(&[(a, -h[a])]);
        hess[(a, a)] = (fp - 2.0 * f0 + fm) / (h[a] * h[a]);
        for b in 0..a {
            let v = (f(&[(a, h[a]), (b, h[b])]) - f(&[(a, h[a]), (b, -h[b])]) - f(&[(a, -h[a]), (b, h[b])])
                + f(&[(a, -h[a]), (b, -h[b])]))
                / (4.0 * h[a] * h[b]);
            hess[(a, b)] = v;
            hess[(b, a)] = v;
        }
    }
    let mut out = [None; 6];
    let cov = hess.try_inverse().map(|m| m * 2.0);
    for (k, &i) in free.iter().enumerate() {
        out[i] = Some(match &cov {
            Some(c) if c[(k, k)] >= 0.0 => c[(k, k)].sqrt(),
            _ => f64::NAN,
        });
    }
    out
}

/// Modulation index maximizing `|J_m(p)|` within `p_range`: grid scan at
/// `step`, then golden-section refinement.
pub fn scan_optimal_p(m: i32, p_range: (f64, f64), step: f64) -> Result<f64> {
    let (lo, hi) = p_range;
    if !(hi > lo) || !(step > 0.0) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Invalid(format!("bad scan range [{lo}, {hi}] with step {step}")));
    }
    let g = |p: f64| -bessel_j(m, p).abs();
    let n = ((hi - lo) / step).ceil() as usize;
    let (best, _) = (0..=n)
        .map(|k| (lo + step * k as f64).min(hi))
        .map(|p| (p, g(p)))
        .fold((lo, f64::INFINITY), |acc, c| if c.1 < acc.1 { c } else { acc });
    let (mut a, mut b) = ((best - step).max(lo), (best + step).min(hi));
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (g(c), g(d));
    while b - a > 1e-12 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = g(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = g(d);
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{default_config, Preset, TimeGrid};
    use crate::transmission::exact_amplitude_comb;

    #[test]
    fn optimal_p_scan() {
        for (m, want) in [(1, 1.8412), (2, 3.0542), (3, 4.2012)] {
            let p = scan_optimal_p(m, (0.0, 6.0), 0.05).unwrap();
            assert!((p - want).abs() < 1e-3, "m={m}: {p}");
        }
        assert!(scan_optimal_p(1, (1.0, 0.0), 0.1).is_err());
    }

    #[test]
    fn coincidence_model_trivia() {
        let cfg = default_config(Preset::Fig1a);
        let mut params = FitParams::from_config(&cfg);
        let grid = TimeGrid::new(0.0, 100.0, 20.0).unwrap();
        let wave = exact_amplitude_comb(&grid, &cfg).unwrap();
        let env = wave.envelope_normalized(&cfg.source);
        for (t, e) in grid.times().iter().zip(&env) {
            let v = model_counts(*t, &params, &cfg, FitMode::Coincidence).unwrap();
            assert!((v - e).abs() < 1e-10, "t={t}: {v} vs {e}");
        }
        params.f_s = 0.0;
        params.scale = 2.5;
        assert!((model_counts(37.0, &params, &cfg, FitMode::Coincidence).unwrap() - 2.5).abs() < 1e-14);
    }

    #[test]
    fn fixed_start_model_matches_averaged_trace() {
        let cfg = default_config(Preset::Fig1b).with_phi(0.3);
        let params = FitParams::from_config(&cfg);
        let grid = TimeGrid::new(0.0, 100.0, 25.0).unwrap();
        let trace = crate::averaging::averaged_exact(&grid, &cfg, &QuadratureSpec::default()).unwrap();
        for (t, e) in grid.times().iter().zip(&trace.values) {
            let v = model_counts(*t, &params, &cfg, FitMode::FixedStart).unwrap();
            assert!((v - e).abs() < 1e-7, "t={t}: {v} vs {e}");
        }
    }

    #[test]
    fn phi_periodicity() {
        let cfg = default_config(Preset::Fig1a);
        let mut params = FitParams::from_config(&cfg);
        params.phi = 0.4;
        params.dphi = 0.5;
        let a = model_counts(55.0, &params, &cfg, FitMode::Coincidence).unwrap();
        params.phi += TAU;
        let b = model_counts(55.0, &params, &cfg, FitMode::Coincidence).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn frozen_fit_returns_init() {
        let cfg = default_config(Preset::Fig1a);
        let init = FitParams::from_config(&cfg);
        let t: Vec<f64> = (0..10).map(|i| 10.0 * i as f64).collect();
        let data = FitData::from_points(&t, &vec![1.0; 10], &vec![0.1; 10]).unwrap();
        let r = fit(&data, &init, &FreeMask::none(), &cfg, FitMode::Coincidence).unwrap();
        assert_eq!(r.params, init);
        assert_eq!(r.iterations, 0);
        let ev = ModelEvaluator::new(&cfg, FitMode::Coincidence, &data.lo, &data.hi, 2.0).unwrap();
        let want = chi2(&data, &ev.values(&init).unwrap());
        assert!((r.chi2 - want).abs() < 1e-12 * want.max(1.0));
    }

    #[test]
    fn noiseless_round_trip() {
        let cfg = default_config(Preset::Fig1a).with_phi(0.7);
        let truth = FitParams::from_config(&cfg);
        let lo: Vec<f64> = (0..60).map(|i| 8.0 * i as f64).collect();
        let hi: Vec<f64> = lo.iter().map(|t| t + 8.0).collect();
        let ev = ModelEvaluator::new(&cfg, FitMode::Coincidence, &lo, &hi, 6.0).unwrap();
        let values = ev.values(&truth).unwrap();
        let sigma: Vec<f64> = values.iter().map(|v| 1e-3 * v.max(0.01)).collect();
        let data = FitData {
            lo,
            hi,
            values,
            sigma,
        };
        let mut init = truth;
        init.p = 1.5;
        init.phi = -1.0;
        init.scale = 0.8;
        let r = fit(&data, &init, &FreeMask::shape(), &cfg, FitMode::Coincidence).unwrap();
        assert!((r.params.p - truth.p).abs() < 1e-4 * truth.p, "{:?}", r.params);
        assert!((r.params.phi - truth.phi).abs() < 1e-4 * truth.phi, "{:?}", r.params);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
        assert!(r.error("p").unwrap() > 0.0);
        assert!(r.error("dphi").is_none());
        let rep = r.report();
        for key in ["params", "errors", "chi2", "dof", "iterations"] {
            assert!(rep.get(key).is_some());
        }
    }

    #[test]
    fn data_validation() {
        assert!(FitData::from_points(&[], &[], &[]).is_err());
        assert!(FitData::from_points(&[1.0], &[1.0], &[0.0]).is_err());
        let mut p = FitParams::from_config(&default_config(Preset::Fig1a));
        p.f_s = 1.5;
        assert!(p.validate().is_err());
    }

    #[test]
    fn angle_wrapping() {
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-0.5) + 0.5).abs() < 1e-15);
        assert!((wrap_angle(7.0) - (7.0 - TAU)).abs() < 1e-12);
    }
}
