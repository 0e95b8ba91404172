//! Monte Carlo of the two counting schemes, histogramming and
//! phase-jitter averaging.
//!
//! Delays are drawn by rejection against the exponential decay of the
//! incident packet. The exact exit amplitude at an arbitrary delay and
//! emission phase is assembled from a dense table of comb kernels, so the
//! phase spread of the selection window is sampled continuously.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::averaging::CountTrace;
use crate::model::{ns_to_us, PhysicsConfig};
use crate::numerics::bessel_j_sequence;
use crate::transmission::CombPropagator;
use crate::{Error, Result};

/// Default detector channel, ns.
pub const DEFAULT_CHANNEL_NS: f64 = 8.0;
/// Default node count of the jitter average.
pub const DEFAULT_JITTER_NODES: usize = 33;
/// Events per random stream. Stream `c` of seed `s` always produces the
/// same events regardless of the worker count.
pub const CHUNK_EVENTS: usize = 1 << 14;
/// Spacing of the kernel table used by the sampler, ns.
pub const KERNEL_STEP_NS: f64 = 0.1;
/// Delays whose decay weight is below this are never drawn from the table.
const TAIL_WEIGHT: f64 = 1e-9;
/// Comb orders with `|J_k(p)|` below this are left out of the sampler.
const ORDER_CUTOFF: f64 = 1e-16;
/// Expected count a pooled group must reach.
pub const POOL_MIN_EXPECTED: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AcquisitionMode {
    /// Delay after the start signal, for starts selected around a fixed
    /// vibration phase.
    Coincidence,
    /// Detection time from a fixed vibration-phase origin, starts random.
    FixedStart,
}

impl AcquisitionMode {
    pub fn name(self) -> &'static str {
        match self {
            AcquisitionMode::Coincidence => "coincidence",
            AcquisitionMode::FixedStart => "fixed-start",
        }
    }
}

impl FromStr for AcquisitionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "coincidence" => Ok(Self::Coincidence),
            "fixed-start" | "fixed_start" | "fixedstart" => Ok(Self::FixedStart),
            _ => Err(Error::Invalid(format!("unknown acquisition mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionConfig {
    pub mode: AcquisitionMode,
    /// Channel width, ns.
    pub channel_ns: f64,
    /// Start-selection window `dt` around the phase-locked instants, ns.
    pub window_ns: f64,
    /// Phase jitter `dphi`, rad.
    pub dphi: f64,
    pub events: u64,
    pub seed: u64,
    /// Recorded range, ns.
    pub start_ns: f64,
    pub stop_ns: f64,
}

impl AcquisitionConfig {
    pub fn new(mode: AcquisitionMode, start_ns: f64, stop_ns: f64, events: u64, seed: u64) -> Self {
        Self {
            mode,
            channel_ns: DEFAULT_CHANNEL_NS,
            window_ns: 0.0,
            dphi: 0.0,
            events,
            seed,
            start_ns,
            stop_ns,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.channel_ns > 0.0) || !self.channel_ns.is_finite() {
            return Err(Error::Invalid(format!("channel width must be > 0, got {}", self.channel_ns)));
        }
        if !(self.window_ns >= 0.0) || !self.window_ns.is_finite() {
            return Err(Error::Invalid(format!("selection window must be >= 0, got {}", self.window_ns)));
        }
        if !(0.0..=TAU).contains(&self.dphi) {
            return Err(Error::Invalid(format!("phase jitter must lie in [0, 2pi], got {}", self.dphi)));
        }
        if !(self.stop_ns > self.start_ns) || !self.start_ns.is_finite() || !self.stop_ns.is_finite() {
            return Err(Error::Invalid(format!(
                "recorded range [{}, {}] is empty",
                self.start_ns, self.stop_ns
            )));
        }
        if self.mode == AcquisitionMode::Coincidence && self.start_ns < 0.0 {
            return Err(Error::Invalid("coincidence delays start at 0 ns".into()));
        }
        Ok(())
    }

    /// Total phase spread `Omega dt + dphi` seen by the selected starts.
    pub fn phase_spread(&self, cfg: &PhysicsConfig) -> f64 {
        cfg.rates().omega * ns_to_us(self.window_ns) + self.dphi
    }
}

/// Nodes and weights of the uniform phase average over
/// `[phi0 - dphi/2, phi0 + dphi/2]` by the trapezoid rule.
pub fn jitter_nodes(phi0: f64, dphi: f64, n_nodes: usize) -> Vec<(f64, f64)> {
    if dphi == 0.0 || n_nodes <= 1 {
        return vec![(phi0, 1.0)];
    }
    let intervals = (n_nodes - 1) as f64;
    (0..n_nodes)
        .map(|j| {
            let x = phi0 - dphi / 2.0 + dphi * j as f64 / intervals;
            let w = if j == 0 || j == n_nodes - 1 { 0.5 } else { 1.0 } / intervals;
            (x, w)
        })
        .collect()
}

/// Uniform average of `model(t, phi)` over the jitter interval around `phi0`.
pub fn jitter_average<F>(model: F, phi0: f64, dphi: f64, n_nodes: usize) -> impl Fn(f64) -> f64
where
    F: Fn(f64, f64) -> f64,
{
    let nodes = jitter_nodes(phi0, dphi, n_nodes);
    move |t| nodes.iter().map(|&(phi, w)| w * model(t, phi)).sum()
}

/// Exact `|a_ext|^2 e^{2 gamma_s tau}` at arbitrary delay and emission
/// phase, from linearly interpolated comb kernels.
#[derive(Debug, Clone)]
pub struct DelaySampler {
    step_ns: f64,
    omega_ns: f64,
    two_gamma_ns: f64,
    p: f64,
    f_s: f64,
    k_lo: i32,
    coeff: Vec<f64>,
    /// `rows[i][k - k_lo]` at delay `i * step_ns`.
    rows: Vec<Vec<Complex64>>,
    bound: f64,
}

impl DelaySampler {
    pub fn new(cfg: &PhysicsConfig) -> Result<Self> {
        cfg.validate()?;
        let r = cfg.rates();
        let two_gamma_ns = 2.0 * r.gamma_s * 1e-3;
        if !(two_gamma_ns > 0.0) {
            return Err(Error::Invalid("source decay rate must be positive for a normalizable density".into()));
        }
        let p = cfg.vibration.p;
        let span = -TAIL_WEIGHT.ln() / two_gamma_ns;
        let n = (span / KERNEL_STEP_NS).ceil() as usize + 1;
        let times: Vec<f64> = (0..n).map(|i| i as f64 * KERNEL_STEP_NS).collect();
        let bank = CombPropagator::new(cfg, &times, p)?;
        let width = bank.kernels_at(0).len() as i32;
        let (bank_lo, bank_hi) = (bank.lowest_order(), bank.lowest_order() + width - 1);
        let top = bank_lo.unsigned_abs().max(bank_hi.unsigned_abs()) as usize;
        let j = bessel_j_sequence(top, p);
        let jk = |k: i32| {
            let v = j[k.unsigned_abs() as usize];
            if k < 0 && k % 2 != 0 {
                -v
            } else {
                v
            }
        };
        let kept: Vec<i32> = (bank_lo..=bank_hi).filter(|&k| jk(k).abs() > ORDER_CUTOFF).collect();
        let (k_lo, k_hi) = match (kept.first(), kept.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => (0, 0),
        };
        let coeff: Vec<f64> = (k_lo..=k_hi).map(jk).collect();
        let off = (k_lo - bank_lo) as usize;
        let len = coeff.len();
        let rows: Vec<Vec<Complex64>> = (0..n).map(|i| bank.kernels_at(i)[off..off + len].to_vec()).collect();
        let mut sup = vec![0.0f64; len];
        for row in &rows {
            for (s, k) in sup.iter_mut().zip(row) {
                *s = s.max(k.norm());
            }
        }
        let amp: f64 = 1.0 + coeff.iter().zip(&sup).map(|(c, s)| c.abs() * s).sum::<f64>();
        let bound = amp * amp;
        if !bound.is_finite() {
            return Err(Error::Invalid("exit density is not normalizable".into()));
        }
        Ok(Self {
            step_ns: KERNEL_STEP_NS,
            omega_ns: r.omega * 1e-3,
            two_gamma_ns,
            p,
            f_s: cfg.source.f_s,
            k_lo,
            coeff,
            rows,
            bound,
        })
    }

    /// Upper bound of [`Self::envelope_normalized`] over all delays and phases.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// `|a_ext(tau)|^2 e^{2 gamma_s tau}` for emission phase `phi`.
    pub fn envelope_normalized(&self, tau_ns: f64, phi: f64) -> f64 {
        let x = (tau_ns / self.step_ns).max(0.0);
        let last = self.rows.len() - 1;
        let (i, f) = if x >= last as f64 {
            (last, 0.0)
        } else {
            (x as usize, x.fract())
        };
        let lo = &self.rows[i];
        let hi = &self.rows[(i + 1).min(last)];
        let theta = self.omega_ns * tau_ns + phi;
        let step = Complex64::from_polar(1.0, theta);
        let mut rot = Complex64::from_polar(1.0, self.k_lo as f64 * theta);
        let mut scattered = Complex64::new(0.0, 0.0);
        for ((c, a), b) in self.coeff.iter().zip(lo).zip(hi) {
            scattered += *c * rot * (a * (1.0 - f) + b * f);
            rot *= step;
        }
        (Complex64::from_polar(1.0, self.p * theta.sin()) - scattered).norm_sqr()
    }

    fn draw_delay(&self, rng: &mut ChaCha8Rng) -> f64 {
        -(1.0 - rng.random::<f64>()).ln() / self.two_gamma_ns
    }

    fn accept(&self, rng: &mut ChaCha8Rng, tau_ns: f64, phi: f64) -> bool {
        let mixed_bound = self.f_s * self.bound + (1.0 - self.f_s);
        let u = rng.random::<f64>() * mixed_bound;
        if u < 1.0 - self.f_s {
            return true;
        }
        u < self.f_s * self.envelope_normalized(tau_ns, phi) + (1.0 - self.f_s)
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn sample_chunk(
    sampler: &DelaySampler,
    cfg: &PhysicsConfig,
    acq: &AcquisitionConfig,
    chunk: u64,
    count: usize,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(acq.seed);
    rng.set_stream(chunk);
    let omega = sampler.omega_ns;
    let phi = cfg.vibration.phi;
    let half_window = acq.window_ns / 2.0;
    let half_jitter = acq.dphi / 2.0;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let tau = sampler.draw_delay(&mut rng);
        match acq.mode {
            AcquisitionMode::Coincidence => {
                let shift = omega * uniform(&mut rng, -half_window, half_window);
                let emit = phi + shift + uniform(&mut rng, -half_jitter, half_jitter);
                if sampler.accept(&mut rng, tau, emit) {
                    out.push(tau);
                }
            }
            AcquisitionMode::FixedStart => {
                let t = uniform(&mut rng, acq.start_ns, acq.stop_ns);
                let detect = omega * t + phi + uniform(&mut rng, -half_jitter, half_jitter);
                if sampler.accept(&mut rng, tau, detect - omega * tau) {
                    out.push(t);
                }
            }
        }
    }
    out
}

/// Draw `acq.events` detection delays (coincidence) or detection times
/// (fixed start), in ns.
///
/// Output depends only on the configs and the seed; worker count and
/// scheduling do not matter.
pub fn sample_events(cfg: &PhysicsConfig, acq: &AcquisitionConfig) -> Result<Vec<f64>> {
    acq.validate()?;
    let sampler = DelaySampler::new(cfg)?;
    sample_events_with(&sampler, cfg, acq)
}

/// As [`sample_events`] with a prebuilt sampler for `cfg`.
pub fn sample_events_with(sampler: &DelaySampler, cfg: &PhysicsConfig, acq: &AcquisitionConfig) -> Result<Vec<f64>> {
    acq.validate()?;
    let total = acq.events as usize;
    let chunks = total.div_ceil(CHUNK_EVENTS);
    let parts: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = CHUNK_EVENTS.min(total - c * CHUNK_EVENTS);
            sample_chunk(sampler, cfg, acq, c as u64, count)
        })
        .collect();
    Ok(parts.concat())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventHistogram {
    /// Channel edges, ns; one more than `counts`.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
    pub total: u64,
    pub mode: AcquisitionMode,
    pub seed: u64,
    pub dphi: f64,
    pub channel_ns: f64,
}

impl EventHistogram {
    /// Empty histogram with the channels of `acq`.
    pub fn empty(acq: &AcquisitionConfig) -> Self {
        let n = (((acq.stop_ns - acq.start_ns) / acq.channel_ns) * (1.0 + 1e-12)).floor().max(0.0) as usize;
        let edges = (0..=n).map(|i| acq.start_ns + i as f64 * acq.channel_ns).collect();
        Self {
            edges,
            counts: vec![0; n],
            underflow: 0,
            overflow: 0,
            total: 0,
            mode: acq.mode,
            seed: acq.seed,
            dphi: acq.dphi,
            channel_ns: acq.channel_ns,
        }
    }

    pub fn channels(&self) -> usize {
        self.counts.len()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Counts inside the channel range.
    pub fn in_range(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn add(&mut self, t_ns: f64) {
        self.total += 1;
        let start = self.edges[0];
        if t_ns < start || self.counts.is_empty() {
            self.underflow += u64::from(t_ns < start);
            self.overflow += u64::from(t_ns >= start);
            return;
        }
        let i = ((t_ns - start) / self.channel_ns).floor() as usize;
        if i >= self.counts.len() || t_ns >= *self.edges.last().unwrap() {
            self.overflow += 1;
        } else {
            self.counts[i] += 1;
        }
    }

    /// Channel-wise sum; both histograms must share their channels.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.edges != other.edges {
            return Err(Error::Invalid("histograms have different channels".into()));
        }
        let mut out = self.clone();
        for (a, b) in out.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        out.underflow += other.underflow;
        out.overflow += other.overflow;
        out.total += other.total;
        Ok(out)
    }

    /// CSV with header `channel_start_ns,channel_end_ns,counts`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("channel_start_ns,channel_end_ns,counts\n");
        for (w, c) in self.edges.windows(2).zip(&self.counts) {
            let _ = writeln!(s, "{:.16e},{:.16e},{}", w[0], w[1], c);
        }
        s
    }

    /// Parse [`Self::to_csv`] output. Metadata not present in the CSV is
    /// filled from `template`.
    pub fn from_csv(text: &str, template: &AcquisitionConfig) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Invalid("empty histogram CSV".into()))?;
        if header.trim() != "channel_start_ns,channel_end_ns,counts" {
            return Err(Error::Invalid(format!("unexpected histogram header `{header}`")));
        }
        let mut edges = Vec::new();
        let mut counts = Vec::new();
        for (n, line) in lines.enumerate() {
            let bad = |what: &str| Error::Invalid(format!("histogram row {}: bad {what}", n + 2));
            let mut f = line.split(',');
            let lo: f64 = f.next().and_then(|v| v.trim().parse().ok()).ok_or_else(|| bad("start"))?;
            let hi: f64 = f.next().and_then(|v| v.trim().parse().ok()).ok_or_else(|| bad("end"))?;
            let c: u64 = f.next().and_then(|v| v.trim().parse().ok()).ok_or_else(|| bad("count"))?;
            if let Some(&prev) = edges.last() {
                if prev != lo {
                    return Err(bad("channel continuity"));
                }
            } else {
                edges.push(lo);
            }
            edges.push(hi);
            counts.push(c);
        }
        if counts.is_empty() {
            return Err(Error::Invalid("histogram CSV has no channels".into()));
        }
        let channel_ns = edges[1] - edges[0];
        let total = counts.iter().sum();
        Ok(Self {
            edges,
            counts,
            underflow: 0,
            overflow: 0,
            total,
            mode: template.mode,
            seed: template.seed,
            dphi: template.dphi,
            channel_ns,
        })
    }

    /// JSON mirror of the CSV with acquisition metadata.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "mode": self.mode.name(),
            "seed": self.seed,
            "dphi": self.dphi,
            "channel_ns": self.channel_ns,
            "total": self.total,
            "underflow": self.underflow,
            "overflow": self.overflow,
            "channel_start_ns": &self.edges[..self.edges.len().saturating_sub(1)],
            "channel_end_ns": self.edges.get(1..).unwrap_or(&[]),
            "counts": self.counts,
        })
    }
}

/// Bin `events` into the channels of `acq`.
pub fn histogram(events: &[f64], acq: &AcquisitionConfig) -> EventHistogram {
    let mut h = EventHistogram::empty(acq);
    for &t in events {
        h.add(t);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodnessOfFit {
    pub chi2: f64,
    pub dof: usize,
    /// Channels compared, as indices into the histogram.
    pub channels: Vec<usize>,
    /// Expected counts per compared channel.
    pub expected: Vec<f64>,
    /// `(observed - expected) / sqrt(expected)` per compared channel.
    pub residuals: Vec<f64>,
    /// Number of pooled groups entering `chi2`.
    pub groups: usize,
}

impl GoodnessOfFit {
    pub fn reduced(&self) -> f64 {
        self.chi2 / self.dof.max(1) as f64
    }
}

/// Integral of the piecewise-linear interpolant of `(times, values)` over
/// `[a, b]`, which must lie inside the sampled range.
pub fn integrate_trace(times: &[f64], values: &[f64], a: f64, b: f64) -> f64 {
    let n = times.len();
    if n < 2 || b <= a {
        return 0.0;
    }
    let lerp = |i: usize, t: f64| {
        let (t0, t1) = (times[i], times[i + 1]);
        values[i] + (values[i + 1] - values[i]) * (t - t0) / (t1 - t0)
    };
    let first = times.partition_point(|&t| t <= a).saturating_sub(1).min(n - 2);
    let mut acc = 0.0;
    let mut i = first;
    while i < n - 1 && times[i] < b {
        let lo = a.max(times[i]);
        let hi = b.min(times[i + 1]);
        if hi > lo {
            acc += 0.5 * (lerp(i, lo) + lerp(i, hi)) * (hi - lo);
        }
        i += 1;
    }
    acc
}

/// Pearson chi-square of `hist` against `trace` integrated per channel and
/// scaled to the observed total. Adjacent channels are pooled until each
/// group expects at least five counts.
pub fn compare_to_theory(hist: &EventHistogram, trace: &CountTrace) -> Result<GoodnessOfFit> {
    let times = trace.times();
    let (lo, hi) = match (times.first(), times.last()) {
        (Some(&a), Some(&b)) if b > a => (a, b),
        _ => return Err(Error::Invalid("theory trace has no extent".into())),
    };
    let eps = 1e-9 * (hi - lo);
    let channels: Vec<usize> = (0..hist.channels())
        .filter(|&i| hist.edges[i] >= lo - eps && hist.edges[i + 1] <= hi + eps)
        .collect();
    if channels.is_empty() {
        return Err(Error::Invalid("histogram and theory trace do not overlap".into()));
    }
    let weights: Vec<f64> = channels
        .iter()
        .map(|&i| integrate_trace(&times, &trace.values, hist.edges[i].max(lo), hist.edges[i + 1].min(hi)))
        .collect();
    let observed: Vec<f64> = channels.iter().map(|&i| hist.counts[i] as f64).collect();
    let n_obs: f64 = observed.iter().sum();
    let w_sum: f64 = weights.iter().sum();
    if !(w_sum > 0.0) || n_obs == 0.0 {
        return Err(Error::Invalid("no counts or no theory weight in the overlap".into()));
    }
    let expected: Vec<f64> = weights.iter().map(|w| n_obs * w / w_sum).collect();
    let residuals = observed
        .iter()
        .zip(&expected)
        .map(|(o, e)| if *e > 0.0 { (o - e) / e.sqrt() } else { 0.0 })
        .collect();

    let mut groups: Vec<(f64, f64)> = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (o, e) in observed.iter().zip(&expected) {
        o_acc += o;
        e_acc += e;
        if e_acc >= POOL_MIN_EXPECTED {
            groups.push((o_acc, e_acc));
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if e_acc > 0.0 || o_acc > 0.0 {
        match groups.last_mut() {
            Some(g) => {
                g.0 += o_acc;
                g.1 += e_acc;
            }
            None => groups.push((o_acc, e_acc)),
        }
    }
    let chi2 = groups
        .iter()
        .map(|(o, e)| if *e > 0.0 { (o - e).powi(2) / e } else { 0.0 })
        .sum();
    Ok(GoodnessOfFit {
        chi2,
        dof: groups.len().saturating_sub(1),
        channels,
        expected,
        residuals,
        groups: groups.len(),
    })
}

/// Kolmogorov-Smirnov distance between the empirical distribution of
/// `samples` and `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic critical value of `D sqrt(N)` at significance `alpha`.
pub fn ks_critical(alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt()
}
