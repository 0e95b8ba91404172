//! Quadrature for complex-valued integrands.
//!
//! [`integrate_complex`] is a globally adaptive Gauss-Kronrod (7/15) scheme in
//! the style of QUADPACK's QAG. [`CumulativeRule`] is a fixed Gauss-Legendre
//! panel rule that also returns running integrals at its nodes, used where an
//! inner integral has to be carried along an outer one.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::NumericsError;

/// Tolerances and subdivision limit for adaptive quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_depth: u32,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-9,
            max_depth: 40,
        }
    }
}

impl QuadratureSpec {
    pub fn new(abs_tol: f64, rel_tol: f64, max_depth: u32) -> Result<Self, NumericsError> {
        if !(abs_tol > 0.0) || !(rel_tol > 0.0) || max_depth < 1 {
            return Err(NumericsError::InvalidSpec(format!(
                "abs_tol={abs_tol}, rel_tol={rel_tol}, max_depth={max_depth}"
            )));
        }
        Ok(Self {
            abs_tol,
            rel_tol,
            max_depth,
        })
    }
}

// Kronrod 15-point abscissae (non-negative half) and weights; every second
// node carries the embedded 7-point Gauss rule.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

struct Segment {
    lo: f64,
    hi: f64,
    value: Complex64,
    error: f64,
    depth: u32,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gauss_kronrod<F: Fn(f64) -> Complex64>(f: &F, lo: f64, hi: f64) -> (Complex64, f64) {
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    let mut abs_sum = fc.norm() * WGK[7];
    let mut values = [(Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)); 7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        values[j] = (f1, f2);
        kronrod += (f1 + f2) * WGK[j];
        abs_sum += (f1.norm() + f2.norm()) * WGK[j];
        if j % 2 == 1 {
            gauss += (f1 + f2) * WG[j / 2];
        }
    }
    let mean = kronrod * 0.5;
    let mut asc = (fc - mean).norm() * WGK[7];
    for j in 0..7 {
        asc += ((values[j].0 - mean).norm() + (values[j].1 - mean).norm()) * WGK[j];
    }
    let result = kronrod * half;
    let abs_int = abs_sum * half.abs();
    let asc_int = asc * half.abs();
    let mut err = ((kronrod - gauss) * half).norm();
    if asc_int != 0.0 && err != 0.0 {
        err = asc_int * (200.0 * err / asc_int).powf(1.5).min(1.0);
    }
    if abs_int > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * abs_int);
    }
    (result, err)
}

/// Integrate `f` over `[a, b]` to within `spec`.
pub fn integrate_complex<F: Fn(f64) -> Complex64>(
    f: F,
    a: f64,
    b: f64,
    spec: &QuadratureSpec,
) -> Result<Complex64, NumericsError> {
    integrate_complex_panels(f, &[a, b], spec)
}

/// Integrate `f` over the span of `breaks`, seeding the adaptive scheme with
/// the given panels (useful when the oscillation period is known).
pub fn integrate_complex_panels<F: Fn(f64) -> Complex64>(
    f: F,
    breaks: &[f64],
    spec: &QuadratureSpec,
) -> Result<Complex64, NumericsError> {
    if breaks.len() < 2 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let (a, b) = (breaks[0], breaks[breaks.len() - 1]);
    if !(a <= b) {
        return Err(NumericsError::InvalidInterval { a, b });
    }
    if a == b {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let mut heap = BinaryHeap::with_capacity(4 * breaks.len());
    let mut total = Complex64::new(0.0, 0.0);
    let mut total_err = 0.0;
    for w in breaks.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let (value, error) = gauss_kronrod(&f, w[0], w[1]);
        if !value.re.is_finite() || !value.im.is_finite() {
            return Err(NumericsError::NonFinite { at: 0.5 * (w[0] + w[1]) });
        }
        total += value;
        total_err += error;
        heap.push(Segment {
            lo: w[0],
            hi: w[1],
            value,
            error,
            depth: 0,
        });
    }

    while total_err > spec.abs_tol.max(spec.rel_tol * total.norm()) {
        let worst = match heap.pop() {
            Some(s) => s,
            None => break,
        };
        if worst.depth >= spec.max_depth {
            return Err(NumericsError::NonConvergence {
                a,
                b,
                estimate: total_err,
                at: 0.5 * (worst.lo + worst.hi),
            });
        }
        let mid = 0.5 * (worst.lo + worst.hi);
        let (v1, e1) = gauss_kronrod(&f, worst.lo, mid);
        let (v2, e2) = gauss_kronrod(&f, mid, worst.hi);
        if !(v1 + v2).re.is_finite() || !(v1 + v2).im.is_finite() {
            return Err(NumericsError::NonFinite { at: mid });
        }
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.error;
        heap.push(Segment {
            lo: worst.lo,
            hi: mid,
            value: v1,
            error: e1,
            depth: worst.depth + 1,
        });
        heap.push(Segment {
            lo: mid,
            hi: worst.hi,
            value: v2,
            error: e2,
            depth: worst.depth + 1,
        });
    }
    // Re-sum to shed the drift of the running updates.
    Ok(heap.iter().map(|s| s.value).sum())
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn legendre_values(n_max: usize, x: f64) -> Vec<f64> {
    let mut p = vec![0.0; n_max + 2];
    p[0] = 1.0;
    if n_max + 1 >= 1 {
        p[1] = x;
    }
    for k in 2..=n_max + 1 {
        p[k] = ((2 * k - 1) as f64 * x * p[k - 1] - (k - 1) as f64 * p[k - 2]) / k as f64;
    }
    p
}

/// Gauss-Legendre panel rule with a spectral integration matrix.
///
/// On a panel `[lo, lo + h]` with nodes `x_i`, `sum_l running[i][l] f(x_l)`
/// approximates `int_lo^{x_i} f` exactly for polynomials of degree `< n`.
#[derive(Debug, Clone)]
pub struct CumulativeRule {
    /// Nodes mapped to `[0, 1]`.
    pub nodes: Vec<f64>,
    /// Weights for `[0, 1]` (they sum to one).
    pub weights: Vec<f64>,
    /// Running-integral matrix for `[0, 1]`.
    pub running: Vec<Vec<f64>>,
}

impl CumulativeRule {
    pub fn new(n: usize) -> Self {
        let (x, w) = gauss_legendre(n);
        let basis: Vec<Vec<f64>> = x.iter().map(|&xl| legendre_values(n, xl)).collect();
        let mut running = vec![vec![0.0; n]; n];
        for (i, &xi) in x.iter().enumerate() {
            let pi = legendre_values(n, xi);
            // int_{-1}^{xi} P_k = (P_{k+1} - P_{k-1}) / (2k+1), and xi + 1 for k = 0
            let integrals: Vec<f64> = (0..n)
                .map(|k| {
                    if k == 0 {
                        xi + 1.0
                    } else {
                        (pi[k + 1] - pi[k - 1]) / (2 * k + 1) as f64
                    }
                })
                .collect();
            for l in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += (2 * k + 1) as f64 * 0.5 * basis[l][k] * integrals[k];
                }
                // Lagrange basis l_l(x) = w_l sum_k (2k+1)/2 P_k(x_l) P_k(x);
                // rescale from [-1, 1] to [0, 1].
                running[i][l] = 0.5 * w[l] * acc;
            }
        }
        Self {
            nodes: x.iter().map(|v| 0.5 * (v + 1.0)).collect(),
            weights: w.iter().map(|v| 0.5 * v).collect(),
            running,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}
