//! Bracketed root finding for real functions.

use super::NumericsError;

/// Default bracket scan density when the caller has no better estimate.
pub const DEFAULT_SAMPLES: usize = 4000;

/// Sign-change roots of `g` in `[a, b]`, checked against `n_expected`.
pub fn find_roots<G: Fn(f64) -> f64>(
    g: G,
    a: f64,
    b: f64,
    n_expected: usize,
) -> Result<Vec<f64>, NumericsError> {
    let roots = find_roots_sampled(g, a, b, DEFAULT_SAMPLES)?;
    if roots.len() != n_expected {
        return Err(NumericsError::RootCount {
            expected: n_expected,
            found: roots.len(),
            roots,
        });
    }
    Ok(roots)
}

/// All sign-change roots of `g` in `[a, b]`, bracketed on `samples`
/// uniform intervals and refined with the Illinois variant of regula falsi.
///
/// A sample that is exactly zero counts as a root; roots that touch zero
/// without changing sign are not reported.
pub fn find_roots_sampled<G: Fn(f64) -> f64>(
    g: G,
    a: f64,
    b: f64,
    samples: usize,
) -> Result<Vec<f64>, NumericsError> {
    if !(a.is_finite() && b.is_finite()) || a > b {
        return Err(NumericsError::InvalidInterval { a, b });
    }
    let samples = samples.max(1);
    let h = (b - a) / samples as f64;
    let mut roots = Vec::new();
    let mut x0 = a;
    let mut g0 = g(a);
    if g0 == 0.0 {
        roots.push(a);
    }
    for i in 1..=samples {
        let x1 = if i == samples { b } else { a + i as f64 * h };
        let g1 = g(x1);
        if !g1.is_finite() {
            return Err(NumericsError::NonFinite { at: x1 });
        }
        if g1 == 0.0 {
            roots.push(x1);
        } else if g0 != 0.0 && (g0 < 0.0) != (g1 < 0.0) {
            roots.push(refine(&g, x0, x1, g0, g1));
        }
        x0 = x1;
        g0 = g1;
    }
    Ok(roots)
}

fn refine<G: Fn(f64) -> f64>(g: &G, mut lo: f64, mut hi: f64, mut glo: f64, mut ghi: f64) -> f64 {
    let mut side = 0i8;
    for _ in 0..200 {
        let x = (lo * ghi - hi * glo) / (ghi - glo);
        let x = if x > lo && x < hi { x } else { 0.5 * (lo + hi) };
        let gx = g(x);
        if gx == 0.0 {
            return x;
        }
        if (gx < 0.0) == (glo < 0.0) {
            lo = x;
            glo = gx;
            if side == -1 {
                ghi *= 0.5;
            }
            side = -1;
        } else {
            hi = x;
            ghi = gx;
            if side == 1 {
                glo *= 0.5;
            }
            side = 1;
        }
        if hi - lo <= 1e-14 * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
    }
    if glo.abs() < ghi.abs() {
        lo
    } else {
        hi
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn single_linear_root() {
        let r = find_roots(|x| x - PI, 0.0, 2.0 * PI, 1).unwrap();
        assert!((r[0] - PI).abs() < 1e-14);
    }

    #[test]
    fn no_root_without_sign_change() {
        let r = find_roots(f64::sin, 0.1, 3.0, 0).unwrap();
        assert!(r.is_empty());
    }

    #[test]
    fn half_angle_pulses_of_second_sideband() {
        // cos(psi/2) with psi = 2x - 3.1 sin x vanishes where psi = pi and 3 pi.
        let g = |x: f64| (0.5 * (2.0 * x - 3.1 * x.sin())).cos();
        let r = find_roots(g, 0.0, 2.0 * PI, 2).unwrap();
        // dense-grid oracle
        let n = 2_000_000;
        let mut oracle = Vec::new();
        let mut prev = g(0.0);
        for i in 1..=n {
            let x = 2.0 * PI * i as f64 / n as f64;
            let v = g(x);
            if (v < 0.0) != (prev < 0.0) {
                oracle.push(x);
            }
            prev = v;
        }
        assert_eq!(oracle.len(), 2);
        for (a, b) in r.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-5);
        }
        assert!((r[0] - 2.50).abs() < 0.01 && (r[1] - 3.78).abs() < 0.01);
        assert!((r[0] + r[1] - 2.0 * PI).abs() < 1e-10);
    }

    #[test]
    fn count_mismatch_is_reported() {
        let r = find_roots(f64::sin, 0.5, 10.0, 1);
        assert!(matches!(r, Err(NumericsError::RootCount { expected: 1, found: 3, .. })));
    }

    #[test]
    fn residual_is_small() {
        let g = |x: f64| 2.0 * x - 3.1 * x.sin() - PI;
        let r = find_roots_sampled(g, 0.0, 2.0 * PI, 400).unwrap();
        for x in r {
            assert!(g(x).abs() < 1e-8 * 10.0);
        }
    }
}
