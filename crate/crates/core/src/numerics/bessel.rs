//! Bessel functions of integer order.
//!
//! `J_n` uses the ascending series for small arguments and Miller's
//! downward recurrence (normalized by `J_0 + 2 sum J_2k = 1`) elsewhere, so
//! that whole order sequences up to `|n| ~ 60` come out of a single sweep.

use super::NumericsError;

/// Below this argument the ascending series is used directly.
const SERIES_LIMIT: f64 = 2.0;
const RESCALE_AT: f64 = 1e250;

/// `J_order(x)` for any integer order and finite real `x`.
///
/// Negative orders follow `J_{-n}(x) = (-1)^n J_n(x)`.
pub fn bessel_j(order: i32, x: f64) -> f64 {
    let n = order.unsigned_abs() as usize;
    let odd = n % 2 == 1;
    let sign = if odd && ((order < 0) != (x < 0.0)) { -1.0 } else { 1.0 };
    let ax = x.abs();
    let value = if ax < SERIES_LIMIT {
        series_j(n, ax)
    } else {
        miller_sequence(n, ax)[n]
    };
    sign * value
}

/// `J_0(x) ..= J_{n_max}(x)` for `x >= 0`.
pub fn bessel_j_sequence(n_max: usize, x: f64) -> Vec<f64> {
    debug_assert!(x >= 0.0);
    if x < SERIES_LIMIT {
        (0..=n_max).map(|n| series_j(n, x)).collect()
    } else {
        miller_sequence(n_max, x)
    }
}

fn series_j(n: usize, x: f64) -> f64 {
    if x == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let half = 0.5 * x;
    // (x/2)^n / n!
    let mut lead = 1.0;
    for k in 1..=n {
        lead *= half / k as f64;
    }
    let q = -half * half;
    let mut term = 1.0;
    let mut sum = 1.0;
    for i in 1..200 {
        term *= q / (i as f64 * (n + i) as f64);
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    lead * sum
}

fn miller_sequence(n_max: usize, x: f64) -> Vec<f64> {
    let top = (n_max as f64).max(x);
    let mut start = (top + 30.0 + 12.0 * top.sqrt()) as usize;
    start += start % 2;

    let mut out = vec![0.0; n_max + 1];
    let mut upper = 0.0; // J_{k+1}
    let mut current = 1e-30; // J_k, arbitrary seed at k = start
    let mut even_sum = 0.0;
    let two_over_x = 2.0 / x;
    for k in (1..=start).rev() {
        let lower = k as f64 * two_over_x * current - upper;
        upper = current;
        current = lower;
        let idx = k - 1;
        if idx <= n_max {
            out[idx] = current;
        }
        if idx > 0 && idx % 2 == 0 {
            even_sum += 2.0 * current;
        }
        if current.abs() > RESCALE_AT {
            let s = 1.0 / RESCALE_AT;
            current *= s;
            upper *= s;
            even_sum *= s;
            out.iter_mut().for_each(|v| *v *= s);
        }
    }
    let norm = even_sum + current;
    out.iter_mut().for_each(|v| *v /= norm);
    out
}

/// Modified Bessel function `I_0(x)`.
pub fn bessel_i0(x: f64) -> Result<f64, NumericsError> {
    let ax = x.abs();
    if ax < 50.0 {
        return Ok(series_i0(ax));
    }
    let scaled = bessel_i0e(ax);
    let log_value = ax + scaled.ln();
    if log_value >= f64::MAX.ln() {
        return Err(NumericsError::Overflow {
            function: "bessel_i0",
            argument: x,
        });
    }
    let value = scaled * ax.exp();
    if value.is_finite() {
        Ok(value)
    } else {
        Err(NumericsError::Overflow {
            function: "bessel_i0",
            argument: x,
        })
    }
}

/// Exponentially scaled `e^{-|x|} I_0(x)`; finite for every finite `x`.
pub fn bessel_i0e(x: f64) -> f64 {
    let ax = x.abs();
    if ax < 50.0 {
        return series_i0(ax) * (-ax).exp();
    }
    // Hankel asymptotic expansion; at ax >= 50 the terms fall below 1e-17
    // well before the series starts to diverge.
    let z = 1.0 / (8.0 * ax);
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..30 {
        let odd = (2 * k - 1) as f64;
        term *= odd * odd * z / k as f64;
        sum += term;
        if term < 1e-17 {
            break;
        }
    }
    sum / (2.0 * std::f64::consts::PI * ax).sqrt()
}

fn series_i0(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..500 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

/// `j_k(y) = J_k(2 sqrt(y)) / y^{k/2}`, the kernel family of the absorber
/// response. The removable singularity at `y = 0` evaluates to `1/k!`.
pub fn scaled_j(k: u32, y: f64) -> f64 {
    debug_assert!(y >= 0.0);
    if y < 1.0 {
        scaled_series(k as usize, y)
    } else {
        bessel_j(k as i32, 2.0 * y.sqrt()) / y.powf(0.5 * k as f64)
    }
}

/// `j_0(y) ..= j_{k_max}(y)` in one pass.
pub fn scaled_j_sequence(k_max: usize, y: f64) -> Vec<f64> {
    if y < 1.0 {
        return (0..=k_max).map(|k| scaled_series(k, y)).collect();
    }
    let root = y.sqrt();
    let mut seq = bessel_j_sequence(k_max, 2.0 * root);
    let inv = 1.0 / root;
    let mut scale = 1.0;
    for v in seq.iter_mut() {
        *v *= scale;
        scale *= inv;
    }
    seq
}

// sum_i (-y)^i / (i! (k+i)!)
fn scaled_series(k: usize, y: f64) -> f64 {
    let mut lead = 1.0;
    for j in 1..=k {
        lead /= j as f64;
    }
    let mut term = lead;
    let mut sum = lead;
    for i in 1..200 {
        term *= -y / (i as f64 * (k + i) as f64);
        sum += term;
        if term.abs() < 1e-18 * lead {
            break;
        }
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent oracle: plain ascending series in extended summation
    // order, valid for moderate x where cancellation is mild.
    fn oracle_j(n: i32, x: f64) -> f64 {
        let m = n.unsigned_abs() as i32;
        let mut total = 0.0;
        for i in 0..120 {
            let mut t = if i % 2 == 0 { 1.0 } else { -1.0 };
            for j in 1..=i {
                t /= j as f64;
            }
            for j in 1..=(i + m) {
                t /= j as f64;
            }
            t *= (0.5 * x).powi(2 * i + m);
            total += t;
        }
        if n < 0 && m % 2 == 1 {
            -total
        } else {
            total
        }
    }

    #[test]
    fn identity_at_origin() {
        assert_eq!(bessel_j(0, 0.0), 1.0);
        assert_eq!(bessel_j(3, 0.0), 0.0);
    }

    #[test]
    fn negative_order_reflection() {
        for &p in &[0.3, 1.8, 3.1, 7.5] {
            assert_eq!(bessel_j(-1, p), -bessel_j(1, p));
            assert_eq!(bessel_j(-2, p), bessel_j(2, p));
        }
    }

    #[test]
    fn matches_series_oracle() {
        for n in -6..=12 {
            for &x in &[0.05, 0.5, 1.8, 2.0, 3.1, 4.2, 6.0] {
                let got = bessel_j(n, x);
                let want = oracle_j(n, x);
                assert!((got - want).abs() < 1e-13, "J_{n}({x}) = {got}, oracle {want}");
            }
        }
        assert!((bessel_j(1, 1.8) - 0.581_516_951_731_165).abs() < 1e-12);
    }

    #[test]
    fn tabulated_large_arguments() {
        assert!((bessel_j(0, 10.0) + 0.245_935_764_451_348_3).abs() < 1e-14);
        assert!((bessel_j(1, 10.0) - 0.043_472_746_168_861_44).abs() < 1e-14);
        assert!((bessel_j(0, 20.0) - 0.167_024_664_340_583_1).abs() < 1e-14);
    }

    #[test]
    fn recurrence_holds() {
        for k in 1..=10 {
            let mut x = 0.1;
            while x <= 20.0 {
                let lhs = bessel_j(k - 1, x) + bessel_j(k + 1, x);
                let rhs = 2.0 * k as f64 / x * bessel_j(k, x);
                assert!((lhs - rhs).abs() < 1e-10, "k={k} x={x}");
                x += 0.37;
            }
        }
    }

    #[test]
    fn comb_normalization() {
        for &p in &[0.0, 1.8, 3.1, 4.2] {
            let s: f64 = (-40..=40).map(|m| bessel_j(m, p).powi(2)).sum();
            assert!((s - 1.0).abs() < 1e-10, "p={p}: {s}");
        }
    }

    #[test]
    fn sequence_agrees_with_pointwise() {
        for &x in &[0.7, 2.5, 9.0, 25.0] {
            let seq = bessel_j_sequence(30, x);
            for (n, v) in seq.iter().enumerate() {
                assert!((v - bessel_j(n as i32, x)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn modified_bessel_values() {
        assert_eq!(bessel_i0(0.0).unwrap(), 1.0);
        // Oracle values from the positive-term series evaluated in the test.
        let oracle = |x: f64| -> f64 {
            (0..200)
                .map(|k| {
                    let mut t = 1.0;
                    for j in 1..=k {
                        t *= 0.25 * x * x / (j as f64 * j as f64);
                    }
                    t
                })
                .sum()
        };
        assert!((bessel_i0(2.6).unwrap() - oracle(2.6)).abs() < 1e-12);
        assert!((bessel_i0(2.6).unwrap() - 3.5533).abs() < 1e-4);
        assert!((bessel_i0(6.0).unwrap() - 67.234).abs() < 1e-3);
        assert!(((-2.6f64).exp() * bessel_i0(2.6).unwrap() - 0.264).abs() < 1e-3);
    }

    #[test]
    fn modified_bessel_scaled_is_continuous_across_branches() {
        let series = series_i0(50.0) * (-50.0f64).exp();
        let asymptotic = bessel_i0e(50.0);
        assert!((series - asymptotic).abs() < 1e-14 * series);
    }

    #[test]
    fn modified_bessel_overflow() {
        assert!(bessel_i0(800.0).is_err());
        assert!(bessel_i0(700.0).is_ok());
    }

    #[test]
    fn scaled_kernel_values() {
        assert_eq!(scaled_j(1, 0.0), 1.0);
        assert_eq!(scaled_j(2, 0.0), 0.5);
        assert!((scaled_j(1, 1.0) - bessel_j(1, 2.0)).abs() < 1e-15);
        assert!((scaled_j(1, 1.0) - 0.576_724_807_756_873_4).abs() < 1e-14);
        // continuity across the series/recurrence switch
        for k in 0..8 {
            let a = scaled_j(k, 1.0 - 1e-12);
            let b = scaled_j(k, 1.0);
            assert!((a - b).abs() < 1e-11, "k={k}");
        }
        let seq = scaled_j_sequence(10, 4.7);
        for (k, v) in seq.iter().enumerate() {
            assert!((v - scaled_j(k as u32, 4.7)).abs() < 1e-14);
        }
    }
}
