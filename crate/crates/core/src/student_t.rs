//! Student's t distribution through the regularized incomplete beta function.

use crate::error::{Error, Result};

const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + 7.5;
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// CDF of Student's t with `df` degrees of freedom.
pub fn t_cdf(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    let tail = 0.5 * inc_beta(0.5 * df, 0.5, x);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// One-sided critical value: the `t` with `CDF(t) = alpha`.
///
/// Solved by bracketing and bisection on [`t_cdf`].
pub fn t_critical(alpha: f64, df: u32) -> Result<f64> {
    if df < 1 {
        return Err(Error::InvalidArgument("degrees of freedom must be >= 1".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), found {alpha}")));
    }
    if alpha == 0.5 {
        return Ok(0.0);
    }
    let nu = f64::from(df);
    // symmetric: solve for the upper tail and mirror
    let p = alpha.max(1.0 - alpha);
    let mut lo = 0.0;
    let mut hi = 1.0;
    while t_cdf(hi, nu) < p {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::Numerical(format!("t quantile for alpha={alpha}, df={df} out of range")));
        }
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if t_cdf(mid, nu) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi.max(1.0) {
            break;
        }
    }
    let t = 0.5 * (lo + hi);
    Ok(if alpha > 0.5 { t } else { -t })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use statrs::distribution::{ContinuousCDF, StudentsT};

    #[test]
    fn ln_gamma_values() {
        assert_abs_diff_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(ln_gamma(0.5), std::f64::consts::PI.sqrt().ln(), epsilon = 1e-13);
        assert_abs_diff_eq!(ln_gamma(10.0), 362_880f64.ln(), epsilon = 1e-11);
    }

    #[test]
    fn inc_beta_closed_forms() {
        // I_x(1, 1) = x, I_x(a, 1) = x^a
        for x in [0.1, 0.37, 0.9] {
            assert_abs_diff_eq!(inc_beta(1.0, 1.0, x), x, epsilon = 1e-13);
            assert_abs_diff_eq!(inc_beta(3.0, 1.0, x), x.powi(3), epsilon = 1e-13);
        }
    }

    #[test]
    fn cauchy_and_df2_closed_forms() {
        for p in [0.6, 0.9, 0.99, 0.999] {
            let cauchy = (std::f64::consts::PI * (p - 0.5)).tan();
            assert_abs_diff_eq!(t_critical(p, 1).unwrap(), cauchy, epsilon = 1e-6 * cauchy.max(1.0));
            let df2 = (2.0 * p - 1.0) / (2.0 * p * (1.0 - p)).sqrt();
            assert_abs_diff_eq!(t_critical(p, 2).unwrap(), df2, epsilon = 1e-6);
        }
    }

    #[test]
    fn table_values() {
        assert_abs_diff_eq!(t_critical(0.99, 9).unwrap(), 2.821, epsilon = 1e-3);
        assert_abs_diff_eq!(t_critical(0.99, 1).unwrap(), 31.821, epsilon = 1e-2);
        assert_abs_diff_eq!(t_critical(0.975, 30).unwrap(), 2.042, epsilon = 1e-3);
    }

    #[test]
    fn agrees_with_statrs() {
        for df in [1u32, 2, 3, 5, 9, 20, 60, 200] {
            let dist = StudentsT::new(0.0, 1.0, f64::from(df)).unwrap();
            for p in [0.01, 0.2, 0.75, 0.95, 0.99, 0.999] {
                let ours = t_critical(p, df).unwrap();
                let theirs = dist.inverse_cdf(p);
                assert_abs_diff_eq!(ours, theirs, epsilon = 1e-6 * theirs.abs().max(1.0));
            }
        }
    }

    #[test]
    fn median_is_zero() {
        for df in 1..20 {
            assert_eq!(t_critical(0.5, df).unwrap(), 0.0);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(t_critical(0.99, 0).is_err());
        assert!(t_critical(1.0, 3).is_err());
        assert!(t_critical(0.0, 3).is_err());
    }
}
