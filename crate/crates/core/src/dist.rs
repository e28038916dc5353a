//! Distribution functions and quantile inversions used by the estimators and
//! the simulation oracles.
//!
//! CDFs come from `statrs` special functions; the inversions are local so each
//! one can be held to `|F(Q(p)) − p| ≤ 1e-10`.

use statrs::function::beta::beta_reg;
use libm::erfc;
use statrs::function::erf::erfc_inv;
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{domain, Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Above this shape the incomplete gamma loses digits; use Wilson–Hilferty.
pub const GAMMA_LARGE_SHAPE: f64 = 1e5;

fn check_prob(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return domain(format!("probability must lie in (0, 1), got {p}"));
    }
    Ok(())
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal quantile. Out-of-range `p` maps to ±∞ / NaN like the limits.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return if p == 0.0 { f64::NEG_INFINITY } else { f64::NAN };
    }
    if p >= 1.0 {
        return if p == 1.0 { f64::INFINITY } else { f64::NAN };
    }
    let x = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    // One Newton polish against the erfc-based CDF.
    let d = normal_pdf(x);
    if d > 0.0 {
        x - (normal_cdf(x) - p) / d
    } else {
        x
    }
}

/// Bisection on a non-decreasing `f` until the bracket stops shrinking in
/// floating point.
pub(crate) fn bisect(mut lo: f64, mut hi: f64, target: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let x = df / (df + t * t);
    let tail = 0.5 * beta_reg(0.5 * df, 0.5, x);
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

pub fn student_t_quantile(p: f64, df: f64) -> Result<f64> {
    check_prob(p)?;
    if !(df > 0.0) {
        return domain(format!("degrees of freedom must be positive, got {df}"));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while student_t_cdf(hi, df) < p.max(1.0 - p) {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::Numeric("student t quantile bracket overflow".into()));
        }
    }
    Ok(bisect(-hi, hi, p, |t| student_t_cdf(t, df)))
}

pub fn beta_cdf(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        beta_reg(a, b, x)
    }
}

pub fn beta_quantile(p: f64, a: f64, b: f64) -> Result<f64> {
    check_prob(p)?;
    if !(a > 0.0 && b > 0.0) {
        return domain(format!("beta shape parameters must be positive, got ({a}, {b})"));
    }
    Ok(bisect(0.0, 1.0, p, |x| beta_cdf(x, a, b)))
}

pub fn gamma_cdf(x: f64, k: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_lr(k, x)
    }
}

fn wilson_hilferty(p: f64, k: f64) -> f64 {
    let z = normal_quantile(p);
    let c = 1.0 / (9.0 * k);
    k * (1.0 - c + z * c.sqrt()).powi(3)
}

/// Quantile of Gamma(shape `k`, scale 1): safeguarded Newton on the
/// regularized lower incomplete gamma, Wilson–Hilferty for `k > 1e5`.
pub fn gamma_quantile(p: f64, k: f64) -> Result<f64> {
    check_prob(p)?;
    if !(k > 0.0) || !k.is_finite() {
        return domain(format!("gamma shape must be positive, got {k}"));
    }
    if k > GAMMA_LARGE_SHAPE {
        return Ok(wilson_hilferty(p, k));
    }
    // Newton in u = ln x keeps the tiny quantiles of small shapes reachable.
    let mut hi_x = k.max(1.0);
    while gamma_cdf(hi_x, k) < p {
        hi_x *= 2.0;
        if !hi_x.is_finite() {
            return Err(Error::Numeric(format!("gamma quantile bracket overflow at p={p}, k={k}")));
        }
    }
    let (mut lo, mut hi) = (f64::MIN_POSITIVE.ln(), hi_x.ln());
    let lg = ln_gamma(k);
    let small = (p.ln() + ln_gamma(k + 1.0)) / k;
    let wh = wilson_hilferty(p, k);
    let mut u = if wh > 0.0 && (gamma_cdf(wh, k) - p).abs() < (gamma_cdf(small.exp(), k) - p).abs() {
        wh.ln()
    } else {
        small
    };
    if !(u > lo && u < hi) {
        u = 0.5 * (lo + hi);
    }
    for _ in 0..300 {
        let x = u.exp();
        let f = gamma_cdf(x, k) - p;
        if f == 0.0 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        let slope = (k * u - x - lg).exp();
        let mut next = u - f / slope;
        if !(next > lo && next < hi) || !slope.is_finite() || slope == 0.0 {
            next = 0.5 * (lo + hi);
        }
        if (next - u).abs() <= 1e-15 || hi - lo <= 1e-15 {
            return Ok(next.exp());
        }
        u = next;
    }
    let x = u.exp();
    if (gamma_cdf(x, k) - p).abs() <= 1e-10 {
        Ok(x)
    } else {
        Err(Error::Numeric(format!("gamma quantile did not converge at p={p}, k={k}")))
    }
}
