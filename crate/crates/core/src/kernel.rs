//! Double-kernel conditional distribution estimator.
//!
//! Gaussian kernel weights in `x` (bandwidth `h1`) combined with Gaussian
//! smoothing in `y` (bandwidth `h2`):
//!
//! ```text
//! F(y | x) = Σ w_i(x) Φ((y - y_i) / h2),   f(y | x) = Σ w_i(x) φ((y - y_i) / h2) / h2
//! ```
//!
//! Weights are normalized after shifting the log-kernels by their maximum, so
//! a small `h1` never underflows the whole vector.

use log::warn;
use rayon::prelude::*;

use crate::dist::{normal_cdf, normal_pdf};
use crate::error::{domain, Error, Result};
use crate::loss::QuantileLevel;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    h1: f64,
    h2: f64,
}

impl KernelConfig {
    pub fn new(h1: f64, h2: f64) -> Result<Self> {
        for (name, h) in [("h1", h1), ("h2", h2)] {
            if !(h > 0.0) || !h.is_finite() {
                return Err(Error::Bandwidth(format!("{name} must be positive and finite, got {h}")));
            }
        }
        Ok(Self { h1, h2 })
    }

    pub fn h1(&self) -> f64 {
        self.h1
    }

    pub fn h2(&self) -> f64 {
        self.h2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointSample {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl PointSample {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return domain(format!("need matching nonempty x and y, got {} and {}", x.len(), y.len()));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return domain("sample contains non-finite values");
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

fn log_sum_exp(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = v.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.map(|a| (a - m).exp()).sum::<f64>().ln()
}

/// Normalized Gaussian kernel weights of the sample points around `x`.
pub fn kernel_weights(sample: &PointSample, x: f64, h1: f64) -> Result<Vec<f64>> {
    if !(h1 > 0.0) || !h1.is_finite() {
        return Err(Error::Bandwidth(format!("h1 must be positive and finite, got {h1}")));
    }
    if !x.is_finite() {
        return domain(format!("evaluation point must be finite, got {x}"));
    }
    let logk: Vec<f64> = sample.x.iter().map(|xi| -0.5 * ((xi - x) / h1).powi(2)).collect();
    let m = logk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = logk.iter().map(|a| (a - m).exp()).collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Bandwidth(format!("kernel weights degenerate at x={x} with h1={h1}")));
    }
    Ok(raw.into_iter().map(|w| w / total).collect())
}

fn cdf_with(sample: &PointSample, w: &[f64], y: f64, h2: f64) -> f64 {
    let v: f64 = w.iter().zip(&sample.y).map(|(wi, yi)| wi * normal_cdf((y - yi) / h2)).sum();
    v.clamp(0.0, 1.0)
}

pub fn dk_cdf(sample: &PointSample, x: f64, y: f64, cfg: &KernelConfig) -> Result<f64> {
    let w = kernel_weights(sample, x, cfg.h1)?;
    Ok(cdf_with(sample, &w, y, cfg.h2))
}

pub fn dk_pdf(sample: &PointSample, x: f64, y: f64, cfg: &KernelConfig) -> Result<f64> {
    let w = kernel_weights(sample, x, cfg.h1)?;
    Ok(w.iter().zip(&sample.y).map(|(wi, yi)| wi * normal_pdf((y - yi) / cfg.h2)).sum::<f64>() / cfg.h2)
}

/// Conditional quantile by bisection on `F(· | x)`, run until the bracket
/// collapses in floating point.
pub fn dk_quantile(sample: &PointSample, x: f64, q: QuantileLevel, cfg: &KernelConfig) -> Result<f64> {
    let w = kernel_weights(sample, x, cfg.h1)?;
    quantile_with(sample, &w, q.value(), cfg.h2)
}

/// Quantiles at several levels sharing one weight vector.
pub fn dk_quantiles(sample: &PointSample, x: f64, qs: &[QuantileLevel], cfg: &KernelConfig) -> Result<Vec<f64>> {
    let w = kernel_weights(sample, x, cfg.h1)?;
    qs.iter().map(|q| quantile_with(sample, &w, q.value(), cfg.h2)).collect()
}

fn quantile_with(sample: &PointSample, w: &[f64], q: f64, h2: f64) -> Result<f64> {
    let ymin = sample.y.iter().copied().fold(f64::INFINITY, f64::min);
    let ymax = sample.y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let f = |y: f64| cdf_with(sample, w, y, h2);
    let (mut lo, mut hi) = (ymin - 8.0 * h2, ymax + 8.0 * h2);
    let mut width = 8.0 * h2;
    for _ in 0..64 {
        if f(lo) <= q {
            break;
        }
        width *= 2.0;
        lo = ymin - width;
    }
    width = 8.0 * h2;
    for _ in 0..64 {
        if f(hi) >= q {
            break;
        }
        width *= 2.0;
        hi = ymax + width;
    }
    if f(lo) > q || f(hi) < q {
        return Err(Error::Numeric(format!("quantile {q} not bracketed in [{lo}, {hi}]")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == q {
            return Ok(mid);
        }
        if fm < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Leave-one-out log-likelihood `Σ_j ln f^(−j)(y_j | x_j)`, evaluated in log
/// space. Returns `-inf` (with a warning naming the index) if a held-out
/// density is exactly zero.
pub fn lcv_log_likelihood(sample: &PointSample, cfg: &KernelConfig) -> Result<f64> {
    let n = sample.len();
    if n < 2 {
        return domain("leave-one-out likelihood needs at least 2 points");
    }
    let (h1, h2) = (cfg.h1, cfg.h2);
    let terms: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| {
            let (xj, yj) = (sample.x[j], sample.y[j]);
            let others = (0..n).filter(move |&i| i != j);
            let a = others.clone().map(|i| -0.5 * ((sample.x[i] - xj) / h1).powi(2));
            let ab = others.map(|i| {
                -0.5 * ((sample.x[i] - xj) / h1).powi(2) - 0.5 * ((yj - sample.y[i]) / h2).powi(2)
            });
            log_sum_exp(ab) - log_sum_exp(a) - h2.ln() - HALF_LN_2PI
        })
        .collect();
    if let Some(j) = terms.iter().position(|t| !t.is_finite()) {
        warn!("leave-one-out density at index {j} is zero");
        return Ok(f64::NEG_INFINITY);
    }
    Ok(terms.iter().sum())
}
