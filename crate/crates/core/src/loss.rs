//! Check loss, its perturbed approximation, and the quadratic majorizer
//! used by every MM update in the crate.
//!
//! For a residual `r` and level `q`, the check loss is `q*r - r*1{r<0}`.
//! The perturbed loss subtracts `(eps/2) * ln(eps + |r|)` per term, which
//! keeps the majorizer finite at zero residuals:
//!
//! ```text
//! zeta(r | r_prev) = 1/4 * ( r^2 / (eps + |r_prev|) + (4q - 2) r + c )
//! ```
//!
//! with `c` fixed so that `zeta(r_prev | r_prev)` equals the perturbed loss at
//! `r_prev`.

use crate::error::{domain, Result};

/// Quantile level strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub fn new(q: f64) -> Result<Self> {
        if q > 0.0 && q < 1.0 {
            Ok(Self(q))
        } else {
            domain(format!("quantile level must lie in (0, 1), got {q}"))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// The `4q - 2` entry of the linear term in the majorizer.
    #[inline]
    pub fn linear_coef(self) -> f64 {
        4.0 * self.0 - 2.0
    }
}

impl TryFrom<f64> for QuantileLevel {
    type Error = crate::Error;

    fn try_from(q: f64) -> Result<Self> {
        Self::new(q)
    }
}

impl std::fmt::Display for QuantileLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Perturbation added to absolute residuals; strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation(f64);

impl Perturbation {
    pub const DEFAULT: f64 = 1e-10;

    pub fn new(eps: f64) -> Result<Self> {
        if eps > 0.0 && eps.is_finite() {
            Ok(Self(eps))
        } else {
            domain(format!("perturbation must be positive and finite, got {eps}"))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Perturbation {
    fn default() -> Self {
        Self(Self::DEFAULT)
    }
}

/// Nonempty vector of finite residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualVector(Vec<f64>);

impl ResidualVector {
    pub fn new(r: Vec<f64>) -> Result<Self> {
        if r.is_empty() {
            return domain("residual vector is empty");
        }
        if let Some(i) = r.iter().position(|v| !v.is_finite()) {
            return domain(format!("residual {i} is not finite"));
        }
        Ok(Self(r))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl AsRef<[f64]> for ResidualVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Unchecked single-term check loss for hot loops.
#[inline]
pub(crate) fn rho(q: f64, r: f64) -> f64 {
    if r < 0.0 {
        (q - 1.0) * r
    } else {
        q * r
    }
}

/// Unchecked single-term perturbed loss.
#[inline]
pub(crate) fn rho_eps(q: f64, r: f64, eps: f64) -> f64 {
    rho(q, r) - 0.5 * eps * (eps + r.abs()).ln()
}

pub fn check_loss(q: QuantileLevel, r: f64) -> Result<f64> {
    if !r.is_finite() {
        return domain(format!("residual must be finite, got {r}"));
    }
    Ok(rho(q.value(), r))
}

pub fn total_loss(q: QuantileLevel, residuals: &ResidualVector) -> f64 {
    sum_check_loss(q.value(), residuals.as_slice())
}

/// Sum of check losses over a raw slice (no validation).
pub fn sum_check_loss(q: f64, residuals: &[f64]) -> f64 {
    residuals.iter().map(|&r| rho(q, r)).sum()
}

pub fn perturbed_loss(q: QuantileLevel, residuals: &ResidualVector, eps: Perturbation) -> f64 {
    sum_perturbed_loss(q.value(), residuals.as_slice(), eps.value())
}

/// Sum of perturbed losses over a raw slice (no validation).
pub fn sum_perturbed_loss(q: f64, residuals: &[f64], eps: f64) -> f64 {
    residuals.iter().map(|&r| rho_eps(q, r, eps)).sum()
}

/// Value of the single-term majorizer at `r`, anchored at `r_prev`.
pub fn surrogate_value(q: QuantileLevel, r: f64, r_prev: f64, eps: Perturbation) -> Result<f64> {
    if !r.is_finite() || !r_prev.is_finite() {
        return domain("surrogate inputs must be finite");
    }
    Ok(surrogate_unchecked(q.value(), r, r_prev, eps.value()))
}

#[inline]
pub(crate) fn surrogate_unchecked(q: f64, r: f64, r_prev: f64, eps: f64) -> f64 {
    let denom = eps + r_prev.abs();
    let lin = 4.0 * q - 2.0;
    // const from the tangency identity at r_prev
    let constant = 4.0 * rho_eps(q, r_prev, eps) - r_prev * r_prev / denom - lin * r_prev;
    0.25 * (r * r / denom + lin * r + constant)
}
