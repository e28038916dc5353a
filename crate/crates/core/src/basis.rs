//! Basis functions of the quantile level used to model coefficient functions
//! `β(q) = A b(q)`.
//!
//! Two families are supported: the three-term logistic basis
//! `(1, ln q, ln(1-q))` and natural cubic splines in truncated-power form,
//! `(1, q, S_1(q), ..., S_{h-2}(q))`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};

use crate::error::{domain, Error, Result};
use crate::loss::QuantileLevel;
use crate::simultaneous::ParamMatrix;

#[derive(Debug, Clone, PartialEq)]
pub enum BasisSpec {
    Logistic,
    NaturalSpline { knots: Vec<f64> },
}

impl BasisSpec {
    pub fn natural_spline(knots: Vec<f64>) -> Result<Self> {
        validate_knots(&knots, 0.0, 1.0, true)?;
        Ok(BasisSpec::NaturalSpline { knots })
    }

    /// `count` equally spaced knots strictly inside (0, 1): `i / (count + 1)`.
    pub fn natural_spline_seq(count: usize) -> Result<Self> {
        let knots = (1..=count).map(|i| i as f64 / (count + 1) as f64).collect();
        Self::natural_spline(knots)
    }

    /// Basis dimension `h`.
    pub fn dim(&self) -> usize {
        match self {
            BasisSpec::Logistic => 3,
            BasisSpec::NaturalSpline { knots } => knots.len(),
        }
    }

    /// Write `b(q)` into `out` (length `dim()`), no validation.
    pub(crate) fn fill(&self, q: f64, out: &mut [f64]) {
        match self {
            BasisSpec::Logistic => {
                out[0] = 1.0;
                out[1] = q.ln();
                out[2] = (-q).ln_1p();
            }
            BasisSpec::NaturalSpline { knots } => natural_spline_row(knots, q, out),
        }
    }
}

impl fmt::Display for BasisSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisSpec::Logistic => f.write_str("logistic"),
            BasisSpec::NaturalSpline { knots } => {
                let parts: Vec<String> = knots.iter().map(|k| k.to_string()).collect();
                write!(f, "ns:{}", parts.join(","))
            }
        }
    }
}

impl FromStr for BasisSpec {
    type Err = Error;

    /// Accepts `logistic`, `ns:0.1,0.5,0.9`, or `ns:seqK` for K equally spaced knots.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("logistic") {
            return Ok(BasisSpec::Logistic);
        }
        let Some(rest) = s.strip_prefix("ns:") else {
            return Err(Error::Parse(format!("unknown basis `{s}`; expected `logistic` or `ns:<knots>`")));
        };
        if let Some(count) = rest.strip_prefix("seq") {
            let count: usize = count.parse().map_err(|_| Error::Parse(format!("bad knot count in `{s}`")))?;
            return Self::natural_spline_seq(count);
        }
        let knots = parse_list(rest)?;
        Self::natural_spline(knots)
    }
}

pub(crate) fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| Error::Parse(format!("`{t}` is not a number"))))
        .collect()
}

/// Knots must be strictly increasing, at least three, and inside `[lo, hi]`
/// (open interval when `open` is set).
pub(crate) fn validate_knots(knots: &[f64], lo: f64, hi: f64, open: bool) -> Result<()> {
    if knots.len() < 3 {
        return domain(format!("natural splines need at least 3 knots, got {}", knots.len()));
    }
    if knots.windows(2).any(|w| !(w[0] < w[1])) {
        return domain("knots must be strictly increasing");
    }
    let inside = |k: f64| if open { k > lo && k < hi } else { k >= lo && k <= hi };
    if let Some(k) = knots.iter().find(|k| !inside(**k)) {
        return domain(format!("knot {k} outside the allowed range [{lo}, {hi}]"));
    }
    Ok(())
}

#[inline]
fn cube_plus(t: f64) -> f64 {
    if t > 0.0 {
        t * t * t
    } else {
        0.0
    }
}

/// `(1, t, S_1(t), ..., S_{m-2}(t))` for knots `k_1 < ... < k_m`, with
/// `S_l(t) = (t-k_l)₊³ - (t-k_{m-1})₊³ (k_m-k_l)/(k_m-k_{m-1}) + (t-k_m)₊³ (k_{m-1}-k_l)/(k_m-k_{m-1})`.
pub(crate) fn natural_spline_row(knots: &[f64], t: f64, out: &mut [f64]) {
    let m = knots.len();
    let (km1, km) = (knots[m - 2], knots[m - 1]);
    let span = km - km1;
    let tail1 = cube_plus(t - km1);
    let tail2 = cube_plus(t - km);
    out[0] = 1.0;
    out[1] = t;
    for l in 0..m - 2 {
        let kl = knots[l];
        out[l + 2] = cube_plus(t - kl) - tail1 * (km - kl) / span + tail2 * (km1 - kl) / span;
    }
}

pub fn eval_basis(spec: &BasisSpec, q: QuantileLevel) -> Array1<f64> {
    let mut out = Array1::zeros(spec.dim());
    spec.fill(q.value(), out.as_slice_mut().expect("contiguous"));
    out
}

/// Rows `b(q_a)ᵀ` stacked over a grid of distinct levels.
pub fn basis_matrix(spec: &BasisSpec, grid: &[QuantileLevel]) -> Result<Array2<f64>> {
    let mut sorted: Vec<f64> = grid.iter().map(|q| q.value()).collect();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return domain("quantile grid contains duplicate levels");
    }
    let h = spec.dim();
    let mut m = Array2::zeros((grid.len(), h));
    for (a, q) in grid.iter().enumerate() {
        let mut row = m.row_mut(a);
        spec.fill(q.value(), row.as_slice_mut().expect("contiguous row"));
    }
    Ok(m)
}

/// `β(q) = A b(q)`.
pub fn coefficient_function(a: &ParamMatrix, spec: &BasisSpec, q: QuantileLevel) -> Result<Array1<f64>> {
    if a.h() != spec.dim() {
        return domain(format!("parameter matrix has {} columns but basis has dimension {}", a.h(), spec.dim()));
    }
    Ok(a.matrix().dot(&eval_basis(spec, q)))
}
