//! Natural-spline expansion of continuous covariates and k-fold
//! cross-validation of simultaneous fits.
//!
//! A covariate `x` with knots `k_1 < ... < k_m` becomes the block
//! `(x, S_1(x), ..., S_{m-2}(x))`, using the same truncated-power form as the
//! quantile basis but on the covariate scale. Several covariates are expanded
//! independently and concatenated after a single intercept column.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::basis::{coefficient_function, natural_spline_row, parse_list, validate_knots, BasisSpec};
use crate::error::{domain, Error, Result};
use crate::loss::{rho, QuantileLevel};
use crate::separate::{Dataset, FitConfig};
use crate::simultaneous::{fit_simultaneous, QuantileGrid};

/// How to place covariate knots: `seqK` (K equally spaced from min to max
/// of the observed x, inclusive) or an explicit list.
#[derive(Debug, Clone, PartialEq)]
pub enum KnotSpec {
    Seq(usize),
    List(Vec<f64>),
}

impl FromStr for KnotSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(k) = s.strip_prefix("seq") {
            let k = k.parse::<usize>().map_err(|_| Error::Parse(format!("bad knot count in `{s}`")))?;
            return Ok(KnotSpec::Seq(k));
        }
        Ok(KnotSpec::List(parse_list(s)?))
    }
}

impl fmt::Display for KnotSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KnotSpec::Seq(k) => write!(f, "seq{k}"),
            KnotSpec::List(v) => {
                let parts: Vec<String> = v.iter().map(|k| k.to_string()).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateTransform {
    knots: Vec<f64>,
}

impl CovariateTransform {
    /// Knots must lie inside `[min x, max x]` of `x`.
    pub fn new(knots: Vec<f64>, x: ArrayView1<f64>) -> Result<Self> {
        let (lo, hi) = range(x)?;
        validate_knots(&knots, lo, hi, false)?;
        Ok(Self { knots })
    }

    pub fn from_spec(spec: &KnotSpec, x: ArrayView1<f64>) -> Result<Self> {
        match spec {
            KnotSpec::List(k) => Self::new(k.clone(), x),
            KnotSpec::Seq(count) => {
                let (lo, hi) = range(x)?;
                if *count < 3 {
                    return domain(format!("natural splines need at least 3 knots, got {count}"));
                }
                // interior points can round past hi; the ends are exact
                let last = *count - 1;
                let knots = (0..*count)
                    .map(|i| if i == last { hi } else { (lo + (hi - lo) * i as f64 / last as f64).min(hi) })
                    .collect();
                Self::new(knots, x)
            }
        }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Columns contributed including the intercept, `m`.
    pub fn dim(&self) -> usize {
        self.knots.len()
    }

    /// `(1, x, S_1(x), ...)` for one value.
    pub fn row(&self, x: f64) -> Array1<f64> {
        let mut out = Array1::zeros(self.dim());
        natural_spline_row(&self.knots, x, out.as_slice_mut().expect("contiguous"));
        out
    }
}

fn range(x: ArrayView1<f64>) -> Result<(f64, f64)> {
    if x.is_empty() {
        return domain("covariate is empty");
    }
    if x.iter().any(|v| !v.is_finite()) {
        return domain("covariate contains non-finite values");
    }
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Err(Error::RankDeficient { column: 1 });
    }
    Ok((lo, hi))
}

/// `n × m` matrix with rows `(1, x_i, S_1(x_i), ...)`.
pub fn transform_covariate(x: ArrayView1<f64>, t: &CovariateTransform) -> Array2<f64> {
    let mut out = Array2::zeros((x.len(), t.dim()));
    let mut buf = vec![0.0; t.dim()];
    for (i, &xi) in x.iter().enumerate() {
        natural_spline_row(&t.knots, xi, &mut buf);
        out.row_mut(i).assign(&ArrayView1::from(&buf[..]));
    }
    out
}

/// Expand every column of `covariates` with its transform and concatenate
/// the blocks after one shared intercept column.
pub fn transform_design(covariates: ArrayView2<f64>, transforms: &[CovariateTransform]) -> Result<Array2<f64>> {
    if covariates.ncols() != transforms.len() {
        return domain(format!("{} covariates but {} transforms", covariates.ncols(), transforms.len()));
    }
    let width = 1 + transforms.iter().map(|t| t.dim() - 1).sum::<usize>();
    let mut out = Array2::zeros((covariates.nrows(), width));
    out.column_mut(0).fill(1.0);
    let mut col = 1;
    for (j, t) in transforms.iter().enumerate() {
        let block = transform_covariate(covariates.column(j), t);
        let w = t.dim() - 1;
        out.slice_mut(ndarray::s![.., col..col + w]).assign(&block.slice(ndarray::s![.., 1..]));
        col += w;
    }
    Ok(out)
}

/// A balanced random partition of `0..n` into folds.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldAssignment {
    groups: Vec<Vec<usize>>,
    seed: u64,
}

impl FoldAssignment {
    /// Validates that `groups` partition `0..n` with sizes differing by at most one.
    pub fn new(groups: Vec<Vec<usize>>, n: usize, seed: u64) -> Result<Self> {
        let mut seen = vec![false; n];
        for g in &groups {
            for &i in g {
                if i >= n || seen[i] {
                    return domain(format!("index {i} is out of range or assigned twice"));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return domain("folds do not cover every observation");
        }
        let sizes = groups.iter().map(Vec::len);
        let (lo, hi) = sizes.fold((usize::MAX, 0), |(a, b), s| (a.min(s), b.max(s)));
        if groups.is_empty() || hi - lo > 1 {
            return domain("fold sizes must differ by at most one");
        }
        Ok(Self { groups, seed })
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Indices outside fold `g`, ascending.
    pub fn training(&self, g: usize) -> Vec<usize> {
        let mut rows: Vec<usize> =
            self.groups.iter().enumerate().filter(|(h, _)| *h != g).flat_map(|(_, v)| v.iter().copied()).collect();
        rows.sort_unstable();
        rows
    }
}

pub fn kfold_split(n: usize, folds: usize, seed: u64) -> Result<FoldAssignment> {
    if folds == 0 || n < folds {
        return domain(format!("cannot split {n} observations into {folds} folds"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut groups = vec![Vec::with_capacity(n / folds + 1); folds];
    for (pos, i) in idx.into_iter().enumerate() {
        groups[pos % folds].push(i);
    }
    for g in &mut groups {
        g.sort_unstable();
    }
    FoldAssignment::new(groups, n, seed)
}

/// `0.1, 0.2, ..., 0.9`.
pub fn default_validation_levels() -> Vec<QuantileLevel> {
    (1..=9).map(|i| QuantileLevel::new(i as f64 / 10.0).expect("in range")).collect()
}

/// Sum over folds of held-out check loss at `validation_q`, each fold scored
/// with a simultaneous fit trained on the other folds.
pub fn cv_loss(
    data: &Dataset,
    spec: &BasisSpec,
    grid: &QuantileGrid,
    folds: &FoldAssignment,
    validation_q: &[QuantileLevel],
    cfg: &FitConfig,
) -> Result<f64> {
    if validation_q.is_empty() {
        return domain("no validation quantile levels");
    }
    let per_fold: Vec<f64> = (0..folds.groups().len())
        .into_par_iter()
        .map(|g| {
            let train = data.subset(&folds.training(g))?;
            let fit = fit_simultaneous(&train, spec, grid, cfg)?;
            let mut loss = 0.0;
            for &q in validation_q {
                let beta = coefficient_function(&fit.params, spec, q)?;
                for &i in &folds.groups()[g] {
                    let r = data.y()[i] - data.x().row(i).dot(&beta);
                    loss += rho(q.value(), r);
                }
            }
            Ok(loss)
        })
        .collect::<Result<_>>()?;
    Ok(per_fold.iter().sum())
}
