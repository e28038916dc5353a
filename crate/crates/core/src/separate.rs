//! Single-quantile MM fitter.
//!
//! Each iteration solves the weighted normal equations
//! `(XᵀWX) θ = XᵀWy + ½ Xᵀc`, where `W = diag(1 / (eps + |r_i|))` is built
//! from the current residuals and `c` is the constant vector `4q - 2`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{domain, Error, Result};
use crate::linalg::{self, solve_spd};
use crate::loss::{sum_perturbed_loss, Perturbation, QuantileLevel, ResidualVector};

/// Relative pivot threshold used for the full-column-rank check on load.
pub const RANK_TOL: f64 = 1e-12;

/// Response vector plus a full-column-rank design matrix.
#[derive(Debug, Clone)]
pub struct Dataset {
    y: Array1<f64>,
    x: Array2<f64>,
}

impl Dataset {
    pub fn new(y: Array1<f64>, x: Array2<f64>) -> Result<Self> {
        let (n, p) = x.dim();
        if y.len() != n {
            return domain(format!("response has {} rows but design has {n}", y.len()));
        }
        if p == 0 || n <= p {
            return domain(format!("need n > p >= 1, got n={n}, p={p}"));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return domain("dataset contains non-finite values");
        }
        if let Some(column) = linalg::first_dependent_column(x.view(), RANK_TOL) {
            return Err(Error::RankDeficient { column });
        }
        Ok(Self { y, x: x.as_standard_layout().into_owned() })
    }

    /// Build from a response and raw covariate columns, prepending an intercept.
    pub fn with_intercept(y: Array1<f64>, covariates: ArrayView2<f64>) -> Result<Self> {
        let n = covariates.nrows();
        let mut x = Array2::<f64>::ones((n, covariates.ncols() + 1));
        x.slice_mut(ndarray::s![.., 1..]).assign(&covariates);
        Self::new(y, x)
    }

    pub fn y(&self) -> ArrayView1<'_, f64> {
        self.y.view()
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Rows selected by `rows`, re-validated.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        Self::new(self.y.select(Axis(0), rows), self.x.select(Axis(0), rows))
    }

    /// `y - Xθ`.
    pub fn residuals(&self, theta: ArrayView1<f64>) -> Array1<f64> {
        &self.y - &self.x.dot(&theta)
    }

    /// Column means of the design.
    pub fn mean_row(&self) -> Array1<f64> {
        self.x.mean_axis(Axis(0)).expect("n > 0")
    }
}

/// Starting point of an MM run.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Init {
    #[default]
    LeastSquares,
    Zeros,
    User(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub epsilon: Perturbation,
    pub max_iter: usize,
    /// Stop once the max-abs parameter change falls below this.
    pub tol: f64,
    pub init: Init,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { epsilon: Perturbation::default(), max_iter: 10_000, tol: 1e-10, init: Init::LeastSquares }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return domain("max_iter must be at least 1");
        }
        if !(self.tol > 0.0) {
            return domain(format!("tol must be positive, got {}", self.tol));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileFit {
    pub theta: Array1<f64>,
    pub iterations: usize,
    pub final_perturbed_loss: f64,
    pub converged: bool,
}

/// MM weights `1 / (eps + |r_i|)`.
pub fn mm_weights(residuals: &ResidualVector, eps: Perturbation) -> Array1<f64> {
    residuals.as_slice().iter().map(|r| 1.0 / (eps.value() + r.abs())).collect()
}

/// Accumulate `XᵀWX` and `XᵀWy + ½ lin Xᵀ1` in a single pass over rows.
pub(crate) fn weighted_normal_system(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    weights: &[f64],
    lin: f64,
) -> (Array2<f64>, Array1<f64>) {
    let p = x.ncols();
    let mut g = vec![0.0; p * p];
    let mut v = vec![0.0; p];
    for ((row, &yi), &w) in x.outer_iter().zip(y.iter()).zip(weights) {
        let row = row.to_slice().expect("standard layout");
        add_row(row, yi, w, lin, &mut g, &mut v);
    }
    (symmetric_from_lower(&g, p), Array1::from(v))
}

/// Same system with `W = diag(1 / (eps + |y - Xβ|))` computed on the fly;
/// `x` is row-major `n × p`. Only the lower triangle of `g` is written.
pub(crate) fn weighted_system_at(x: &[f64], y: &[f64], beta: &[f64], eps: f64, lin: f64, g: &mut [f64], v: &mut [f64]) {
    g.fill(0.0);
    v.fill(0.0);
    for (row, &yi) in x.chunks_exact(beta.len()).zip(y) {
        let fit: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
        let w = 1.0 / (eps + (yi - fit).abs());
        add_row(row, yi, w, lin, g, v);
    }
}

#[inline]
fn add_row(row: &[f64], yi: f64, w: f64, lin: f64, g: &mut [f64], v: &mut [f64]) {
    let p = row.len();
    let s = w * yi + 0.5 * lin;
    for j in 0..p {
        let wxj = w * row[j];
        v[j] += s * row[j];
        for (gk, xk) in g[j * p..=j * p + j].iter_mut().zip(row) {
            *gk += wxj * xk;
        }
    }
}

pub(crate) fn symmetric_from_lower(g: &[f64], p: usize) -> Array2<f64> {
    Array2::from_shape_fn((p, p), |(j, k)| if k <= j { g[j * p + k] } else { g[k * p + j] })
}

/// One MM update from `theta_t`.
pub fn mm_step(
    data: &Dataset,
    q: QuantileLevel,
    theta_t: ArrayView1<f64>,
    eps: Perturbation,
) -> Result<Array1<f64>> {
    if theta_t.len() != data.p() {
        return domain(format!("theta has length {}, expected {}", theta_t.len(), data.p()));
    }
    if theta_t.iter().any(|v| !v.is_finite()) {
        return domain("theta contains non-finite entries");
    }
    let r = data.residuals(theta_t);
    let w: Vec<f64> = r.iter().map(|ri| 1.0 / (eps.value() + ri.abs())).collect();
    let (m, v) = weighted_normal_system(data.x(), data.y(), &w, q.linear_coef());
    solve_spd(m.view(), v.view())
}

pub(crate) fn initial_theta(data: &Dataset, init: &Init) -> Result<Array1<f64>> {
    match init {
        Init::LeastSquares => linalg::ols(data.x(), data.y()),
        Init::Zeros => Ok(Array1::zeros(data.p())),
        Init::User(v) => {
            if v.len() != data.p() {
                return domain(format!("initial vector has length {}, expected {}", v.len(), data.p()));
            }
            Ok(Array1::from(v.clone()))
        }
    }
}

/// Perturbed objective `L_eps(θ)` on a dataset.
pub fn objective(data: &Dataset, q: QuantileLevel, theta: ArrayView1<f64>, eps: Perturbation) -> f64 {
    let r = data.residuals(theta);
    sum_perturbed_loss(q.value(), r.as_slice().expect("contiguous"), eps.value())
}

pub fn fit_quantile(data: &Dataset, q: QuantileLevel, cfg: &FitConfig) -> Result<QuantileFit> {
    fit_quantile_observed(data, q, cfg, |_, _, _| {})
}

/// As [`fit_quantile`], calling `observe(t, θ_t, L_eps(θ_t))` for the
/// initializer (`t = 0`) and after every update.
pub fn fit_quantile_observed<F>(
    data: &Dataset,
    q: QuantileLevel,
    cfg: &FitConfig,
    mut observe: F,
) -> Result<QuantileFit>
where
    F: FnMut(usize, ArrayView1<f64>, f64),
{
    cfg.validate()?;
    let eps = cfg.epsilon;
    let mut theta = initial_theta(data, &cfg.init)?;
    let mut loss = objective(data, q, theta.view(), eps);
    observe(0, theta.view(), loss);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        let next = mm_step(data, q, theta.view(), eps)?;
        iterations += 1;
        let change = next.iter().zip(theta.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        theta = next;
        loss = objective(data, q, theta.view(), eps);
        observe(iterations, theta.view(), loss);
        if change < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(QuantileFit { theta, iterations, final_perturbed_loss: loss, converged })
}
