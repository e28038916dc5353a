//! Simultaneous MM fitting of all quantile coefficients.
//!
//! Coefficients are modeled as `β(q) = A b(q)` with `A` a `p × h` parameter
//! matrix, vectorized column by column into `θ`. For a grid `q_1 < ... < q_k`
//! the per-level design `D(q) = b(q)ᵀ ⊗ X` is never materialized: each MM
//! update accumulates
//!
//! ```text
//! M = Σ_a (b_a b_aᵀ) ⊗ (Xᵀ W_a X),    v = Σ_a b_a ⊗ (Xᵀ W_a y + ½ Xᵀ c_a)
//! ```
//!
//! from `p × p` weighted Grams and solves `M θ = v`.

use log::warn;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::basis::{basis_matrix, BasisSpec};
use crate::error::{domain, Result};
use crate::linalg::{self, solve_spd};
use crate::loss::{rho_eps, Perturbation, QuantileLevel};
use crate::separate::{weighted_system_at, Dataset, FitConfig, Init};

/// Quantile levels per accumulation chunk; chunk boundaries are fixed so the
/// reduction order never depends on the thread count.
const CHUNK: usize = 64;

/// `p × h` coefficient-function parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMatrix {
    a: Array2<f64>,
}

impl ParamMatrix {
    pub fn new(a: Array2<f64>) -> Self {
        Self { a }
    }

    pub fn zeros(p: usize, h: usize) -> Self {
        Self { a: Array2::zeros((p, h)) }
    }

    pub fn p(&self) -> usize {
        self.a.nrows()
    }

    pub fn h(&self) -> usize {
        self.a.ncols()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.a
    }

    /// Column-stacked `θ = (θ_11..θ_p1, ..., θ_1h..θ_ph)`.
    pub fn to_vec(&self) -> Array1<f64> {
        self.a.t().iter().copied().collect()
    }

    pub fn from_vec(theta: ArrayView1<f64>, p: usize, h: usize) -> Result<Self> {
        if theta.len() != p * h {
            return domain(format!("parameter vector has length {}, expected {}", theta.len(), p * h));
        }
        Ok(Self { a: Array2::from_shape_fn((p, h), |(j, l)| theta[l * p + j]) })
    }
}

/// Strictly increasing grid of quantile levels.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileGrid {
    levels: Vec<QuantileLevel>,
}

impl QuantileGrid {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return domain("quantile grid is empty");
        }
        if levels.windows(2).any(|w| !(w[0] < w[1])) {
            return domain("quantile grid must be strictly increasing");
        }
        let levels = levels.into_iter().map(QuantileLevel::new).collect::<Result<Vec<_>>>()?;
        Ok(Self { levels })
    }

    /// `k` equally spaced levels `i / (k + 1)`; `uniform(999)` is 0.001..0.999.
    pub fn uniform(k: usize) -> Result<Self> {
        Self::new((1..=k).map(|i| i as f64 / (k + 1) as f64).collect())
    }

    pub fn levels(&self) -> &[QuantileLevel] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

impl Default for QuantileGrid {
    fn default() -> Self {
        Self::uniform(999).expect("valid default grid")
    }
}

/// `D(q) θ = X A b(q)` without forming the Kronecker product.
pub fn design_row_product(x: ArrayView2<f64>, b: ArrayView1<f64>, theta: ArrayView1<f64>) -> Result<Array1<f64>> {
    let a = ParamMatrix::from_vec(theta, x.ncols(), b.len())?;
    Ok(x.dot(&a.a.dot(&b)))
}

fn check_dims(data: &Dataset, spec: &BasisSpec, theta: ArrayView1<f64>) -> Result<()> {
    let hp = data.p() * spec.dim();
    if theta.len() != hp {
        return domain(format!("theta has length {}, expected h*p = {hp}", theta.len()));
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return domain("theta contains non-finite entries");
    }
    Ok(())
}

/// Assemble `(M, v)` for one MM update of the simultaneous fit.
pub fn accumulate_normal_system(
    data: &Dataset,
    spec: &BasisSpec,
    grid: &QuantileGrid,
    theta_t: ArrayView1<f64>,
    eps: Perturbation,
) -> Result<(Array2<f64>, Array1<f64>)> {
    check_dims(data, spec, theta_t)?;
    let (p, h) = (data.p(), spec.dim());
    let a = ParamMatrix::from_vec(theta_t, p, h)?;
    let b_all = basis_matrix(spec, grid.levels())?;
    let chunks: Vec<(usize, usize)> =
        (0..grid.len()).step_by(CHUNK).map(|s| (s, (s + CHUNK).min(grid.len()))).collect();

    let partials: Vec<(Array2<f64>, Array1<f64>)> = chunks
        .par_iter()
        .map(|&(start, end)| {
            let mut m = Array2::<f64>::zeros((h * p, h * p));
            let mut v = Array1::<f64>::zeros(h * p);
            let mut g = vec![0.0; p * p];
            let mut rhs = vec![0.0; p];
            let x = data.x();
            let x = x.as_slice().expect("standard layout");
            let y = data.y();
            let y = y.as_slice().expect("contiguous");
            for idx in start..end {
                let q = grid.levels()[idx];
                let b = b_all.row(idx);
                let beta = a.a.dot(&b);
                let beta = beta.as_slice().expect("contiguous");
                weighted_system_at(x, y, beta, eps.value(), q.linear_coef(), &mut g, &mut rhs);
                scatter_kron(&mut m, &mut v, b, &g, &rhs);
            }
            (m, v)
        })
        .collect();

    let mut m = Array2::<f64>::zeros((h * p, h * p));
    let mut v = Array1::<f64>::zeros(h * p);
    for (pm, pv) in partials {
        m += &pm;
        v += &pv;
    }
    Ok((m, v))
}

/// Add `(b bᵀ) ⊗ G` and `b ⊗ rhs`, with `G` given by its lower triangle.
fn scatter_kron(m: &mut Array2<f64>, v: &mut Array1<f64>, b: ArrayView1<f64>, g: &[f64], rhs: &[f64]) {
    let p = rhs.len();
    let h = b.len();
    for l in 0..h {
        for j in 0..p {
            v[l * p + j] += b[l] * rhs[j];
        }
        for mm in 0..h {
            let blm = b[l] * b[mm];
            if blm == 0.0 {
                continue;
            }
            for j in 0..p {
                for k in 0..p {
                    let gjk = if k <= j { g[j * p + k] } else { g[k * p + j] };
                    m[[l * p + j, mm * p + k]] += blm * gjk;
                }
            }
        }
    }
}

/// One MM update of the simultaneous fit.
pub fn mm_step_simultaneous(
    data: &Dataset,
    spec: &BasisSpec,
    grid: &QuantileGrid,
    theta_t: ArrayView1<f64>,
    eps: Perturbation,
) -> Result<Array1<f64>> {
    let (m, v) = accumulate_normal_system(data, spec, grid, theta_t, eps)?;
    solve_spd(m.view(), v.view())
}

/// Summed perturbed loss over the grid, `Σ_a Σ_i ρ^ε_{q_a}(y_i - x_iᵀ A b(q_a))`.
pub fn simultaneous_objective(
    data: &Dataset,
    spec: &BasisSpec,
    grid: &QuantileGrid,
    theta: ArrayView1<f64>,
    eps: Perturbation,
) -> Result<f64> {
    check_dims(data, spec, theta)?;
    let a = ParamMatrix::from_vec(theta, data.p(), spec.dim())?;
    let b_all = basis_matrix(spec, grid.levels())?;
    let per_level: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let q = grid.levels()[idx].value();
            let fitted = data.x().dot(&a.a.dot(&b_all.row(idx)));
            data.y().iter().zip(fitted.iter()).map(|(y, f)| rho_eps(q, y - f, eps.value())).sum::<f64>()
        })
        .collect();
    Ok(per_level.iter().sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimultaneousFit {
    pub params: ParamMatrix,
    pub iterations: usize,
    pub converged: bool,
    pub final_objective: f64,
}

fn initial_params(data: &Dataset, spec: &BasisSpec, init: &Init) -> Result<Array1<f64>> {
    let (p, h) = (data.p(), spec.dim());
    match init {
        Init::LeastSquares => {
            let beta = linalg::ols(data.x(), data.y())?;
            let mut theta = Array1::zeros(h * p);
            theta.slice_mut(ndarray::s![..p]).assign(&beta);
            Ok(theta)
        }
        Init::Zeros => Ok(Array1::zeros(h * p)),
        Init::User(v) => {
            if v.len() != h * p {
                return domain(format!("initial vector has length {}, expected {}", v.len(), h * p));
            }
            Ok(Array1::from(v.clone()))
        }
    }
}

pub fn fit_simultaneous(
    data: &Dataset,
    spec: &BasisSpec,
    grid: &QuantileGrid,
    cfg: &FitConfig,
) -> Result<SimultaneousFit> {
    fit_inner(data, spec, grid, cfg, None)
}

/// As [`fit_simultaneous`], calling `observe(t, θ_t, objective)` at the
/// initializer and after every update.
pub fn fit_simultaneous_observed<F>(
    data: &Dataset,
    spec: &BasisSpec,
    grid: &QuantileGrid,
    cfg: &FitConfig,
    mut observe: F,
) -> Result<SimultaneousFit>
where
    F: FnMut(usize, ArrayView1<f64>, f64),
{
    fit_inner(data, spec, grid, cfg, Some(&mut observe))
}

type Observer<'a> = Option<&'a mut dyn FnMut(usize, ArrayView1<f64>, f64)>;

// The objective costs as much as an update, so it is only evaluated per
// iteration when someone is watching.
fn fit_inner(
    data: &Dataset,
    spec: &BasisSpec,
    grid: &QuantileGrid,
    cfg: &FitConfig,
    mut observe: Observer<'_>,
) -> Result<SimultaneousFit> {
    cfg.validate()?;
    let (p, h) = (data.p(), spec.dim());
    if grid.len() * data.n() <= h * p {
        return domain(format!("need k*n > h*p, got k={}, n={}, h={h}, p={p}", grid.len(), data.n()));
    }
    let eps = cfg.epsilon;
    let mut theta = initial_params(data, spec, &cfg.init)?;
    if let Some(f) = observe.as_mut() {
        f(0, theta.view(), simultaneous_objective(data, spec, grid, theta.view(), eps)?);
    }
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        let next = mm_step_simultaneous(data, spec, grid, theta.view(), eps)?;
        iterations += 1;
        let change = next.iter().zip(theta.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        theta = next;
        if let Some(f) = observe.as_mut() {
            f(iterations, theta.view(), simultaneous_objective(data, spec, grid, theta.view(), eps)?);
        }
        if change < cfg.tol {
            converged = true;
            break;
        }
    }
    let objective = simultaneous_objective(data, spec, grid, theta.view(), eps)?;
    let params = ParamMatrix::from_vec(theta.view(), p, h)?;
    let bad = non_monotone_levels(&params, spec, data.mean_row().view(), grid)?;
    if !bad.is_empty() {
        warn!(
            "fitted quantile function at the mean covariate decreases at {} grid levels (first at q={})",
            bad.len(),
            bad[0]
        );
    }
    Ok(SimultaneousFit { params, iterations, converged, final_objective: objective })
}

/// `xᵀ A b(q)`.
pub fn predict_quantile(a: &ParamMatrix, spec: &BasisSpec, x: ArrayView1<f64>, q: QuantileLevel) -> Result<f64> {
    if x.len() != a.p() {
        return domain(format!("covariate vector has length {}, expected {}", x.len(), a.p()));
    }
    let beta = crate::basis::coefficient_function(a, spec, q)?;
    Ok(x.dot(&beta))
}

/// Grid levels where the predicted quantile at `x` drops below its value at
/// the previous level.
pub fn non_monotone_levels(
    a: &ParamMatrix,
    spec: &BasisSpec,
    x: ArrayView1<f64>,
    grid: &QuantileGrid,
) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    for &q in grid.levels() {
        let y = predict_quantile(a, spec, x, q)?;
        if y < prev {
            out.push(q.value());
        }
        prev = y;
    }
    Ok(out)
}
