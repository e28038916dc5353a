//! Adaptive-lasso penalized quantile regression by MM, with BIC selection of
//! the penalty level.
//!
//! The penalty `λ Σ_{j≥2} |β_j| / |β̃_j|` (intercept unpenalized) is majorized
//! by a quadratic in `β_j` anchored at `|β_j^(t)| + ε_l`, so each update is
//!
//! ```text
//! β^(t+1) = ½ (XᵀWX + 2λV)⁻¹ Xᵀ(2Wy + c),   V = diag(0, 1/(|β̃_j| (|β_j^(t)| + ε_l)))
//! ```

use log::warn;
use ndarray::{Array1, ArrayView1};
use rayon::prelude::*;

use crate::error::{domain, Error, Result};
use crate::linalg::solve_spd;
use crate::loss::{rho_eps, sum_check_loss, surrogate_unchecked, Perturbation, QuantileLevel, ResidualVector};
use crate::separate::{self, fit_quantile, weighted_normal_system, Dataset, FitConfig, Init};

/// Pilot coefficients at or below this magnitude are treated as zero.
pub const ZERO_PILOT: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyConfig {
    pub lambda_grid: Vec<f64>,
    pub epsilon_l: f64,
    pub active_threshold: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self { lambda_grid: log_lambda_grid(1e-4, 0.999, 100), epsilon_l: 1e-10, active_threshold: 1e-6 }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_grid.is_empty() {
            return domain("lambda grid is empty");
        }
        if self.lambda_grid.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
            return domain("lambda candidates must lie in (0, 1)");
        }
        if self.lambda_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return domain("lambda grid must be strictly increasing");
        }
        if !(self.epsilon_l > 0.0) {
            return domain("epsilon_l must be positive");
        }
        if !(self.active_threshold > 0.0) {
            return domain("active_threshold must be positive");
        }
        Ok(())
    }
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_lambda_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedFit {
    pub beta: Array1<f64>,
    pub lambda: f64,
    pub bic: f64,
    /// Zero-based design columns (never 0, the intercept) with `|β_j|` above the threshold.
    pub active_set: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

/// `1/|β̃_j|` for `j ≥ 2`; the intercept entry is dropped.
pub fn adaptive_weights(beta_tilde: ArrayView1<f64>) -> Result<Vec<f64>> {
    let zero: Vec<usize> = beta_tilde
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, b)| b.abs() <= ZERO_PILOT)
        .map(|(j, _)| j + 1)
        .collect();
    if !zero.is_empty() {
        return Err(Error::DegenerateWeight(zero));
    }
    Ok(beta_tilde.iter().skip(1).map(|b| 1.0 / b.abs()).collect())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return domain(format!("lambda must be a finite non-negative number, got {lambda}"));
    }
    Ok(())
}

/// One penalized MM update.
pub fn penalized_mm_step(
    data: &Dataset,
    q: QuantileLevel,
    beta_t: ArrayView1<f64>,
    beta_tilde: ArrayView1<f64>,
    lambda: f64,
    eps: Perturbation,
    eps_l: f64,
) -> Result<Array1<f64>> {
    check_lambda(lambda)?;
    let p = data.p();
    if beta_t.len() != p || beta_tilde.len() != p {
        return domain(format!("coefficient vectors must have length {p}"));
    }
    let weights = adaptive_weights(beta_tilde)?;
    let r = data.residuals(beta_t);
    let w: Vec<f64> = r.iter().map(|ri| 1.0 / (eps.value() + ri.abs())).collect();
    let (mut m, v) = weighted_normal_system(data.x(), data.y(), &w, q.linear_coef());
    for j in 1..p {
        m[[j, j]] += 2.0 * lambda * weights[j - 1] / (beta_t[j].abs() + eps_l);
    }
    solve_spd(m.view(), v.view())
}

/// Penalized perturbed objective `Σ ρ^ε(r_i) + λ Σ_{j≥2} |β_j|/|β̃_j|`.
pub fn penalized_objective(
    data: &Dataset,
    q: QuantileLevel,
    beta: ArrayView1<f64>,
    beta_tilde: ArrayView1<f64>,
    lambda: f64,
    eps: Perturbation,
) -> Result<f64> {
    let weights = adaptive_weights(beta_tilde)?;
    let r = data.residuals(beta);
    let loss: f64 = r.iter().map(|ri| rho_eps(q.value(), *ri, eps.value())).sum();
    let pen: f64 = (1..data.p()).map(|j| weights[j - 1] * beta[j].abs()).sum();
    Ok(loss + lambda * pen)
}

/// Approximate majorizer of [`penalized_objective`] anchored at `beta_t`.
#[allow(clippy::too_many_arguments)]
pub fn penalized_surrogate(
    data: &Dataset,
    q: QuantileLevel,
    beta: ArrayView1<f64>,
    beta_t: ArrayView1<f64>,
    beta_tilde: ArrayView1<f64>,
    lambda: f64,
    eps: Perturbation,
    eps_l: f64,
) -> Result<f64> {
    let weights = adaptive_weights(beta_tilde)?;
    let r = data.residuals(beta);
    let r_t = data.residuals(beta_t);
    let loss: f64 =
        r.iter().zip(r_t.iter()).map(|(ri, rt)| surrogate_unchecked(q.value(), *ri, *rt, eps.value())).sum();
    let pen: f64 = (1..data.p())
        .map(|j| {
            let anchor = beta_t[j].abs() + eps_l;
            weights[j - 1] * (0.5 * anchor + beta[j] * beta[j] / (2.0 * anchor))
        })
        .sum();
    Ok(loss + lambda * pen)
}

pub fn sigma_mle(q: QuantileLevel, residuals: &ResidualVector) -> f64 {
    let total = sum_check_loss(q.value(), residuals.as_slice());
    if total == 0.0 {
        warn!("all residuals are zero; sigma MLE is 0 and log-based criteria are undefined");
    }
    total / residuals.len() as f64
}

/// Quantile BIC, `ln(Σ ρ_q(r_i)) + |S| ln(n) / (2n)`.
pub fn bic(q: QuantileLevel, residuals: &ResidualVector, active_size: usize, n: usize) -> Result<f64> {
    let total = sum_check_loss(q.value(), residuals.as_slice());
    bic_from_loss(total, active_size, n)
}

pub(crate) fn bic_from_loss(total: f64, active_size: usize, n: usize) -> Result<f64> {
    if !(total > 0.0) {
        return Err(Error::DegenerateFit(format!("total check loss is {total}; BIC is undefined")));
    }
    if n == 0 {
        return domain("sample size must be positive");
    }
    let n = n as f64;
    Ok(total.ln() + active_size as f64 * n.ln() / (2.0 * n))
}

pub fn fit_penalized(
    data: &Dataset,
    q: QuantileLevel,
    lambda: f64,
    beta_tilde: ArrayView1<f64>,
    cfg: &FitConfig,
    pcfg: &PenaltyConfig,
) -> Result<PenalizedFit> {
    fit_penalized_observed(data, q, lambda, beta_tilde, cfg, pcfg, |_, _| {})
}

/// As [`fit_penalized`], calling `observe(t, β_t)` at the start and after every update.
pub fn fit_penalized_observed<F>(
    data: &Dataset,
    q: QuantileLevel,
    lambda: f64,
    beta_tilde: ArrayView1<f64>,
    cfg: &FitConfig,
    pcfg: &PenaltyConfig,
    mut observe: F,
) -> Result<PenalizedFit>
where
    F: FnMut(usize, ArrayView1<f64>),
{
    cfg.validate()?;
    check_lambda(lambda)?;
    adaptive_weights(beta_tilde)?;
    let mut beta = separate::initial_theta(data, &cfg.init)?;
    observe(0, beta.view());
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        let next = penalized_mm_step(data, q, beta.view(), beta_tilde, lambda, cfg.epsilon, pcfg.epsilon_l)?;
        iterations += 1;
        let change = next.iter().zip(beta.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        beta = next;
        observe(iterations, beta.view());
        if change < cfg.tol {
            converged = true;
            break;
        }
    }
    let active_set: Vec<usize> = (1..data.p()).filter(|&j| beta[j].abs() > pcfg.active_threshold).collect();
    let r = data.residuals(beta.view());
    let total = sum_check_loss(q.value(), r.as_slice().expect("contiguous"));
    let bic = bic_from_loss(total, active_set.len(), data.n())?;
    Ok(PenalizedFit { beta, lambda, bic, active_set, iterations, converged })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub lambda: f64,
    pub bic: f64,
    pub active_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub fit: PenalizedFit,
    pub lambda_opt: f64,
    pub beta_tilde: Array1<f64>,
    pub path: Vec<PathPoint>,
}

/// Pilot fit, one penalized fit per candidate λ, and the minimum-BIC choice
/// (ties go to the smallest λ). Each candidate starts from the pilot fit.
pub fn select_lambda(data: &Dataset, q: QuantileLevel, pcfg: &PenaltyConfig, cfg: &FitConfig) -> Result<Selection> {
    pcfg.validate()?;
    let pilot = fit_quantile(data, q, cfg)?;
    let beta_tilde = pilot.theta;
    adaptive_weights(beta_tilde.view())?;
    let warm = FitConfig { init: Init::User(beta_tilde.to_vec()), ..cfg.clone() };
    let fits: Vec<PenalizedFit> = pcfg
        .lambda_grid
        .par_iter()
        .map(|&lambda| fit_penalized(data, q, lambda, beta_tilde.view(), &warm, pcfg))
        .collect::<Result<_>>()?;
    let path = fits.iter().map(|f| PathPoint { lambda: f.lambda, bic: f.bic, active_size: f.active_set.len() }).collect();
    let mut best = 0;
    for (i, f) in fits.iter().enumerate() {
        if f.bic < fits[best].bic {
            best = i;
        }
    }
    let fit = fits.into_iter().nth(best).expect("nonempty grid");
    let lambda_opt = fit.lambda;
    Ok(Selection { fit, lambda_opt, beta_tilde, path })
}
