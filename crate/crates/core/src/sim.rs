//! Simulation scenarios, theoretical quantile oracles and the IMSE harness.
//!
//! Two data-generating families:
//!
//! * heterogeneous linear: `Y = 1 + 3X + (1 + 2X) e`, `X ~ U(0, 1)`, whose
//!   conditional quantile is `[1 + Q_q(e)] + [3 + 2 Q_q(e)] x`;
//! * generalized gamma with `μ(x) = a + bx`, `σ(x) = e^{c+dx}`,
//!   `k(x) = e^{f+gx}`, sampled by inverse CDF.
//!
//! Replicate `l` draws from `ChaCha8Rng::seed_from_u64(seed)` on stream `l`,
//! so every replicate is fixed by `(seed, l)` whatever the thread schedule.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Exp1, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::Deserialize;
use statrs::function::gamma::ln_gamma;

use crate::basis::{coefficient_function, BasisSpec};
use crate::covariate::{transform_design, CovariateTransform, KnotSpec};
use crate::dist::{beta_quantile, gamma_quantile, normal_quantile, student_t_quantile, GAMMA_LARGE_SHAPE};
use crate::error::{domain, Error, Result};
use crate::kernel::{dk_quantiles, KernelConfig, PointSample};
use crate::loss::{Perturbation, QuantileLevel};
use crate::separate::{fit_quantile, Dataset, FitConfig};
use crate::simultaneous::{fit_simultaneous, QuantileGrid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorDistribution {
    Normal,
    StudentT { df: f64 },
    /// `5 (B - ½)` with `B ~ Beta(alpha, beta)`.
    BetaShifted { alpha: f64, beta: f64 },
    /// `ln E` with `E ~ Exp(1)`.
    LogExponential,
    Logistic,
}

impl ErrorDistribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ErrorDistribution::StudentT { df } if !(df > 0.0) => domain(format!("t degrees of freedom must be positive, got {df}")),
            ErrorDistribution::BetaShifted { alpha, beta } if !(alpha > 0.0 && beta > 0.0) => {
                domain(format!("beta parameters must be positive, got ({alpha}, {beta})"))
            }
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ErrorDistribution::Normal => rng.sample(StandardNormal),
            ErrorDistribution::StudentT { df } => StudentT::new(df).expect("validated").sample(rng),
            ErrorDistribution::BetaShifted { alpha, beta } => {
                5.0 * (Beta::new(alpha, beta).expect("validated").sample(rng) - 0.5)
            }
            ErrorDistribution::LogExponential => {
                let e: f64 = rng.sample(Exp1);
                e.ln()
            }
            ErrorDistribution::Logistic => {
                let u: f64 = rng.sample(Open01);
                u.ln() - (-u).ln_1p()
            }
        }
    }
}

impl fmt::Display for ErrorDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ErrorDistribution::Normal => f.write_str("normal"),
            ErrorDistribution::StudentT { df } => write!(f, "t:{df}"),
            ErrorDistribution::BetaShifted { alpha, beta } => write!(f, "beta:{alpha},{beta}"),
            ErrorDistribution::LogExponential => f.write_str("logexp"),
            ErrorDistribution::Logistic => f.write_str("logistic"),
        }
    }
}

impl FromStr for ErrorDistribution {
    type Err = Error;

    /// `normal`, `t:10`, `beta:0.5,0.5`, `logexp`, `logistic`.
    fn from_str(s: &str) -> Result<Self> {
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad number `{t}` in `{s}`")));
        let d = match s.trim() {
            "normal" => ErrorDistribution::Normal,
            "logexp" => ErrorDistribution::LogExponential,
            "logistic" => ErrorDistribution::Logistic,
            other => {
                if let Some(df) = other.strip_prefix("t:") {
                    ErrorDistribution::StudentT { df: num(df)? }
                } else if let Some(ab) = other.strip_prefix("beta:") {
                    let (a, b) = ab.split_once(',').ok_or_else(|| Error::Parse(format!("expected beta:a,b, got `{s}`")))?;
                    ErrorDistribution::BetaShifted { alpha: num(a)?, beta: num(b)? }
                } else {
                    return Err(Error::Parse(format!("unknown error distribution `{s}`")));
                }
            }
        };
        d.validate()?;
        Ok(d)
    }
}

/// Quantile `Q_q(e)` of the error law.
pub fn error_quantile(dist: ErrorDistribution, q: QuantileLevel) -> Result<f64> {
    dist.validate()?;
    let p = q.value();
    match dist {
        ErrorDistribution::Normal => Ok(normal_quantile(p)),
        ErrorDistribution::StudentT { df } => student_t_quantile(p, df),
        ErrorDistribution::BetaShifted { alpha, beta } => Ok(5.0 * (beta_quantile(p, alpha, beta)? - 0.5)),
        ErrorDistribution::LogExponential => Ok((-(-p).ln_1p()).ln()),
        ErrorDistribution::Logistic => Ok(p.ln() - (-p).ln_1p()),
    }
}

/// `[1 + Q_q(e)] + [3 + 2 Q_q(e)] x`.
pub fn theoretical_quantile(x: f64, q: QuantileLevel, dist: ErrorDistribution) -> Result<f64> {
    let e = error_quantile(dist, q)?;
    Ok(hetero_quantile(x, e))
}

fn hetero_quantile(x: f64, e: f64) -> f64 {
    (1.0 + e) + (3.0 + 2.0 * e) * x
}

pub fn sample_hetero(dist: ErrorDistribution, n: usize, seed: u64) -> Result<PointSample> {
    sample_hetero_with(dist, n, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn sample_hetero_with<R: Rng + ?Sized>(dist: ErrorDistribution, n: usize, rng: &mut R) -> Result<PointSample> {
    dist.validate()?;
    if n == 0 {
        return domain("sample size must be positive");
    }
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let xi: f64 = rng.random();
        let e = dist.sample(rng);
        x.push(xi);
        y.push(1.0 + 3.0 * xi + (1.0 + 2.0 * xi) * e);
    }
    PointSample::new(x, y)
}

/// `(1/N) Σ_l Σ_i (truth - predicted)²` over `N × n` matrices.
pub fn imse(predicted: ArrayView2<f64>, truth: ArrayView2<f64>) -> Result<f64> {
    if predicted.dim() != truth.dim() {
        return domain(format!("shape mismatch {:?} vs {:?}", predicted.dim(), truth.dim()));
    }
    if predicted.nrows() == 0 {
        return domain("no replicates");
    }
    let total: f64 = predicted.iter().zip(truth.iter()).map(|(a, b)| (b - a).powi(2)).sum();
    Ok(total / predicted.nrows() as f64)
}

fn check_positive(pairs: &[(&str, f64)]) -> Result<()> {
    for (name, v) in pairs {
        if !(*v > 0.0) || !v.is_finite() {
            return domain(format!("{name} must be positive and finite, got {v}"));
        }
    }
    Ok(())
}

/// `(θ, β, k) ↦ (μ, σ, k)` with `μ = ln θ + ln(k)/β`, `σ = 1/(β√k)`.
pub fn gg_convert(theta: f64, beta: f64, k: f64) -> Result<(f64, f64, f64)> {
    check_positive(&[("theta", theta), ("beta", beta), ("k", k)])?;
    Ok((theta.ln() + k.ln() / beta, 1.0 / (beta * k.sqrt()), k))
}

/// Inverse of [`gg_convert`]: `(θ, β, k) = (e^μ / k^{σ√k}, 1/(σ√k), k)`.
pub fn gg_unconvert(mu: f64, sigma: f64, k: f64) -> Result<(f64, f64, f64)> {
    check_positive(&[("sigma", sigma), ("k", k)])?;
    if !mu.is_finite() {
        return domain(format!("mu must be finite, got {mu}"));
    }
    let s = sigma * k.sqrt();
    Ok(((mu - s * k.ln()).exp(), 1.0 / s, k))
}

/// Density `β / (θ^{kβ} Γ(k)) y^{kβ-1} exp(-(y/θ)^β)`; zero for `y ≤ 0`.
pub fn gg_pdf(y: f64, theta: f64, beta: f64, k: f64) -> Result<f64> {
    check_positive(&[("theta", theta), ("beta", beta), ("k", k)])?;
    if y <= 0.0 {
        return Ok(0.0);
    }
    let ln = beta.ln() - k * beta * theta.ln() - ln_gamma(k) + (k * beta - 1.0) * y.ln() - (y / theta).powf(beta);
    Ok(ln.exp())
}

/// `ln(r(q; k) / k)` accurate for large shapes, where `r/k → 1`.
fn ln_gamma_ratio(p: f64, k: f64) -> Result<f64> {
    if k > GAMMA_LARGE_SHAPE {
        let c = 1.0 / (9.0 * k);
        return Ok(3.0 * (normal_quantile(p) * c.sqrt() - c).ln_1p());
    }
    let r = gamma_quantile(p, k)?;
    Ok(((r - k) / k).ln_1p())
}

/// `e^μ (r(q; k) / k)^{σ√k}`.
pub fn gg_quantile(q: QuantileLevel, mu: f64, sigma: f64, k: f64) -> Result<f64> {
    check_positive(&[("sigma", sigma), ("k", k)])?;
    Ok((mu + sigma * k.sqrt() * ln_gamma_ratio(q.value(), k)?).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct GGParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub f: f64,
    pub g: f64,
}

impl GGParams {
    /// First published parameter set, sampled with `X ~ U(0, 6)`.
    pub fn set1() -> Self {
        Self { a: 1.384, b: 0.092, c: -1.021, d: 0.008, f: -3.493, g: 4.766 }
    }

    /// Second published parameter set, sampled with `X ~ U(0, 1)`.
    pub fn set2() -> Self {
        Self { a: -2.0, b: -0.75, c: -0.5, d: -4.0, f: -0.2, g: -1.0 }
    }

    /// `(μ, σ, k)` at `x`.
    pub fn at(&self, x: f64) -> (f64, f64, f64) {
        (self.a + self.b * x, (self.c + self.d * x).exp(), (self.f + self.g * x).exp())
    }

    pub fn quantile(&self, x: f64, q: QuantileLevel) -> Result<f64> {
        let (mu, sigma, k) = self.at(x);
        gg_quantile(q, mu, sigma, k)
    }
}

pub fn gg_sample(params: &GGParams, x_range: (f64, f64), n: usize, seed: u64) -> Result<PointSample> {
    gg_sample_with(params, x_range, n, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn gg_sample_with<R: Rng + ?Sized>(
    params: &GGParams,
    x_range: (f64, f64),
    n: usize,
    rng: &mut R,
) -> Result<PointSample> {
    let (lo, hi) = x_range;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return domain(format!("invalid x range ({lo}, {hi})"));
    }
    if n == 0 {
        return domain("sample size must be positive");
    }
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let xi = lo + (hi - lo) * rng.random::<f64>();
        let u: f64 = rng.sample(Open01);
        x.push(xi);
        y.push(params.quantile(xi, QuantileLevel::new(u)?)?);
    }
    PointSample::new(x, y)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Model {
    Hetero(ErrorDistribution),
    GeneralizedGamma { params: GGParams, x_range: (f64, f64) },
}

impl Model {
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<PointSample> {
        match self {
            Model::Hetero(d) => sample_hetero_with(*d, n, rng),
            Model::GeneralizedGamma { params, x_range } => gg_sample_with(params, *x_range, n, rng),
        }
    }

    /// Precomputed `x ↦ Q_q(Y | x)` for one level.
    fn truth(&self, q: QuantileLevel) -> Result<Truth> {
        Ok(match self {
            Model::Hetero(d) => Truth::Hetero(error_quantile(*d, q)?),
            Model::GeneralizedGamma { params, .. } => Truth::GG(*params, q),
        })
    }
}

enum Truth {
    Hetero(f64),
    GG(GGParams, QuantileLevel),
}

impl Truth {
    fn at(&self, x: f64) -> Result<f64> {
        match self {
            Truth::Hetero(e) => Ok(hetero_quantile(x, *e)),
            Truth::GG(p, q) => p.quantile(x, *q),
        }
    }
}

/// A quantile estimator compared in the IMSE tables.
#[derive(Debug, Clone, PartialEq)]
pub enum Estimator {
    /// One MM fit per level on the design `(1, x)`.
    Separate,
    /// Simultaneous fit on `(1, x)` with a quantile basis.
    Simultaneous(BasisSpec),
    /// Simultaneous fit on a natural-spline expansion of `x`.
    SplineSimultaneous { knots: KnotSpec, basis: BasisSpec },
    DoubleKernel { h1: f64, h2: f64 },
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimator::Separate => f.write_str("separate"),
            Estimator::Simultaneous(b) => write!(f, "mm:{b}"),
            Estimator::SplineSimultaneous { knots, basis } => write!(f, "mmx:{knots}:{basis}"),
            Estimator::DoubleKernel { h1, h2 } => write!(f, "dk:{h1}:{h2}"),
        }
    }
}

impl FromStr for Estimator {
    type Err = Error;

    /// `separate`, `mm:<basis>`, `mmx:<x-knots>:<basis>`, `dk:<h1>:<h2>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "separate" {
            return Ok(Estimator::Separate);
        }
        if let Some(b) = s.strip_prefix("mm:") {
            return Ok(Estimator::Simultaneous(b.parse()?));
        }
        if let Some(rest) = s.strip_prefix("mmx:") {
            let (k, b) = rest.split_once(':').ok_or_else(|| Error::Parse(format!("expected mmx:<knots>:<basis>, got `{s}`")))?;
            return Ok(Estimator::SplineSimultaneous { knots: k.parse()?, basis: b.parse()? });
        }
        if let Some(rest) = s.strip_prefix("dk:") {
            let (a, b) = rest.split_once(':').ok_or_else(|| Error::Parse(format!("expected dk:<h1>:<h2>, got `{s}`")))?;
            let num = |t: &str| t.parse::<f64>().map_err(|_| Error::Parse(format!("bad bandwidth `{t}`")));
            let (h1, h2) = (num(a)?, num(b)?);
            KernelConfig::new(h1, h2)?;
            return Ok(Estimator::DoubleKernel { h1, h2 });
        }
        Err(Error::Parse(format!("unknown estimator `{s}`")))
    }
}

/// Settings shared by every MM fit in a study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub fit: FitConfig,
    pub grid: QuantileGrid,
}

impl Default for StudyConfig {
    /// Looser than the single-fit defaults: replicate studies run thousands of fits.
    fn default() -> Self {
        let fit = FitConfig { max_iter: 2000, tol: 1e-7, ..FitConfig::default() };
        Self { fit, grid: QuantileGrid::default() }
    }
}

impl Estimator {
    /// Predictions at every sample point, one vector per level.
    pub fn predict(&self, sample: &PointSample, levels: &[QuantileLevel], cfg: &StudyConfig) -> Result<Vec<Vec<f64>>> {
        let n = sample.len();
        let xs = Array2::from_shape_vec((n, 1), sample.x().to_vec()).expect("shape");
        let y = ndarray::Array1::from(sample.y().to_vec());
        match self {
            Estimator::Separate => {
                let data = Dataset::with_intercept(y, xs.view())?;
                levels
                    .iter()
                    .map(|&q| {
                        let fit = fit_quantile(&data, q, &cfg.fit)?;
                        Ok(data.x().dot(&fit.theta).to_vec())
                    })
                    .collect()
            }
            Estimator::Simultaneous(basis) => {
                let data = Dataset::with_intercept(y, xs.view())?;
                simultaneous_predictions(&data, basis, levels, cfg)
            }
            Estimator::SplineSimultaneous { knots, basis } => {
                let t = CovariateTransform::from_spec(knots, xs.column(0))?;
                let design = transform_design(xs.view(), &[t])?;
                let data = Dataset::new(y, design)?;
                simultaneous_predictions(&data, basis, levels, cfg)
            }
            Estimator::DoubleKernel { h1, h2 } => {
                let k = KernelConfig::new(*h1, *h2)?;
                let rows: Vec<Vec<f64>> =
                    sample.x().iter().map(|&x| dk_quantiles(sample, x, levels, &k)).collect::<Result<_>>()?;
                Ok((0..levels.len()).map(|j| rows.iter().map(|r| r[j]).collect()).collect())
            }
        }
    }
}

fn simultaneous_predictions(
    data: &Dataset,
    basis: &BasisSpec,
    levels: &[QuantileLevel],
    cfg: &StudyConfig,
) -> Result<Vec<Vec<f64>>> {
    let fit = fit_simultaneous(data, basis, &cfg.grid, &cfg.fit)?;
    levels
        .iter()
        .map(|&q| {
            let beta = coefficient_function(&fit.params, basis, q)?;
            Ok(data.x().dot(&beta).to_vec())
        })
        .collect()
}

/// IMSE by method (rows) and quantile level (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct ImseTable {
    pub methods: Vec<String>,
    pub levels: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl ImseTable {
    pub fn get(&self, method: &str, q: f64) -> Option<f64> {
        let i = self.methods.iter().position(|m| m == method)?;
        let j = self.levels.iter().position(|l| *l == q)?;
        Some(self.values[i][j])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method");
        for q in &self.levels {
            out.push_str(&format!(",q={q}"));
        }
        out.push('\n');
        for (m, row) in self.methods.iter().zip(&self.values) {
            out.push_str(m);
            for v in row {
                out.push(',');
                out.push_str(&format_sig(*v));
            }
            out.push('\n');
        }
        out
    }
}

/// 15 significant digits, scientific notation.
pub fn format_sig(v: f64) -> String {
    format!("{v:.14e}")
}

/// A full replicate study.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub model: Model,
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
    pub estimators: Vec<Estimator>,
    pub levels: Vec<QuantileLevel>,
    pub study: StudyConfig,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return domain(format!("sample size must be at least 2, got {}", self.n));
        }
        if self.replicates == 0 {
            return domain("need at least one replicate");
        }
        if self.estimators.is_empty() || self.levels.is_empty() {
            return domain("scenario needs estimators and quantile levels");
        }
        if let Model::Hetero(d) = self.model {
            d.validate()?;
        }
        self.study.fit.validate()
    }

    /// Replicate `l`'s sample.
    pub fn replicate_sample(&self, l: usize) -> Result<PointSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(l as u64);
        self.model.sample(self.n, &mut rng)
    }

    /// Squared-error sums `[method][level]` for one replicate.
    fn replicate_errors(&self, l: usize, truths: &[Truth]) -> Result<Vec<Vec<f64>>> {
        let sample = self.replicate_sample(l)?;
        let truth: Vec<Vec<f64>> =
            truths.iter().map(|t| sample.x().iter().map(|&x| t.at(x)).collect::<Result<_>>()).collect::<Result<_>>()?;
        self.estimators
            .iter()
            .map(|e| {
                let pred = e.predict(&sample, &self.levels, &self.study)?;
                Ok(pred
                    .iter()
                    .zip(&truth)
                    .map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum())
                    .collect())
            })
            .collect()
    }

    pub fn run(&self) -> Result<ImseTable> {
        self.validate()?;
        let truths: Vec<Truth> = self.levels.iter().map(|&q| self.model.truth(q)).collect::<Result<_>>()?;
        let per_rep: Vec<Vec<Vec<f64>>> =
            (0..self.replicates).into_par_iter().map(|l| self.replicate_errors(l, &truths)).collect::<Result<_>>()?;
        let (m, k) = (self.estimators.len(), self.levels.len());
        let mut values = vec![vec![0.0; k]; m];
        for rep in &per_rep {
            for i in 0..m {
                for j in 0..k {
                    values[i][j] += rep[i][j];
                }
            }
        }
        let nrep = self.replicates as f64;
        values.iter_mut().flatten().for_each(|v| *v /= nrep);
        Ok(ImseTable {
            methods: self.estimators.iter().map(ToString::to_string).collect(),
            levels: self.levels.iter().map(|q| q.value()).collect(),
            values,
        })
    }
}

/// On-disk scenario file (TOML `key = value` lines).
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    model: String,
    dist: Option<String>,
    gg_set: Option<u8>,
    gg_params: Option<GGParams>,
    x_range: Option<(f64, f64)>,
    n: usize,
    replicates: usize,
    seed: u64,
    estimators: Vec<String>,
    quantiles: Vec<f64>,
    grid: Option<usize>,
    max_iter: Option<usize>,
    tol: Option<f64>,
    epsilon: Option<f64>,
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let f: ScenarioFile = toml::from_str(s).map_err(|e| Error::Parse(e.to_string().replace('\n', " ")))?;
        let model = match f.model.as_str() {
            "hetero" => {
                let d = f.dist.as_deref().ok_or_else(|| Error::Parse("hetero model needs `dist`".into()))?;
                Model::Hetero(d.parse()?)
            }
            "gg" => {
                let (params, default_range) = match (f.gg_params, f.gg_set) {
                    (Some(p), _) => (p, (0.0, 1.0)),
                    (None, Some(1)) => (GGParams::set1(), (0.0, 6.0)),
                    (None, Some(2)) => (GGParams::set2(), (0.0, 1.0)),
                    _ => return Err(Error::Parse("gg model needs `gg_set = 1|2` or `gg_params`".into())),
                };
                Model::GeneralizedGamma { params, x_range: f.x_range.unwrap_or(default_range) }
            }
            other => return Err(Error::Parse(format!("unknown model `{other}`"))),
        };
        let mut study = StudyConfig::default();
        if let Some(k) = f.grid {
            study.grid = QuantileGrid::uniform(k)?;
        }
        if let Some(m) = f.max_iter {
            study.fit.max_iter = m;
        }
        if let Some(t) = f.tol {
            study.fit.tol = t;
        }
        if let Some(e) = f.epsilon {
            study.fit.epsilon = Perturbation::new(e)?;
        }
        let scenario = Scenario {
            model,
            n: f.n,
            replicates: f.replicates,
            seed: f.seed,
            estimators: f.estimators.iter().map(|e| e.parse()).collect::<Result<_>>()?,
            levels: f.quantiles.iter().map(|&q| QuantileLevel::new(q)).collect::<Result<_>>()?,
            study,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}
