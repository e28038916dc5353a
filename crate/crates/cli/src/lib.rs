//! `mmqr` command-line front end.
//!
//! Every subcommand writes one CSV (to `--out` or stdout) and a run manifest
//! recording the resolved options, seed, toolkit version and input digests
//! (`<out>.manifest.toml`, or stderr when writing to stdout). Numbers are
//! printed with 15 significant digits, so identical inputs give
//! byte-identical output. Errors print a single `error: <category>: ...`
//! line.

pub mod data;
pub mod error;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mmqr::basis::coefficient_function;
use mmqr::covariate::{cv_loss, default_validation_levels, kfold_split, transform_design, CovariateTransform, KnotSpec};
use mmqr::kernel::{dk_quantiles, lcv_log_likelihood, KernelConfig, PointSample};
use mmqr::penalized::{log_lambda_grid, select_lambda, PenaltyConfig};
use mmqr::sim::{imse, Scenario};
use mmqr::{fit_quantile, fit_simultaneous, BasisSpec, Dataset, FitConfig, Perturbation, QuantileGrid, QuantileLevel};
use ndarray::Array2;
use serde::Serialize;

pub use data::{load_csv, Loaded, Table};
pub use error::{CliError, Result};

#[derive(Debug, Parser, Serialize)]
#[command(name = "mmqr", version, about = "Quantile regression by majorization-minimization")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output CSV path (default: stdout).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Serialize)]
struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    data: PathBuf,

    /// Name of the response column.
    #[arg(long, default_value = "y")]
    response: String,
}

#[derive(Debug, Args, Serialize)]
struct FitArgs {
    /// Loss perturbation ε.
    #[arg(long, default_value_t = 1e-10)]
    epsilon: f64,

    #[arg(long = "max-iter", default_value_t = 10_000)]
    max_iter: usize,

    /// Stop when no parameter moves more than this.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
}

impl FitArgs {
    fn config(&self) -> Result<FitConfig> {
        let cfg = FitConfig {
            epsilon: Perturbation::new(self.epsilon)?,
            max_iter: self.max_iter,
            tol: self.tol,
            ..FitConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
enum Command {
    /// Separate MM fits at one or more quantile levels.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated quantile levels.
        #[arg(long, default_value = "0.5")]
        q: String,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Simultaneous fit; emits β̂(q) over the quantile grid.
    Curves {
        #[command(flatten)]
        data: DataArgs,
        /// `logistic`, `ns:<k1,k2,...>` or `ns:seqK`.
        #[arg(long, default_value = "logistic")]
        basis: String,
        /// Grid size k (levels i/(k+1)).
        #[arg(long, visible_alias = "quantile-grid", default_value_t = 999)]
        grid: usize,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Adaptive-lasso fit with BIC choice of λ.
    Lasso {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 0.5)]
        q: f64,
        /// `lo:hi:count` (log-spaced) or a comma-separated list.
        #[arg(long = "lambda-grid", default_value = "0.0001:0.999:100")]
        lambda_grid: String,
        #[arg(long = "epsilon-l", default_value_t = 1e-10)]
        epsilon_l: f64,
        /// Magnitude above which a coefficient counts as selected.
        #[arg(long, default_value_t = 1e-6)]
        threshold: f64,
        /// Per-λ CSV (default `<out>.path.csv`; appended to stdout otherwise).
        #[arg(long = "path-out")]
        path_out: Option<PathBuf>,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Natural-spline expansion of covariates; writes a CSV ready for `curves`/`cv`.
    Transform {
        #[command(flatten)]
        data: DataArgs,
        /// Covariates to expand (repeatable; default all).
        #[arg(long = "column")]
        columns: Vec<String>,
        /// `seqK` (K knots spanning the observed range) or a knot list.
        #[arg(long, default_value = "seq3")]
        knots: String,
    },
    /// k-fold cross-validated check loss over x-knot and q-basis choices.
    Cv {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long = "column")]
        columns: Vec<String>,
        /// `;`-separated x-knot specs.
        #[arg(long, default_value = "seq3")]
        knots: String,
        /// `;`-separated quantile bases.
        #[arg(long, default_value = "logistic")]
        basis: String,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, visible_alias = "quantile-grid", default_value_t = 999)]
        grid: usize,
        /// Comma-separated validation levels.
        #[arg(long, default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
        validation: String,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Double-kernel conditional quantile curves.
    Dk {
        #[command(flatten)]
        data: DataArgs,
        /// The covariate (default: the only non-response column).
        #[arg(long)]
        column: Option<String>,
        #[arg(long)]
        h1: f64,
        #[arg(long, default_value_t = 1e-4)]
        h2: f64,
        #[arg(long, default_value = "0.05,0.1,0.25,0.5,0.75,0.9,0.95")]
        quantiles: String,
        /// Comma-separated evaluation points (default: `--points` spanning the data).
        #[arg(long)]
        at: Option<String>,
        #[arg(long, default_value_t = 50)]
        points: usize,
    },
    /// Leave-one-out likelihood over bandwidth grids.
    Lcv {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        column: Option<String>,
        /// Comma-separated h1 values.
        #[arg(long)]
        h1: String,
        /// Comma-separated h2 values.
        #[arg(long, default_value = "0.0001")]
        h2: String,
    },
    /// Run a simulation scenario file and print its IMSE table.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the replicate count.
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// IMSE of a predictions matrix against a truth matrix (headerless CSVs, one replicate per row).
    Imse {
        #[arg(long)]
        predicted: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
}

/// 15 significant digits.
pub fn fmt(v: f64) -> String {
    format!("{v:.14e}")
}

/// CSV field quoting for specs that contain commas.
fn quote(field: &str) -> String {
    if field.contains([',', '"']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn parse_f64_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("bad {what} value `{t}`"))))
        .collect()
}

fn parse_levels(s: &str) -> Result<Vec<QuantileLevel>> {
    parse_f64_list(s, "quantile")?.into_iter().map(|q| Ok(QuantileLevel::new(q)?)).collect()
}

fn parse_lambda_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let lo = parse_f64_list(parts[0], "lambda")?[0];
        let hi = parse_f64_list(parts[1], "lambda")?[0];
        let count = parts[2].trim().parse::<usize>().map_err(|_| CliError::Usage(format!("bad lambda count `{}`", parts[2])))?;
        if count == 0 {
            return Err(CliError::Usage("lambda count must be positive".into()));
        }
        return Ok(log_lambda_grid(lo, hi, count));
    }
    parse_f64_list(s, "lambda")
}

/// Everything one subcommand produced.
struct Report {
    csv: String,
    /// Secondary CSV with its default path suffix.
    extra: Option<(String, Option<PathBuf>, String)>,
    inputs: BTreeMap<String, String>,
    seed: Option<u64>,
}

impl Report {
    fn new(csv: String) -> Self {
        Self { csv, extra: None, inputs: BTreeMap::new(), seed: None }
    }

    fn input(mut self, path: &Path, digest: &str) -> Self {
        self.inputs.insert(path.display().to_string(), digest.to_string());
        self
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    subcommand: &'a str,
    version: &'a str,
    seed: Option<u64>,
    inputs: &'a BTreeMap<String, String>,
    threads: Option<usize>,
    options: &'a Command,
}

fn subcommand_name(c: &Command) -> &'static str {
    match c {
        Command::Fit { .. } => "fit",
        Command::Curves { .. } => "curves",
        Command::Lasso { .. } => "lasso",
        Command::Transform { .. } => "transform",
        Command::Cv { .. } => "cv",
        Command::Dk { .. } => "dk",
        Command::Lcv { .. } => "lcv",
        Command::Simulate { .. } => "simulate",
        Command::Imse { .. } => "imse",
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn emit(cli: &Cli, report: Report) -> Result<()> {
    let manifest = Manifest {
        subcommand: subcommand_name(&cli.command),
        version: env!("CARGO_PKG_VERSION"),
        seed: report.seed,
        inputs: &report.inputs,
        threads: cli.threads,
        options: &cli.command,
    };
    let manifest = toml::to_string(&manifest).map_err(|e| CliError::Usage(format!("manifest: {e}")))?;
    match &cli.out {
        Some(path) => {
            write_file(path, &report.csv)?;
            write_file(&with_suffix(path, ".manifest.toml"), &manifest)?;
            if let Some((text, explicit, suffix)) = &report.extra {
                let target = explicit.clone().unwrap_or_else(|| with_suffix(path, suffix));
                write_file(&target, text)?;
            }
        }
        None => {
            print!("{}", report.csv);
            if let Some((text, explicit, _)) = &report.extra {
                match explicit {
                    Some(p) => write_file(p, text)?,
                    None => print!("\n{text}"),
                }
            }
            eprint!("{manifest}");
        }
    }
    Ok(())
}

fn covariate_indices(table: &Table, response: &str, names: &[String]) -> Result<Vec<usize>> {
    let yj = table.column_index(response)?;
    if names.is_empty() {
        return Ok((0..table.header.len()).filter(|&j| j != yj).collect());
    }
    names.iter().map(|n| table.column_index(n)).collect()
}

fn single_covariate(table: &Table, response: &str, column: &Option<String>) -> Result<usize> {
    match column {
        Some(c) => table.column_index(c),
        None => {
            let others = covariate_indices(table, response, &[])?;
            match others.as_slice() {
                [j] => Ok(*j),
                _ => Err(CliError::Usage(format!("{} covariates present; choose one with --column", others.len()))),
            }
        }
    }
}

/// Spline-expand `expand` columns (with `knots`), keep the other covariates linear.
fn expanded_design(table: &Table, response: &str, expand: &[usize], knots: &KnotSpec) -> Result<(Dataset, Vec<String>)> {
    let yj = table.column_index(response)?;
    let n = table.rows.len();
    let mut names = vec!["intercept".to_string()];
    let mut blocks: Vec<Array2<f64>> = Vec::new();
    for j in (0..table.header.len()).filter(|&j| j != yj) {
        let col = table.column(j);
        if expand.contains(&j) {
            let t = CovariateTransform::from_spec(knots, col.view())?;
            let block = transform_design(col.view().insert_axis(ndarray::Axis(1)), std::slice::from_ref(&t))?;
            let name = &table.header[j];
            names.push(name.clone());
            names.extend((1..t.dim() - 1).map(|s| format!("{name}_s{s}")));
            blocks.push(block.slice(ndarray::s![.., 1..]).to_owned());
        } else {
            names.push(table.header[j].clone());
            blocks.push(col.insert_axis(ndarray::Axis(1)));
        }
    }
    let width = 1 + blocks.iter().map(|b| b.ncols()).sum::<usize>();
    let mut x = Array2::<f64>::ones((n, width));
    let mut c = 1;
    for b in &blocks {
        x.slice_mut(ndarray::s![.., c..c + b.ncols()]).assign(b);
        c += b.ncols();
    }
    let data = Dataset::new(table.column(yj), x).map_err(|e| match e {
        mmqr::Error::RankDeficient { column } => CliError::Rank {
            column: names[column].clone(),
            earlier: names[..column].iter().map(|t| format!("`{t}`")).collect::<Vec<_>>().join(", "),
        },
        other => other.into(),
    })?;
    Ok((data, names))
}

fn read_matrix(path: &Path) -> Result<(Array2<f64>, String)> {
    let bytes = data::read_bytes(path)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(&bytes[..]);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Csv(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let row = record
            .iter()
            .enumerate()
            .map(|(j, c)| {
                c.parse::<f64>().map_err(|_| CliError::Cell {
                    line,
                    column: (j + 1).to_string(),
                    message: format!("`{c}` is not a number"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let m = Array2::from_shape_vec((rows.len(), ncols), flat).map_err(|e| CliError::Csv(e.to_string()))?;
    Ok((m, data::digest(&bytes)))
}

fn execute(cli: &Cli) -> Result<Report> {
    match &cli.command {
        Command::Fit { data, q, fit } => {
            let levels = parse_levels(q)?;
            let cfg = fit.config()?;
            let loaded = load_csv(&data.data, &data.response)?;
            let mut cols = Vec::new();
            for &ql in &levels {
                let f = fit_quantile(&loaded.data, ql, &cfg)?;
                if !f.converged {
                    eprintln!("warning: q={} stopped after {} iterations without converging", ql, f.iterations);
                }
                cols.push(f.theta);
            }
            let mut csv = String::from("term");
            for ql in &levels {
                write!(csv, ",q={ql}").unwrap();
            }
            csv.push('\n');
            for (j, term) in loaded.terms.iter().enumerate() {
                csv.push_str(term);
                for c in &cols {
                    write!(csv, ",{}", fmt(c[j])).unwrap();
                }
                csv.push('\n');
            }
            Ok(Report::new(csv).input(&data.data, &loaded.digest))
        }
        Command::Curves { data, basis, grid, fit } => {
            let spec: BasisSpec = basis.parse()?;
            let grid = QuantileGrid::uniform(*grid)?;
            let cfg = fit.config()?;
            let loaded = load_csv(&data.data, &data.response)?;
            let f = fit_simultaneous(&loaded.data, &spec, &grid, &cfg)?;
            if !f.converged {
                eprintln!("warning: stopped after {} iterations without converging", f.iterations);
            }
            let mut csv = format!("q,{}\n", loaded.terms.join(","));
            for &ql in grid.levels() {
                let beta = coefficient_function(&f.params, &spec, ql)?;
                csv.push_str(&ql.to_string());
                for b in beta.iter() {
                    write!(csv, ",{}", fmt(*b)).unwrap();
                }
                csv.push('\n');
            }
            Ok(Report::new(csv).input(&data.data, &loaded.digest))
        }
        Command::Lasso { data, q, lambda_grid, epsilon_l, threshold, path_out, fit } => {
            let pcfg = PenaltyConfig {
                lambda_grid: parse_lambda_grid(lambda_grid)?,
                epsilon_l: *epsilon_l,
                active_threshold: *threshold,
            };
            let cfg = fit.config()?;
            let loaded = load_csv(&data.data, &data.response)?;
            let sel = select_lambda(&loaded.data, QuantileLevel::new(*q)?, &pcfg, &cfg)?;
            let mut order: Vec<usize> = (0..loaded.terms.len()).collect();
            order.sort_by(|&a, &b| sel.fit.beta[b].abs().total_cmp(&sel.fit.beta[a].abs()).then(a.cmp(&b)));
            let mut csv = String::from("term,estimate,selected\n");
            for j in order {
                let chosen = j == 0 || sel.fit.active_set.contains(&j);
                writeln!(csv, "{},{},{}", loaded.terms[j], fmt(sel.fit.beta[j]), u8::from(chosen)).unwrap();
            }
            let mut path = String::from("lambda,bic,active_size,selected\n");
            for pt in &sel.path {
                let chosen = pt.lambda == sel.lambda_opt;
                writeln!(path, "{},{},{},{}", fmt(pt.lambda), fmt(pt.bic), pt.active_size, u8::from(chosen)).unwrap();
            }
            let mut r = Report::new(csv).input(&data.data, &loaded.digest);
            r.extra = Some((path, path_out.clone(), ".path.csv".into()));
            Ok(r)
        }
        Command::Transform { data, columns, knots } => {
            let table = data::read_table(&data.data)?;
            let spec: KnotSpec = knots.parse()?;
            let expand = covariate_indices(&table, &data.response, columns)?;
            let (ds, names) = expanded_design(&table, &data.response, &expand, &spec)?;
            let mut csv = format!("{},{}\n", data.response, names[1..].join(","));
            for i in 0..ds.n() {
                csv.push_str(&fmt(ds.y()[i]));
                for v in ds.x().row(i).iter().skip(1) {
                    write!(csv, ",{}", fmt(*v)).unwrap();
                }
                csv.push('\n');
            }
            Ok(Report::new(csv).input(&data.data, &table.digest))
        }
        Command::Cv { data, columns, knots, basis, folds, seed, grid, validation, fit } => {
            let table = data::read_table(&data.data)?;
            let expand = covariate_indices(&table, &data.response, columns)?;
            let knot_specs: Vec<KnotSpec> = knots.split(';').map(str::parse).collect::<mmqr::Result<_>>()?;
            let bases: Vec<BasisSpec> = basis.split(';').map(str::parse).collect::<mmqr::Result<_>>()?;
            let grid = QuantileGrid::uniform(*grid)?;
            let vq = if validation.trim().is_empty() { default_validation_levels() } else { parse_levels(validation)? };
            let cfg = fit.config()?;
            let split = kfold_split(table.rows.len(), *folds, *seed)?;
            let mut csv = String::from("x_knots,q_basis,cv_loss\n");
            for ks in &knot_specs {
                let (ds, _) = expanded_design(&table, &data.response, &expand, ks)?;
                for b in &bases {
                    let loss = cv_loss(&ds, b, &grid, &split, &vq, &cfg)?;
                    writeln!(csv, "{},{},{}", quote(&ks.to_string()), quote(&b.to_string()), fmt(loss)).unwrap();
                }
            }
            let mut r = Report::new(csv).input(&data.data, &table.digest);
            r.seed = Some(*seed);
            Ok(r)
        }
        Command::Dk { data, column, h1, h2, quantiles, at, points } => {
            let table = data::read_table(&data.data)?;
            let xj = single_covariate(&table, &data.response, column)?;
            let yj = table.column_index(&data.response)?;
            let sample = PointSample::new(table.column(xj).to_vec(), table.column(yj).to_vec())?;
            let k = KernelConfig::new(*h1, *h2)?;
            let levels = parse_levels(quantiles)?;
            let xs = match at {
                Some(list) => parse_f64_list(list, "evaluation point")?,
                None => {
                    if *points < 2 {
                        return Err(CliError::Usage("--points must be at least 2".into()));
                    }
                    let lo = sample.x().iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = sample.x().iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    (0..*points).map(|i| lo + (hi - lo) * i as f64 / (*points - 1) as f64).collect()
                }
            };
            let mut csv = String::from("x,q,y\n");
            for &x in &xs {
                let ys = dk_quantiles(&sample, x, &levels, &k)?;
                for (ql, y) in levels.iter().zip(ys) {
                    writeln!(csv, "{},{ql},{}", fmt(x), fmt(y)).unwrap();
                }
            }
            Ok(Report::new(csv).input(&data.data, &table.digest))
        }
        Command::Lcv { data, column, h1, h2 } => {
            let table = data::read_table(&data.data)?;
            let xj = single_covariate(&table, &data.response, column)?;
            let yj = table.column_index(&data.response)?;
            let sample = PointSample::new(table.column(xj).to_vec(), table.column(yj).to_vec())?;
            let mut csv = String::from("h1,h2,log_likelihood\n");
            for a in parse_f64_list(h1, "h1")? {
                for b in parse_f64_list(h2, "h2")? {
                    let ll = lcv_log_likelihood(&sample, &KernelConfig::new(a, b)?)?;
                    writeln!(csv, "{},{},{}", fmt(a), fmt(b), fmt(ll)).unwrap();
                }
            }
            Ok(Report::new(csv).input(&data.data, &table.digest))
        }
        Command::Simulate { scenario, seed, replicates } => {
            let bytes = data::read_bytes(scenario)?;
            let text = String::from_utf8(bytes.clone()).map_err(|_| CliError::Usage("scenario is not UTF-8".into()))?;
            let mut s: Scenario = text.parse()?;
            if let Some(seed) = seed {
                s.seed = *seed;
            }
            if let Some(r) = replicates {
                s.replicates = *r;
            }
            let table = s.run()?;
            let mut r = Report::new(table.to_csv()).input(scenario, &data::digest(&bytes));
            r.seed = Some(s.seed);
            Ok(r)
        }
        Command::Imse { predicted, truth } => {
            let (p, dp) = read_matrix(predicted)?;
            let (t, dt) = read_matrix(truth)?;
            let v = imse(p.view(), t.view())?;
            Ok(Report::new(format!("imse\n{}\n", fmt(v))).input(predicted, &dp).input(truth, &dt))
        }
    }
}

fn first_line(s: &str) -> &str {
    s.lines().find(|l| !l.trim().is_empty()).unwrap_or("").trim_start_matches("error: ")
}

/// Parse `argv` (program name first), run, and return the process exit code:
/// 0 on success, 2 for usage errors, 1 otherwise.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprintln!("error: usage: {}", first_line(&e.to_string()));
            return 2;
        }
    };
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(|| execute(&cli)),
            Err(e) => Err(CliError::Usage(format!("thread pool: {e}"))),
        },
        None => execute(&cli),
    }
    .and_then(|report| emit(&cli, report));
    match result {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {msg}", e.category());
            if matches!(e, CliError::Usage(_)) {
                2
            } else {
                1
            }
        }
    }
}
