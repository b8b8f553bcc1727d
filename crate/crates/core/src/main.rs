use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use nvsd::admm::SolverConfig;
use nvsd::experiments::{run_experiment_with, BenchConfig, Experiment, Method};
use nvsd::io::{format_number, read_matrix, read_vector, write_atomic, write_csv};
use nvsd::model::{
    self, fit_path, select_by_validation, select_debiased, FittedModel, Normalization, PathOptions, TauGrid,
    DEFAULT_GRID_COUNT, DEFAULT_GRID_DECADES, MU_GRID, RIDGE_NU_GRID,
};
use nvsd::prox::{GroupStructure, RegularizerSpec};
use nvsd::{gaussian_width_heuristic, DataMatrix, Error, KernelSpec};

#[derive(Parser)]
#[command(name = "nvsd", version, about = "Nonlinear variable selection with derivative penalties")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model at a fixed tau.
    Fit(FitArgs),
    /// Predict with a saved model.
    Predict(PredictArgs),
    /// Solve a regularization path, optionally selecting on a validation set.
    Path(PathArgs),
    /// Run the synthetic replication protocol.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Linear,
    Polynomial,
    Gaussian,
}

#[derive(Clone, Copy, ValueEnum)]
enum Reg {
    L,
    Gl,
    En,
}

#[derive(Args)]
struct DataArgs {
    /// Input CSV with a header row, one instance per row.
    #[arg(long)]
    x: PathBuf,
    /// Target CSV with a header row and one column.
    #[arg(long)]
    y: PathBuf,
    /// Standardize inputs and center targets before fitting.
    #[arg(long)]
    normalize: bool,
}

#[derive(Args)]
struct KernelArgs {
    #[arg(long, value_enum, default_value = "gaussian")]
    kernel: Family,
    /// Gaussian width, or `auto` for the nearest-neighbour median heuristic.
    #[arg(long, default_value = "auto")]
    sigma: String,
    #[arg(long, default_value_t = 3)]
    degree: u32,
    #[arg(long, default_value_t = 1.0)]
    offset: f64,
}

#[derive(Args)]
struct RegArgs {
    #[arg(long, value_enum, default_value = "l")]
    reg: Reg,
    /// JSON array of arrays of 1-based variable indices (group lasso).
    #[arg(long)]
    groups: Option<PathBuf>,
    /// Elastic-net mixing in (0, 1), or `grid` on paths.
    #[arg(long, default_value = "0.5")]
    mu: String,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, default_value_t = 1e-4)]
    nu: f64,
    #[arg(long)]
    abs_tol: Option<f64>,
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
}

impl SolverArgs {
    fn config(&self, base: SolverConfig) -> SolverConfig {
        SolverConfig {
            nu: self.nu,
            abs_tol: self.abs_tol.unwrap_or(base.abs_tol),
            rel_tol: self.rel_tol.unwrap_or(base.rel_tol),
            max_iter: self.max_iter.unwrap_or(base.max_iter),
            ..base
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    kernel: KernelArgs,
    #[command(flatten)]
    reg: RegArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    tau: f64,
    /// Output model JSON.
    #[arg(long)]
    model: PathBuf,
    /// Output report JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PathArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    kernel: KernelArgs,
    #[command(flatten)]
    reg: RegArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// `auto` or a comma-separated list of values.
    #[arg(long, default_value = "auto")]
    tau: String,
    #[arg(long, default_value_t = DEFAULT_GRID_COUNT)]
    grid_count: usize,
    #[arg(long, default_value_t = DEFAULT_GRID_DECADES)]
    grid_decades: f64,
    #[arg(long)]
    no_warm_start: bool,
    /// Path summary CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, requires = "y_val")]
    x_val: Option<PathBuf>,
    #[arg(long, requires = "x_val")]
    y_val: Option<PathBuf>,
    /// Refit the selected support without the sparsity penalty.
    #[arg(long, requires = "x_val")]
    debias: bool,
    /// Write the selected model here (needs a validation set).
    #[arg(long, requires = "x_val")]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(value_parser = parse_experiment)]
    experiment: Experiment,
    /// Comma-separated: krls, nvsd-l, nvsd-gl, nvsd-en; `-raw` skips debiasing.
    #[arg(long, default_value = "krls,nvsd-l,nvsd-gl,nvsd-en")]
    methods: String,
    #[arg(long, value_delimiter = ',', default_value = "30,50,70,90,110")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Hilbert-norm weight; defaults to the per-experiment value.
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    abs_tol: Option<f64>,
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_GRID_COUNT)]
    grid_count: usize,
    #[arg(long, default_value_t = 1000)]
    validation_size: usize,
    #[arg(long, default_value_t = 1000)]
    test_size: usize,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = "raw.csv")]
    raw: PathBuf,
    #[arg(long, default_value = "aggregate.csv")]
    aggregate: PathBuf,
}

fn parse_experiment(s: &str) -> Result<Experiment, String> {
    Experiment::parse(s).map_err(|e| e.to_string())
}

/// Exit 3 for numerical failures of the solver, 2 for everything caused by
/// the inputs.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Factorization { .. } | Error::Divergence { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Path(a) => cmd_path(&a),
        Command::Bench(a) => cmd_bench(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_data(a: &DataArgs) -> nvsd::Result<(DataMatrix, Vec<f64>)> {
    let x = read_matrix(&a.x)?
        .ok_or_else(|| Error::InvalidData(format!("{}: no data rows", a.x.display())))?;
    let y = read_vector(&a.y)?;
    if y.len() != x.n() {
        return Err(Error::InvalidData(format!(
            "{} has {} rows but {} has {}",
            a.x.display(),
            x.n(),
            a.y.display(),
            y.len()
        )));
    }
    Ok((x, y))
}

/// Kernel for the data the solver sees: the width heuristic runs on the
/// normalized inputs when normalization is on.
fn resolve_kernel(k: &KernelArgs, x: &DataMatrix, y: &[f64], normalize: bool) -> nvsd::Result<KernelSpec> {
    let spec = match k.kernel {
        Family::Linear => KernelSpec::Linear,
        Family::Polynomial => KernelSpec::polynomial(k.degree, k.offset),
        Family::Gaussian => {
            let width = if k.sigma.eq_ignore_ascii_case("auto") {
                if normalize {
                    gaussian_width_heuristic(&Normalization::fit(x, y).transform(x), 20)?
                } else {
                    gaussian_width_heuristic(x, 20)?
                }
            } else {
                k.sigma
                    .parse()
                    .map_err(|_| Error::InvalidParameter(format!("--sigma: expected a number or auto, got {:?}", k.sigma)))?
            };
            KernelSpec::gaussian(width)
        }
    };
    spec.validate()?;
    Ok(spec)
}

/// Regularizer and, for `--mu grid`, the mixing values of a path.
fn resolve_reg(r: &RegArgs, dim: usize, allow_grid: bool) -> nvsd::Result<(RegularizerSpec, Vec<f64>)> {
    let spec = match r.reg {
        Reg::L => RegularizerSpec::Lasso,
        Reg::Gl => {
            let path = r
                .groups
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("--reg gl needs --groups".into()))?;
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            let groups = GroupStructure::from_json(&text, dim).map_err(|e| match e {
                Error::Json(j) => Error::Parse {
                    path: path.display().to_string(),
                    line: j.line(),
                    message: j.to_string(),
                },
                other => other,
            })?;
            RegularizerSpec::GroupLasso { groups }
        }
        Reg::En => {
            if r.mu.eq_ignore_ascii_case("grid") {
                if !allow_grid {
                    return Err(Error::InvalidParameter("--mu grid is only valid for paths".into()));
                }
                return Ok((RegularizerSpec::ElasticNet { mu: MU_GRID[0] }, MU_GRID.to_vec()));
            }
            let mu = r
                .mu
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("--mu: expected a number or grid, got {:?}", r.mu)))?;
            RegularizerSpec::ElasticNet { mu }
        }
    };
    spec.validate(dim)?;
    Ok((spec, Vec::new()))
}

fn one_based(v: &[usize]) -> Vec<usize> {
    v.iter().map(|a| a + 1).collect()
}

#[derive(Serialize)]
struct FitReport {
    kernel: KernelSpec,
    tau: f64,
    nu: f64,
    mu: Option<f64>,
    /// 1-based selected variables.
    support: Vec<usize>,
    derivative_norms: Vec<f64>,
    objective: f64,
    iterations: usize,
    converged: bool,
    fitted_values: Vec<f64>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> nvsd::Result<()> {
    write_atomic(path, serde_json::to_string_pretty(value)?.as_bytes())
}

fn cmd_fit(a: &FitArgs) -> nvsd::Result<ExitCode> {
    let (x, y) = load_data(&a.data)?;
    let kernel = resolve_kernel(&a.kernel, &x, &y, a.data.normalize)?;
    let (reg, _) = resolve_reg(&a.reg, x.d(), false)?;
    let config = SolverConfig {
        tau: a.tau,
        ..a.solver.config(SolverConfig::default())
    };
    config.validate()?;
    let (m, r) = model::fit(&x, &y, &kernel, &reg, &config, a.data.normalize)?;
    m.save(&a.model)?;
    if let Some(p) = &a.report {
        let report = FitReport {
            kernel,
            tau: config.tau,
            nu: config.nu,
            mu: reg.mu(),
            support: one_based(&m.support),
            derivative_norms: m.derivative_norms.clone(),
            objective: r.objective,
            iterations: r.iterations,
            converged: r.converged,
            fitted_values: m.predict(&x)?,
        };
        write_json(p, &report)?;
    }
    if !r.converged {
        eprintln!("warning: not converged after {} iterations", r.iterations);
    }
    println!("support: {:?}", one_based(&m.support));
    Ok(ExitCode::SUCCESS)
}

fn cmd_predict(a: &PredictArgs) -> nvsd::Result<ExitCode> {
    let m = FittedModel::load(&a.model)?;
    let rows = match read_matrix(&a.x)? {
        None => Vec::new(),
        Some(x) => m
            .predict(&x)?
            .into_iter()
            .map(|v| vec![format_number(v)])
            .collect(),
    };
    write_csv(&a.out, &["prediction"], &rows)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_path(a: &PathArgs) -> nvsd::Result<ExitCode> {
    let (x, y) = load_data(&a.data)?;
    let kernel = resolve_kernel(&a.kernel, &x, &y, a.data.normalize)?;
    let (reg, mu_grid) = resolve_reg(&a.reg, x.d(), true)?;
    let grid = if a.tau.eq_ignore_ascii_case("auto") {
        TauGrid::Auto {
            count: a.grid_count,
            decades: a.grid_decades,
        }
    } else {
        let values = a
            .tau
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidParameter(format!("--tau: cannot parse {s:?}")))
            })
            .collect::<nvsd::Result<Vec<_>>>()?;
        TauGrid::Explicit(values)
    };
    let options = PathOptions {
        grid,
        mu_grid,
        warm_start: !a.no_warm_start,
    };
    let config = a.solver.config(SolverConfig::default());
    let path = fit_path(&x, &y, &kernel, &reg, &config, &options, a.data.normalize)?;

    let validation = match (&a.x_val, &a.y_val) {
        (Some(xv), Some(yv)) => {
            let xv = read_matrix(xv)?.ok_or_else(|| Error::InvalidData("validation set is empty".into()))?;
            let yv = read_vector(yv)?;
            Some((xv, yv))
        }
        _ => None,
    };
    let scores: Vec<Option<f64>> = match &validation {
        Some((xv, yv)) => path
            .points
            .iter()
            .map(|p| Ok(Some(model::mse(&p.model.predict(xv)?, yv)?)))
            .collect::<nvsd::Result<_>>()?,
        None => vec![None; path.len()],
    };
    let header = [
        "tau",
        "mu",
        "support_size",
        "support",
        "iterations",
        "converged",
        "objective",
        "validation_mse",
    ];
    let rows: Vec<Vec<String>> = path
        .points
        .iter()
        .zip(&scores)
        .map(|(p, s)| {
            vec![
                format_number(p.tau),
                p.mu.map_or(String::new(), format_number),
                p.model.support.len().to_string(),
                one_based(&p.model.support)
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(";"),
                p.iterations.to_string(),
                p.converged.to_string(),
                format_number(p.objective),
                s.map_or(String::new(), format_number),
            ]
        })
        .collect();
    write_csv(&a.out, &header, &rows)?;

    if let Some((xv, yv)) = &validation {
        let sel = if a.debias {
            select_debiased(&path, &x, &y, &RIDGE_NU_GRID, xv, yv)?
        } else {
            select_by_validation(&path, xv, yv)?
        };
        println!(
            "selected tau {:e} support {:?} validation mse {:e}",
            path.points[sel.index].tau,
            one_based(&sel.model.support),
            sel.validation_mse
        );
        if let Some(p) = &a.model {
            sel.model.save(p)?;
        }
    }
    if !path.all_converged() {
        let n = path.points.iter().filter(|p| !p.converged).count();
        eprintln!("warning: {n} of {} path points did not converge", path.len());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(a: &BenchArgs) -> nvsd::Result<ExitCode> {
    let mut cfg = BenchConfig::new(a.experiment);
    cfg.methods = a
        .methods
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(Method::parse)
        .collect::<nvsd::Result<_>>()?;
    cfg.train_sizes = a.sizes.clone();
    cfg.reps = a.reps;
    cfg.base_seed = a.seed;
    cfg.validation_size = a.validation_size;
    cfg.test_size = a.test_size;
    cfg.threads = a.threads;
    if let Some(nu) = a.nu {
        cfg.nu = nu;
    }
    cfg.solver.abs_tol = a.abs_tol.unwrap_or(cfg.solver.abs_tol);
    cfg.solver.rel_tol = a.rel_tol.unwrap_or(cfg.solver.rel_tol);
    cfg.solver.max_iter = a.max_iter.unwrap_or(cfg.solver.max_iter);
    cfg.path.grid = TauGrid::Auto {
        count: a.grid_count,
        decades: DEFAULT_GRID_DECADES,
    };
    let total = cfg.train_sizes.len() * cfg.reps;
    let done = std::sync::atomic::AtomicUsize::new(0);
    let result = run_experiment_with(&cfg, |cells| {
        let k = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
        if let Some(c) = cells.first() {
            eprintln!("[{k}/{total}] n={} rep={} done", c.train_size, c.replication);
        }
        for c in cells.iter().filter(|c| !c.ok()) {
            eprintln!("  {} failed: {}", c.method.name(), c.error.as_deref().unwrap_or(""));
        }
    })?;
    result.write_raw(&a.raw)?;
    result.write_aggregate(&a.aggregate)?;
    print!("{}", result.summary_table());
    if result.cells.iter().all(|c| !c.ok()) {
        eprintln!("error: every cell failed");
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}
