//! Synthetic benchmarks E1-E3, evaluation metrics and the replication
//! protocol.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use std::path::Path;

use rayon::prelude::*;

use crate::admm::{AdmmSolver, SolverConfig};
use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::io::{format_number, write_csv};
use crate::kernel::KernelSpec;
use crate::model::{
    fit_path_on, krls_on_validation, select_by_validation, select_debiased, FittedModel, PathOptions,
    TrainingSet, MU_GRID, RIDGE_NU_GRID,
};
use crate::prox::{GroupStructure, RegularizerSpec};

pub const DIM: usize = 18;
/// Zero-based indices of the relevant variables {1,2,3,7,8,9}.
pub const TRUE_SUPPORT: [usize; 6] = [0, 1, 2, 6, 7, 8];
pub const NOISE_STD: f64 = 0.1;
pub const PAIR_CORRELATION: f64 = 0.95;
/// Zero-based correlated pairs of E2: (1,7),(2,8),(3,9) relevant,
/// (4,10),(5,11),(6,12),(13,16),(14,17),(15,18) irrelevant.
pub const E2_PAIRS: [(usize, usize); 9] = [
    (0, 6),
    (1, 7),
    (2, 8),
    (3, 9),
    (4, 10),
    (5, 11),
    (12, 15),
    (13, 16),
    (14, 17),
];
/// Variance of the measurement noise on each E3 input copy.
pub const E3_MEASUREMENT_VARIANCE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    E1,
    E2,
    E3,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::E1 => "e1",
            Experiment::E2 => "e2",
            Experiment::E3 => "e3",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "e1" => Ok(Experiment::E1),
            "e2" => Ok(Experiment::E2),
            "e3" => Ok(Experiment::E3),
            other => Err(Error::InvalidParameter(format!(
                "unknown experiment '{other}', expected e1, e2 or e3"
            ))),
        }
    }

    /// Draws `n` rows (inputs, then noise, row by row) from `rng`.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<(DataMatrix, Vec<f64>)> {
        if n == 0 {
            return Err(Error::InvalidParameter("sample size must be >= 1".into()));
        }
        let mut values = Vec::with_capacity(n * DIM);
        let mut y = Vec::with_capacity(n);
        let mut row = [0.0; DIM];
        for _ in 0..n {
            let target = match self {
                Experiment::E1 => {
                    row.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                    e1_target(&row)
                }
                Experiment::E2 => {
                    row.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                    let c = (1.0 - PAIR_CORRELATION * PAIR_CORRELATION).sqrt();
                    for &(a, b) in &E2_PAIRS {
                        row[b] = PAIR_CORRELATION * row[a] + c * row[b];
                    }
                    e2_target(&row)
                }
                Experiment::E3 => {
                    let z: [f64; 6] = std::array::from_fn(|_| rng.sample(StandardNormal));
                    let s = E3_MEASUREMENT_VARIANCE.sqrt();
                    for (i, zi) in z.iter().enumerate() {
                        for j in 0..3 {
                            row[3 * i + j] = zi + s * rng.sample::<f64, _>(StandardNormal);
                        }
                    }
                    e3_target(&z)
                }
            };
            values.extend_from_slice(&row);
            y.push(target + NOISE_STD * rng.sample::<f64, _>(StandardNormal));
        }
        Ok((DataMatrix::new(n, DIM, values)?, y))
    }
}

/// Sum over ordered multisets `i <= j <= k` of `x_i x_j x_k` within the
/// first and third triples of variables.
pub fn e1_target(x: &[f64]) -> f64 {
    let h3 = |v: &[f64]| {
        let mut s = 0.0;
        for i in 0..v.len() {
            for j in i..v.len() {
                for k in j..v.len() {
                    s += v[i] * v[j] * v[k];
                }
            }
        }
        s
    };
    h3(&x[0..3]) + h3(&x[6..9])
}

pub fn e2_target(x: &[f64]) -> f64 {
    let mut s = 0.0;
    for block in [&x[0..3], &x[6..9]] {
        for &a in block {
            for &b in block {
                for &c in block {
                    s += a * b * c;
                }
            }
        }
    }
    s
}

/// Noiseless E3 target from the six latent variables.
pub fn e3_target(z: &[f64]) -> f64 {
    let r = z[0] * z[0] + z[2] * z[2];
    10.0 * r * (-2.0 * r).exp()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub x: DataMatrix,
    pub y: Vec<f64>,
    pub true_support: Vec<usize>,
    pub groups: GroupStructure,
    pub seed: u64,
}

fn generate(which: Experiment, n: usize, seed: u64) -> Result<SyntheticDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x, y) = which.sample(n, &mut rng)?;
    Ok(SyntheticDataset {
        x,
        y,
        true_support: TRUE_SUPPORT.to_vec(),
        groups: default_groups(),
        seed,
    })
}

pub fn default_groups() -> GroupStructure {
    GroupStructure::consecutive(DIM, 3).expect("18 variables split into triples")
}

pub fn gen_e1(n: usize, seed: u64) -> Result<SyntheticDataset> {
    generate(Experiment::E1, n, seed)
}

pub fn gen_e2(n: usize, seed: u64) -> Result<SyntheticDataset> {
    generate(Experiment::E2, n, seed)
}

pub fn gen_e3(n: usize, seed: u64) -> Result<SyntheticDataset> {
    generate(Experiment::E3, n, seed)
}

pub fn rmse(yhat: &[f64], y: &[f64]) -> Result<f64> {
    if yhat.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            got: yhat.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::InvalidData("rmse of empty vectors".into()));
    }
    let ss: f64 = yhat.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / y.len() as f64).sqrt())
}

/// `1 - |S & T| / |S | T|`, zero when both sets are empty.
pub fn tanimoto_distance(selected: &[usize], truth: &[usize]) -> f64 {
    use std::collections::BTreeSet;
    let s: BTreeSet<_> = selected.iter().collect();
    let t: BTreeSet<_> = truth.iter().collect();
    let union = s.union(&t).count();
    if union == 0 {
        return 0.0;
    }
    1.0 - s.intersection(&t).count() as f64 / union as f64
}

/// Base learners of the benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    Krls,
    NvsdL,
    NvsdGl,
    NvsdEn,
}

/// A benchmark method; sparse methods are debiased unless `debias` is off.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Method {
    pub kind: MethodKind,
    pub debias: bool,
}

impl Method {
    pub const KRLS: Method = Method {
        kind: MethodKind::Krls,
        debias: false,
    };

    pub fn nvsd(kind: MethodKind) -> Self {
        Method { kind, debias: true }
    }

    /// `krls`, `nvsd-l`, `nvsd-gl`, `nvsd-en`; a `-raw` suffix disables debiasing.
    pub fn parse(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let (base, debias) = match lower.strip_suffix("-raw") {
            Some(b) => (b, false),
            None => (lower.as_str(), true),
        };
        let kind = match base {
            "krls" if debias => return Ok(Method::KRLS),
            "nvsd-l" => MethodKind::NvsdL,
            "nvsd-gl" => MethodKind::NvsdGl,
            "nvsd-en" => MethodKind::NvsdEn,
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "unknown method '{s}', expected krls, nvsd-l, nvsd-gl or nvsd-en (optionally with -raw)"
                )))
            }
        };
        Ok(Method { kind, debias })
    }

    pub fn name(&self) -> String {
        let base = match self.kind {
            MethodKind::Krls => "krls",
            MethodKind::NvsdL => "nvsd-l",
            MethodKind::NvsdGl => "nvsd-gl",
            MethodKind::NvsdEn => "nvsd-en",
        };
        if self.debias || self.kind == MethodKind::Krls {
            base.to_string()
        } else {
            format!("{base}-raw")
        }
    }

    pub fn regularizer(&self, groups: &GroupStructure) -> Option<RegularizerSpec> {
        match self.kind {
            MethodKind::Krls => None,
            MethodKind::NvsdL => Some(RegularizerSpec::Lasso),
            MethodKind::NvsdGl => Some(RegularizerSpec::GroupLasso {
                groups: groups.clone(),
            }),
            MethodKind::NvsdEn => Some(RegularizerSpec::ElasticNet { mu: MU_GRID[0] }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub experiment: Experiment,
    pub methods: Vec<Method>,
    pub train_sizes: Vec<usize>,
    pub reps: usize,
    pub base_seed: u64,
    pub validation_size: usize,
    pub test_size: usize,
    pub kernel: KernelSpec,
    /// Hilbert-norm weight of the sparse methods.
    pub nu: f64,
    /// Ridge parameters searched on the validation set by Krls and the
    /// debiasing refits.
    pub ridge_nu_grid: Vec<f64>,
    pub path: PathOptions,
    pub solver: SolverConfig,
    /// Worker threads; `None` uses `NVSD_THREADS` or all cores.
    pub threads: Option<usize>,
}

impl BenchConfig {
    /// Defaults of the synthetic protocol for one experiment.
    pub fn new(experiment: Experiment) -> Self {
        Self {
            experiment,
            methods: vec![
                Method::KRLS,
                Method::nvsd(MethodKind::NvsdL),
                Method::nvsd(MethodKind::NvsdGl),
                Method::nvsd(MethodKind::NvsdEn),
            ],
            train_sizes: vec![30, 50, 70, 90, 110],
            reps: 10,
            base_seed: 0,
            validation_size: 1000,
            test_size: 1000,
            kernel: experiment.kernel(),
            nu: experiment.default_nu(),
            ridge_nu_grid: RIDGE_NU_GRID.to_vec(),
            path: PathOptions::default(),
            solver: bench_solver_config(),
            threads: None,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.methods.is_empty() {
            return bad("no methods given");
        }
        if self.train_sizes.is_empty() || self.train_sizes.contains(&0) {
            return bad("train sizes must be non-empty and >= 1");
        }
        if self.reps == 0 {
            return bad("reps must be >= 1");
        }
        if self.validation_size == 0 || self.test_size == 0 {
            return bad("validation and test sizes must be >= 1");
        }
        if self.ridge_nu_grid.is_empty() {
            return bad("ridge grid is empty");
        }
        self.kernel.validate()?;
        self.solver.validate()
    }
}

/// Solver settings of the benchmark: the default iteration budget with
/// tolerances tight enough for the derivative readout to match to 1e-6.
pub fn bench_solver_config() -> SolverConfig {
    SolverConfig {
        abs_tol: 1e-9,
        rel_tol: 1e-7,
        ..SolverConfig::default()
    }
}

impl Experiment {
    /// Kernel of the synthetic protocol: cubic polynomial for E1 and E2,
    /// Gaussian of width 4 for E3.
    pub fn kernel(&self) -> KernelSpec {
        match self {
            Experiment::E1 | Experiment::E2 => KernelSpec::polynomial(3, 1.0),
            Experiment::E3 => KernelSpec::gaussian(4.0),
        }
    }

    /// Hilbert-norm weight fixed from pilot replications.
    pub fn default_nu(&self) -> f64 {
        match self {
            Experiment::E1 | Experiment::E2 => 1e-4,
            Experiment::E3 => 1e-4,
        }
    }
}

/// Readout consistency over the converged points of one path.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReadoutStats {
    pub converged_points: usize,
    pub total_points: usize,
    /// Largest `| |Z^a omega| - |phi_a| | / sqrt n` over converged points.
    pub max_gap: f64,
    pub zero_blocks_exact: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub experiment: Experiment,
    pub method: Method,
    pub train_size: usize,
    pub replication: usize,
    pub seed: u64,
    pub rmse: f64,
    pub selection_error: f64,
    pub support_size: usize,
    /// Zero-based selected variables.
    pub support: Vec<usize>,
    pub tau: Option<f64>,
    pub mu: Option<f64>,
    pub iterations: usize,
    /// `None` on success, the error message otherwise.
    pub error: Option<String>,
    pub readout: Option<ReadoutStats>,
}

impl CellResult {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: BenchConfig,
    /// Sorted by train size, replication, then method order.
    pub cells: Vec<CellResult>,
}

pub const RAW_HEADER: [&str; 12] = [
    "experiment",
    "method",
    "train_size",
    "replication",
    "seed",
    "rmse",
    "selection_error",
    "support_size",
    "tau",
    "mu",
    "iterations",
    "status",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Rmse,
    SelectionError,
    SupportSize,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Rmse, Metric::SelectionError, Metric::SupportSize];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Rmse => "rmse",
            Metric::SelectionError => "selection_error",
            Metric::SupportSize => "support_size",
        }
    }

    fn of(&self, c: &CellResult) -> f64 {
        match self {
            Metric::Rmse => c.rmse,
            Metric::SelectionError => c.selection_error,
            Metric::SupportSize => c.support_size as f64,
        }
    }
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

impl ExperimentResult {
    /// Successful cells of one method and train size.
    pub fn values(&self, method: &Method, train_size: usize, metric: Metric) -> Vec<f64> {
        self.cells
            .iter()
            .filter(|c| c.ok() && c.method == *method && c.train_size == train_size)
            .map(|c| metric.of(c))
            .collect()
    }

    pub fn mean(&self, method: &Method, train_size: usize, metric: Metric) -> f64 {
        mean_std(&self.values(method, train_size, metric)).0
    }

    pub fn raw_rows(&self) -> Vec<Vec<String>> {
        let opt = |v: Option<f64>| v.map_or(String::new(), format_number);
        self.cells
            .iter()
            .map(|c| {
                vec![
                    c.experiment.name().to_string(),
                    c.method.name(),
                    c.train_size.to_string(),
                    c.replication.to_string(),
                    c.seed.to_string(),
                    format_number(c.rmse),
                    format_number(c.selection_error),
                    c.support_size.to_string(),
                    opt(c.tau),
                    opt(c.mu),
                    c.iterations.to_string(),
                    match &c.error {
                        None => "ok".to_string(),
                        Some(e) => format!("error: {e}"),
                    },
                ]
            })
            .collect()
    }

    pub fn aggregate_header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["experiment", "metric", "method", "statistic"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.extend(self.config.train_sizes.iter().map(|n| format!("n={n}")));
        h
    }

    /// One row per metric, method and statistic (mean, std), one column per
    /// train size.
    pub fn aggregate_rows(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        for metric in Metric::ALL {
            for method in &self.config.methods {
                let stats: Vec<(f64, f64)> = self
                    .config
                    .train_sizes
                    .iter()
                    .map(|&n| mean_std(&self.values(method, n, metric)))
                    .collect();
                for (label, pick) in [("mean", 0), ("std", 1)] {
                    let mut row = vec![
                        self.config.experiment.name().to_string(),
                        metric.name().to_string(),
                        method.name(),
                        label.to_string(),
                    ];
                    row.extend(stats.iter().map(|s| format_number(if pick == 0 { s.0 } else { s.1 })));
                    rows.push(row);
                }
            }
        }
        rows
    }

    pub fn write_raw(&self, path: &Path) -> Result<()> {
        write_csv(path, &RAW_HEADER, &self.raw_rows())
    }

    pub fn write_aggregate(&self, path: &Path) -> Result<()> {
        let header = self.aggregate_header();
        let refs: Vec<&str> = header.iter().map(String::as_str).collect();
        write_csv(path, &refs, &self.aggregate_rows())
    }

    /// Table of means with standard deviations in parentheses.
    pub fn summary_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<16} {:<12}", "metric", "method"));
        for n in &self.config.train_sizes {
            out.push_str(&format!(" {:>16}", format!("n={n}")));
        }
        out.push('\n');
        for metric in Metric::ALL {
            for method in &self.config.methods {
                out.push_str(&format!("{:<16} {:<12}", metric.name(), method.name()));
                for &n in &self.config.train_sizes {
                    let (m, s) = mean_std(&self.values(method, n, metric));
                    out.push_str(&format!(" {:>16}", format!("{m:.3} ({s:.3})")));
                }
                out.push('\n');
            }
        }
        out
    }
}

struct Split {
    x_val: DataMatrix,
    y_val: Vec<f64>,
    x_test: DataMatrix,
    y_test: Vec<f64>,
    x_train: DataMatrix,
    y_train: Vec<f64>,
}

/// Validation set, test set, then the training set, from one seeded stream.
fn draw_split(config: &BenchConfig, seed: u64, n: usize) -> Result<Split> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x_val, y_val) = config.experiment.sample(config.validation_size, &mut rng)?;
    let (x_test, y_test) = config.experiment.sample(config.test_size, &mut rng)?;
    let (x_train, y_train) = config.experiment.sample(n, &mut rng)?;
    Ok(Split {
        x_val,
        y_val,
        x_test,
        y_test,
        x_train,
        y_train,
    })
}

struct Outcome {
    model: FittedModel,
    tau: Option<f64>,
    mu: Option<f64>,
    iterations: usize,
    readout: Option<ReadoutStats>,
}

fn run_method(
    config: &BenchConfig,
    method: &Method,
    split: &Split,
    shared: Option<(&TrainingSet, &AdmmSolver<'_>)>,
) -> Result<Outcome> {
    let Some(reg) = method.regularizer(&default_groups()) else {
        let (model, _) = krls_on_validation(
            &split.x_train,
            &split.y_train,
            &config.kernel,
            &config.ridge_nu_grid,
            false,
            &split.x_val,
            &split.y_val,
        )?;
        return Ok(Outcome {
            model,
            tau: None,
            mu: None,
            iterations: 0,
            readout: None,
        });
    };
    let (ts, solver) = shared.ok_or_else(|| Error::InvalidParameter("training set not prepared".into()))?;
    let solver_cfg = SolverConfig {
        nu: config.nu,
        ..config.solver.clone()
    };
    let path = fit_path_on(ts, solver, &reg, &solver_cfg, &config.path)?;
    let converged: Vec<_> = path.points.iter().filter(|p| p.converged).collect();
    let readout = ReadoutStats {
        converged_points: converged.len(),
        total_points: path.len(),
        max_gap: converged.iter().map(|p| p.readout_gap).fold(0.0, f64::max),
        zero_blocks_exact: path.points.iter().all(|p| p.zero_blocks_exact),
    };
    let sel = if method.debias {
        select_debiased(
            &path,
            &split.x_train,
            &split.y_train,
            &config.ridge_nu_grid,
            &split.x_val,
            &split.y_val,
        )?
    } else {
        select_by_validation(&path, &split.x_val, &split.y_val)?
    };
    let point = &path.points[sel.index];
    Ok(Outcome {
        model: sel.model,
        tau: Some(point.tau),
        mu: point.mu,
        iterations: path.total_iterations(),
        readout: Some(readout),
    })
}

fn run_cell(config: &BenchConfig, n: usize, rep: usize) -> Vec<CellResult> {
    let seed = config.base_seed.wrapping_add(rep as u64);
    let cell = |method: Method, outcome: Result<Outcome>, split: Option<&Split>| {
        let mut c = CellResult {
            experiment: config.experiment,
            method,
            train_size: n,
            replication: rep,
            seed,
            rmse: f64::NAN,
            selection_error: f64::NAN,
            support_size: 0,
            support: Vec::new(),
            tau: None,
            mu: None,
            iterations: 0,
            error: None,
            readout: None,
        };
        let scored = outcome.and_then(|o| {
            let split = split.expect("split exists for a successful fit");
            let r = rmse(&o.model.predict(&split.x_test)?, &split.y_test)?;
            Ok((o, r))
        });
        match scored {
            Ok((o, r)) => {
                c.rmse = r;
                c.selection_error = tanimoto_distance(&o.model.support, &TRUE_SUPPORT);
                c.support_size = o.model.support.len();
                c.support = o.model.support;
                c.tau = o.tau;
                c.mu = o.mu;
                c.iterations = o.iterations;
                c.readout = o.readout;
            }
            Err(e) => c.error = Some(e.to_string()),
        }
        c
    };
    let split = match draw_split(config, seed, n) {
        Ok(s) => s,
        Err(e) => {
            let msg = e.to_string();
            return config
                .methods
                .iter()
                .map(|m| cell(*m, Err(Error::InvalidData(msg.clone())), None))
                .collect();
        }
    };
    let needs_solver = config.methods.iter().any(|m| m.kind != MethodKind::Krls);
    let ts = needs_solver.then(|| TrainingSet::new(&split.x_train, &split.y_train, &config.kernel, false));
    let solver = match &ts {
        Some(Ok(t)) => Some(t.solver()),
        _ => None,
    };
    let shared: std::result::Result<Option<(&TrainingSet, &AdmmSolver<'_>)>, String> = match (&ts, &solver) {
        (Some(Ok(t)), Some(Ok(s))) => Ok(Some((t, s))),
        (Some(Err(e)), _) | (_, Some(Err(e))) => Err(e.to_string()),
        _ => Ok(None),
    };
    config
        .methods
        .iter()
        .map(|method| {
            let outcome = match (&shared, method.kind) {
                (Err(msg), k) if k != MethodKind::Krls => Err(Error::InvalidData(msg.clone())),
                (Ok(s), _) => run_method(config, method, &split, *s),
                (Err(_), _) => run_method(config, method, &split, None),
            };
            cell(*method, outcome, Some(&split))
        })
        .collect()
}

/// Thread count from `NVSD_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var("NVSD_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
}

/// Runs every (train size, replication) cell. Replication `r` uses seed
/// `base_seed + r` and draws validation, test and training sets in that
/// order, so smaller training sets are prefixes of larger ones. Failed
/// cells are kept with their error. Results do not depend on the thread count.
pub fn run_experiment(config: &BenchConfig) -> Result<ExperimentResult> {
    run_experiment_with(config, |_| {})
}

/// As [`run_experiment`], calling `progress` after each finished cell.
pub fn run_experiment_with<F>(config: &BenchConfig, progress: F) -> Result<ExperimentResult>
where
    F: Fn(&[CellResult]) + Sync,
{
    config.validate()?;
    let threads = config.threads.or_else(threads_from_env).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let jobs: Vec<(usize, usize)> = config
        .train_sizes
        .iter()
        .flat_map(|&n| (0..config.reps).map(move |r| (n, r)))
        .collect();
    let mut cells: Vec<CellResult> = pool.install(|| {
        jobs.par_iter()
            .flat_map_iter(|&(n, r)| {
                let out = run_cell(config, n, r);
                progress(&out);
                out
            })
            .collect()
    });
    let order = |m: &Method| config.methods.iter().position(|x| x == m).unwrap_or(usize::MAX);
    let size_order = |n: usize| config.train_sizes.iter().position(|&x| x == n).unwrap_or(usize::MAX);
    cells.sort_by_key(|c| (size_order(c.train_size), c.replication, order(&c.method)));
    Ok(ExperimentResult {
        config: config.clone(),
        cells,
    })
}
