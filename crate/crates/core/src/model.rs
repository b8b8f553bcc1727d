//! Fitting, prediction, regularization paths, validation-based selection,
//! debiasing and the kernel ridge baseline.

use std::collections::HashMap;
use std::path::Path;

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::{AdmmSolver, SolveResult, SolverConfig, SolverState};
use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::linalg::{self, SpdFactor};
use crate::operators::{assemble_operators, OperatorSet};
use crate::prox::{self, BlockVector, RegularizerSpec};

/// Elastic-net mixing values swept by [`fit_path`].
pub const MU_GRID: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
pub const DEFAULT_GRID_COUNT: usize = 50;
pub const DEFAULT_GRID_DECADES: f64 = 3.0;
const MAX_DOUBLINGS: usize = 40;
const MAX_HALVINGS: usize = 6;
const PROBE_ITER: usize = 200;

/// Z-scored inputs and centered targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub target_mean: f64,
}

impl Normalization {
    /// Constant columns keep scale 1.
    pub fn fit(x: &DataMatrix, y: &[f64]) -> Self {
        let feature_scale = x
            .column_stds()
            .into_iter()
            .map(|s| if s > 0.0 { s } else { 1.0 })
            .collect();
        Self {
            feature_mean: x.column_means(),
            feature_scale,
            target_mean: y.iter().sum::<f64>() / y.len() as f64,
        }
    }

    fn row_into(&self, src: &[f64], dst: &mut [f64]) {
        for (a, (s, d)) in src.iter().zip(dst.iter_mut()).enumerate() {
            *d = (s - self.feature_mean[a]) / self.feature_scale[a];
        }
    }

    pub fn transform(&self, x: &DataMatrix) -> DataMatrix {
        x.map_rows(|src, dst| self.row_into(src, dst))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub kernel: KernelSpec,
    /// Training inputs after normalization, all columns.
    pub x_train: DataMatrix,
    /// Zero-based input columns seen by the kernel; all of them for a sparse
    /// fit, the selected ones for a debiased fit.
    pub columns: Vec<usize>,
    pub alpha: Vec<f64>,
    /// Variable-major: `beta[a * n + j]` multiplies the `a`-th derivative
    /// section at training point `j`, `a` indexing `columns`.
    pub beta: Vec<f64>,
    pub intercept: f64,
    /// Zero-based selected variables.
    pub support: Vec<usize>,
    /// Empirical derivative norms, one per input variable.
    pub derivative_norms: Vec<f64>,
    pub tau: f64,
    pub nu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Normalization>,
}

impl FittedModel {
    pub fn input_dim(&self) -> usize {
        self.x_train.d()
    }

    pub fn predict(&self, x: &DataMatrix) -> Result<Vec<f64>> {
        if x.d() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.d(),
            });
        }
        let offset = self.normalization.as_ref().map_or(0.0, |s| s.target_mean);
        if self.alpha.is_empty() {
            return Ok(vec![self.intercept + offset; x.n()]);
        }
        let restrict = |r: &[f64]| -> Vec<f64> { self.columns.iter().map(|&c| r[c]).collect() };
        let train: Vec<Vec<f64>> = self.x_train.rows().map(restrict).collect();
        let n = train.len();
        let dc = self.columns.len();
        let has_beta = self.beta.iter().any(|b| *b != 0.0);
        let mut normed = vec![0.0; x.d()];
        let mut grad = vec![0.0; dc];
        let out = x
            .rows()
            .map(|row| {
                let point = match &self.normalization {
                    Some(s) => {
                        s.row_into(row, &mut normed);
                        restrict(&normed)
                    }
                    None => restrict(row),
                };
                let mut f = self.intercept;
                for (j, xj) in train.iter().enumerate() {
                    f += self.alpha[j] * self.kernel.eval_unchecked(xj, &point);
                    if has_beta {
                        self.kernel.grad1_into(xj, &point, &mut grad);
                        for (a, g) in grad.iter().enumerate() {
                            f += self.beta[a * n + j] * g;
                        }
                    }
                }
                f + offset
            })
            .collect();
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.check()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    fn check(&self) -> Result<()> {
        self.kernel.validate()?;
        let (n, d) = (self.x_train.n(), self.x_train.d());
        let bad = |m: &str| Err(Error::InvalidData(format!("model document: {m}")));
        if self.columns.iter().any(|&c| c >= d) || self.support.iter().any(|&c| c >= d) {
            return bad("variable index out of range");
        }
        if !self.alpha.is_empty() && self.alpha.len() != n {
            return bad("alpha length differs from the number of training points");
        }
        if self.beta.len() != self.alpha.len() * self.columns.len() {
            return bad("beta length inconsistent with alpha and columns");
        }
        if self.derivative_norms.len() != d {
            return bad("derivative_norms length differs from the input dimension");
        }
        if let Some(s) = &self.normalization {
            if s.feature_mean.len() != d || s.feature_scale.len() != d {
                return bad("normalization length differs from the input dimension");
            }
        }
        Ok(())
    }
}

/// Training data prepared for repeated solves: normalized inputs, targets,
/// and the assembled operators.
pub struct TrainingSet {
    pub kernel: KernelSpec,
    pub x: DataMatrix,
    pub y: Vec<f64>,
    pub normalization: Option<Normalization>,
    pub ops: OperatorSet,
}

impl TrainingSet {
    pub fn new(x: &DataMatrix, y: &[f64], kernel: &KernelSpec, normalize: bool) -> Result<Self> {
        check_xy(x, y)?;
        if x.n() < 2 {
            return Err(Error::InvalidData("at least two training points are required".into()));
        }
        let (x, y, normalization) = prepare(x, y, normalize);
        let ops = assemble_operators(kernel, &x)?;
        Ok(Self {
            kernel: *kernel,
            x,
            y,
            normalization,
            ops,
        })
    }

    pub fn solver(&self) -> Result<AdmmSolver<'_>> {
        AdmmSolver::new(&self.ops, &self.y)
    }

    pub fn model_from(&self, reg: &RegularizerSpec, config: &SolverConfig, r: &SolveResult) -> FittedModel {
        let n = self.ops.n;
        let (alpha, beta) = r.omega.split_at(n);
        FittedModel {
            kernel: self.kernel,
            x_train: self.x.clone(),
            columns: (0..self.x.d()).collect(),
            alpha: alpha.to_vec(),
            beta: beta.to_vec(),
            intercept: 0.0,
            support: r.support.clone(),
            derivative_norms: r.derivative_norms.clone(),
            tau: config.tau,
            nu: config.nu,
            mu: reg.mu(),
            normalization: self.normalization.clone(),
        }
    }
}

fn check_xy(x: &DataMatrix, y: &[f64]) -> Result<()> {
    if x.n() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.n(),
            got: y.len(),
        });
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidData(format!("non-finite target at row {}", i + 1)));
    }
    Ok(())
}

fn prepare(x: &DataMatrix, y: &[f64], normalize: bool) -> (DataMatrix, Vec<f64>, Option<Normalization>) {
    if normalize {
        let s = Normalization::fit(x, y);
        let xn = s.transform(x);
        let yc = y.iter().map(|v| v - s.target_mean).collect();
        (xn, yc, Some(s))
    } else {
        (x.clone(), y.to_vec(), None)
    }
}

/// Fits one model at `config.tau`, `config.nu`.
pub fn fit(
    x: &DataMatrix,
    y: &[f64],
    kernel: &KernelSpec,
    reg: &RegularizerSpec,
    config: &SolverConfig,
    normalize: bool,
) -> Result<(FittedModel, SolveResult)> {
    let ts = TrainingSet::new(x, y, kernel, normalize)?;
    let solver = ts.solver()?;
    let r = solver.solve(reg, config, None)?;
    Ok((ts.model_from(reg, config, &r), r))
}

/// `count` log-spaced values from `tau_max` down to `tau_max 10^-decades`.
pub fn log_grid(tau_max: f64, count: usize, decades: f64) -> Vec<f64> {
    if count == 1 {
        return vec![tau_max];
    }
    (0..count)
        .map(|i| tau_max * 10f64.powf(-decades * i as f64 / (count - 1) as f64))
        .collect()
}

/// Initial guess for the smallest `tau` with empty support:
/// `2 max_u (2 / (n sqrt n)) |Z^u omega_ridge| / w_u` over the penalty units.
pub fn tau_max_estimate(solver: &AdmmSolver<'_>, reg: &RegularizerSpec, nu: f64) -> Result<f64> {
    let ops = solver.ops();
    let (n, d) = (ops.n, ops.d);
    let omega = solver.smooth_minimizer(nu)?;
    let zw = BlockVector::new(linalg::matvec(ops.z.as_ref(), &omega), n)?;
    let nf = n as f64;
    let mut best: f64 = 0.0;
    for (units, weight) in reg.weighted_units(d) {
        if weight <= 0.0 {
            continue;
        }
        let norm = units.iter().map(|&a| zw.block_norm(a).powi(2)).sum::<f64>().sqrt();
        best = best.max(2.0 / (nf * nf.sqrt()) * norm / weight);
    }
    Ok(2.0 * best)
}

/// Descending grid whose first entry is verified to give an empty support.
/// Starting from [`tau_max_estimate`], `tau` is doubled until the support is
/// empty, or halved while it stays empty, so the anchor is the smallest
/// empty-support value of the form `estimate 2^k` that the probes find.
pub fn auto_tau_grid(
    solver: &AdmmSolver<'_>,
    reg: &RegularizerSpec,
    config: &SolverConfig,
    count: usize,
    decades: f64,
) -> Result<Vec<f64>> {
    if count < 2 {
        return Err(Error::InvalidParameter("grid count must be >= 2".into()));
    }
    if !(decades > 0.0) || !decades.is_finite() {
        return Err(Error::InvalidParameter("grid decades must be > 0".into()));
    }
    let y = solver.y();
    let (lo, hi) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
    if !(hi > lo) {
        return Err(Error::DegenerateData("targets are all equal".into()));
    }
    let mut tau = tau_max_estimate(solver, reg, config.nu)?;
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::DegenerateData("ridge solution has no derivative signal".into()));
    }
    let empty_at = |tau: f64, max_iter: usize| -> Result<bool> {
        let cfg = SolverConfig {
            tau,
            max_iter,
            ..config.clone()
        };
        Ok(solver.solve(reg, &cfg, None)?.support.is_empty())
    };
    // Short probes bracket the threshold; the anchor is then confirmed with
    // the full iteration budget.
    let quick = config.max_iter.min(PROBE_ITER);
    let mut steps = 0;
    if empty_at(tau, quick)? {
        for _ in 0..MAX_HALVINGS {
            if !empty_at(tau / 2.0, quick)? {
                break;
            }
            tau /= 2.0;
        }
    } else {
        loop {
            tau *= 2.0;
            steps += 1;
            if steps > MAX_DOUBLINGS {
                return Err(Error::DegenerateData(format!("no empty-support tau found up to {tau:e}")));
            }
            if empty_at(tau, quick)? {
                break;
            }
        }
    }
    while !empty_at(tau, config.max_iter)? {
        tau *= 2.0;
        steps += 1;
        if steps > MAX_DOUBLINGS {
            return Err(Error::DegenerateData(format!("no empty-support tau found up to {tau:e}")));
        }
    }
    Ok(log_grid(tau, count, decades))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TauGrid {
    Auto { count: usize, decades: f64 },
    Explicit(Vec<f64>),
}

impl Default for TauGrid {
    fn default() -> Self {
        TauGrid::Auto {
            count: DEFAULT_GRID_COUNT,
            decades: DEFAULT_GRID_DECADES,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathOptions {
    pub grid: TauGrid,
    /// Elastic-net mixing values; empty keeps the value in the regularizer.
    pub mu_grid: Vec<f64>,
    pub warm_start: bool,
}

impl Default for PathOptions {
    fn default() -> Self {
        Self {
            grid: TauGrid::default(),
            mu_grid: MU_GRID.to_vec(),
            warm_start: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathPoint {
    pub tau: f64,
    pub mu: Option<f64>,
    pub model: FittedModel,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    /// Largest `| |Z^a omega| - |phi_a| | / sqrt n` over the variables.
    pub readout_gap: f64,
    /// Whether every block of `phi` outside the support is exactly zero.
    pub zero_blocks_exact: bool,
}

/// Solutions along descending `tau`, concatenated over `mu` for the elastic net.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathResult {
    pub points: Vec<PathPoint>,
}

impl PathResult {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_iterations(&self) -> usize {
        self.points.iter().map(|p| p.iterations).sum()
    }

    pub fn all_converged(&self) -> bool {
        self.points.iter().all(|p| p.converged)
    }
}

fn explicit_grid(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::InvalidParameter("tau grid is empty".into()));
    }
    if let Some(t) = values.iter().find(|t| !(**t >= 0.0) || !t.is_finite()) {
        return Err(Error::InvalidParameter(format!("tau must be finite and >= 0, got {t}")));
    }
    let mut grid = values.to_vec();
    grid.sort_by(|a, b| b.total_cmp(a));
    grid.dedup();
    Ok(grid)
}

fn readout_check(ops: &OperatorSet, r: &SolveResult) -> (f64, bool) {
    let n = ops.n;
    let zw = linalg::matvec(ops.z.as_ref(), &r.omega);
    let sqrt_n = (n as f64).sqrt();
    let mut gap: f64 = 0.0;
    let mut exact = true;
    for a in 0..ops.d {
        let block = &zw[a * n..(a + 1) * n];
        gap = gap.max((linalg::norm2(block) - r.phi.block_norm(a)).abs() / sqrt_n);
        if !r.support.contains(&a) && r.phi.block(a).iter().any(|v| *v != 0.0) {
            exact = false;
        }
    }
    (gap, exact)
}

/// Regularization path on a prepared training set with a shared solver.
pub fn fit_path_on(
    ts: &TrainingSet,
    solver: &AdmmSolver<'_>,
    reg: &RegularizerSpec,
    config: &SolverConfig,
    options: &PathOptions,
) -> Result<PathResult> {
    let regs: Vec<RegularizerSpec> = match reg {
        RegularizerSpec::ElasticNet { .. } if !options.mu_grid.is_empty() => options
            .mu_grid
            .iter()
            .map(|&mu| RegularizerSpec::ElasticNet { mu })
            .collect(),
        _ => vec![reg.clone()],
    };
    let per_mu: Vec<Result<Vec<PathPoint>>> = regs
        .par_iter()
        .map(|reg| {
            reg.validate(ts.ops.d)?;
            let grid = match &options.grid {
                TauGrid::Auto { count, decades } => auto_tau_grid(solver, reg, config, *count, *decades)?,
                TauGrid::Explicit(v) => explicit_grid(v)?,
            };
            let mut warm: Option<SolverState> = None;
            let mut points = Vec::with_capacity(grid.len());
            for &tau in &grid {
                let cfg = SolverConfig {
                    tau,
                    ..config.clone()
                };
                let r = solver.solve(reg, &cfg, warm.as_ref())?;
                let (readout_gap, zero_blocks_exact) = readout_check(&ts.ops, &r);
                points.push(PathPoint {
                    tau,
                    mu: reg.mu(),
                    model: ts.model_from(reg, &cfg, &r),
                    iterations: r.iterations,
                    converged: r.converged,
                    objective: r.objective,
                    readout_gap,
                    zero_blocks_exact,
                });
                if options.warm_start {
                    warm = Some(r.state);
                }
            }
            Ok(points)
        })
        .collect();
    let mut points = Vec::new();
    for p in per_mu {
        points.extend(p?);
    }
    Ok(PathResult { points })
}

pub fn fit_path(
    x: &DataMatrix,
    y: &[f64],
    kernel: &KernelSpec,
    reg: &RegularizerSpec,
    config: &SolverConfig,
    options: &PathOptions,
    normalize: bool,
) -> Result<PathResult> {
    let ts = TrainingSet::new(x, y, kernel, normalize)?;
    let solver = ts.solver()?;
    fit_path_on(&ts, &solver, reg, config, options)
}

pub fn mse(pred: &[f64], y: &[f64]) -> Result<f64> {
    if pred.is_empty() || pred.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len().max(1),
            got: pred.len(),
        });
    }
    Ok(pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / y.len() as f64)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Selection {
    /// Index into the path points.
    pub index: usize,
    pub model: FittedModel,
    pub validation_mse: f64,
}

/// Lowest validation MSE; ties go to the larger `tau`, then to the earlier point.
fn pick(scores: &[(f64, f64)]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &(mse, tau)) in scores.iter().enumerate() {
        if !mse.is_finite() {
            continue;
        }
        best = match best {
            Some(b) if scores[b].0 < mse || (scores[b].0 == mse && scores[b].1 >= tau) => Some(b),
            _ => Some(i),
        };
    }
    best
}

pub fn select_by_validation(path: &PathResult, x_val: &DataMatrix, y_val: &[f64]) -> Result<Selection> {
    if path.is_empty() {
        return Err(Error::InvalidParameter("empty path".into()));
    }
    let scores = path
        .points
        .iter()
        .map(|p| Ok((mse(&p.model.predict(x_val)?, y_val)?, p.tau)))
        .collect::<Result<Vec<_>>>()?;
    let index = pick(&scores).ok_or_else(|| Error::DegenerateData("no finite validation error".into()))?;
    Ok(Selection {
        index,
        model: path.points[index].model.clone(),
        validation_mse: scores[index].0,
    })
}

/// Ridge parameters tried for kernel ridge fits and debiasing refits.
pub const RIDGE_NU_GRID: [f64; 9] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0];

/// Best debiased refit of `sparse` over `nu_grid` by validation MSE; ties
/// go to the larger `nu`.
pub fn debias_on_validation(
    x: &DataMatrix,
    y: &[f64],
    sparse: &FittedModel,
    nu_grid: &[f64],
    x_val: &DataMatrix,
    y_val: &[f64],
) -> Result<(FittedModel, f64)> {
    let mut best: Option<(FittedModel, f64)> = None;
    for &nu in nu_grid {
        let m = debias(x, y, sparse, nu)?;
        let e = mse(&m.predict(x_val)?, y_val)?;
        if best.as_ref().is_none_or(|b| e <= b.1) {
            best = Some((m, e));
        }
        if sparse.support.is_empty() {
            break;
        }
    }
    best.ok_or_else(|| Error::InvalidParameter("empty ridge grid".into()))
}

/// Selection on the validation error of the debiased refits. Paths repeat
/// supports, so each distinct support is refitted once.
pub fn select_debiased(
    path: &PathResult,
    x: &DataMatrix,
    y: &[f64],
    nu_grid: &[f64],
    x_val: &DataMatrix,
    y_val: &[f64],
) -> Result<Selection> {
    if path.is_empty() {
        return Err(Error::InvalidParameter("empty path".into()));
    }
    let mut refits: HashMap<Vec<usize>, (FittedModel, f64)> = HashMap::new();
    let mut scores = Vec::with_capacity(path.len());
    for p in &path.points {
        if !refits.contains_key(&p.model.support) {
            let r = debias_on_validation(x, y, &p.model, nu_grid, x_val, y_val)?;
            refits.insert(p.model.support.clone(), r);
        }
        scores.push((refits[&p.model.support].1, p.tau));
    }
    let index = pick(&scores).ok_or_else(|| Error::DegenerateData("no finite validation error".into()))?;
    let (mut model, validation_mse) = refits[&path.points[index].model.support].clone();
    model.tau = path.points[index].tau;
    model.mu = path.points[index].mu;
    Ok(Selection {
        index,
        model,
        validation_mse,
    })
}

/// Kernel ridge with `nu` chosen from `nu_grid` by validation MSE.
pub fn krls_on_validation(
    x: &DataMatrix,
    y: &[f64],
    kernel: &KernelSpec,
    nu_grid: &[f64],
    normalize: bool,
    x_val: &DataMatrix,
    y_val: &[f64],
) -> Result<(FittedModel, f64)> {
    let mut best: Option<(FittedModel, f64)> = None;
    for &nu in nu_grid {
        let m = krls_fit(x, y, kernel, nu, normalize)?;
        let e = mse(&m.predict(x_val)?, y_val)?;
        if best.as_ref().is_none_or(|b| e <= b.1) {
            best = Some((m, e));
        }
    }
    best.ok_or_else(|| Error::InvalidParameter("empty ridge grid".into()))
}

/// `(K + n nu I)^{-1} y` on the given columns of prepared data.
fn ridge_on_columns(
    x: &DataMatrix,
    y: &[f64],
    kernel: &KernelSpec,
    nu: f64,
    columns: &[usize],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = x.n();
    let xs = x.select_columns(columns)?;
    let dc = columns.len();
    let shift = n as f64 * nu;
    let m = Mat::from_fn(n, n, |i, j| {
        kernel.eval_unchecked(xs.row(i), xs.row(j)) + if i == j { shift } else { 0.0 }
    });
    let factor = match SpdFactor::new(&m, 0.0, 0.0) {
        Ok(f) => f,
        Err(_) => SpdFactor::new(&m, crate::admm::JITTER_REL, crate::admm::JITTER_MAX_REL)?,
    };
    let alpha = factor.solve(y);
    if alpha.iter().any(|v| !v.is_finite()) {
        return Err(Error::Factorization { jitter: factor.jitter });
    }
    // |D^a alpha| / sqrt n for the derivative readout.
    let mut acc = vec![0.0; dc * n];
    let mut grad = vec![0.0; dc];
    for i in 0..n {
        for (j, aj) in alpha.iter().enumerate() {
            kernel.grad1_into(xs.row(i), xs.row(j), &mut grad);
            for (a, g) in grad.iter().enumerate() {
                acc[a * n + i] += g * aj;
            }
        }
    }
    let sqrt_n = (n as f64).sqrt();
    let mut norms = vec![0.0; x.d()];
    for (a, &c) in columns.iter().enumerate() {
        norms[c] = linalg::norm2(&acc[a * n..(a + 1) * n]) / sqrt_n;
    }
    Ok((alpha, norms))
}

/// Kernel regularized least squares: `alpha = (K + n nu I)^{-1} y`, `beta = 0`.
pub fn krls_fit(
    x: &DataMatrix,
    y: &[f64],
    kernel: &KernelSpec,
    nu: f64,
    normalize: bool,
) -> Result<FittedModel> {
    check_xy(x, y)?;
    kernel.validate()?;
    if !(nu >= 0.0) || !nu.is_finite() {
        return Err(Error::InvalidParameter(format!("nu must be finite and >= 0, got {nu}")));
    }
    let (xp, yp, normalization) = prepare(x, y, normalize);
    let columns: Vec<usize> = (0..x.d()).collect();
    let (alpha, derivative_norms) = ridge_on_columns(&xp, &yp, kernel, nu, &columns)?;
    Ok(FittedModel {
        kernel: *kernel,
        x_train: xp,
        beta: Vec::new(),
        alpha,
        intercept: 0.0,
        support: columns.clone(),
        columns,
        derivative_norms,
        tau: 0.0,
        nu,
        mu: None,
        normalization,
    })
}

pub fn krls_predict(model: &FittedModel, x: &DataMatrix) -> Result<Vec<f64>> {
    model.predict(x)
}

/// Kernel ridge refit restricted to the support of `sparse`, on the same
/// training data and normalization. An empty support gives the constant
/// training-mean predictor.
pub fn debias(x: &DataMatrix, y: &[f64], sparse: &FittedModel, nu: f64) -> Result<FittedModel> {
    check_xy(x, y)?;
    if x.d() != sparse.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: sparse.input_dim(),
            got: x.d(),
        });
    }
    let (xp, yp, normalization) = prepare(x, y, sparse.normalization.is_some());
    let columns = sparse.support.clone();
    let base = FittedModel {
        kernel: sparse.kernel,
        x_train: xp.clone(),
        columns: Vec::new(),
        alpha: Vec::new(),
        beta: Vec::new(),
        intercept: 0.0,
        support: columns.clone(),
        derivative_norms: vec![0.0; x.d()],
        tau: sparse.tau,
        nu,
        mu: sparse.mu,
        normalization,
    };
    if columns.is_empty() {
        return Ok(FittedModel {
            intercept: yp.iter().sum::<f64>() / yp.len() as f64,
            ..base
        });
    }
    let (alpha, derivative_norms) = ridge_on_columns(&xp, &yp, &sparse.kernel, nu, &columns)?;
    Ok(FittedModel {
        columns,
        alpha,
        derivative_norms,
        ..base
    })
}

/// `|D^a alpha + L^a beta| / sqrt n` for each variable of a sparse fit.
pub fn derivative_norms_from_coefficients(ops: &OperatorSet, model: &FittedModel) -> Result<Vec<f64>> {
    if model.alpha.len() != ops.n || model.beta.len() != ops.n * ops.d {
        return Err(Error::DimensionMismatch {
            expected: ops.dim(),
            got: model.alpha.len() + model.beta.len(),
        });
    }
    let omega: Vec<f64> = model.alpha.iter().chain(&model.beta).copied().collect();
    let zw = BlockVector::new(linalg::matvec(ops.z.as_ref(), &omega), ops.n)?;
    Ok(prox::partial_derivative_norms(&zw, ops.n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::admm::S1Mode;
    use crate::experiments::{gen_e1, gen_e2, Experiment};
    use crate::prox::GroupStructure;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_data(n: usize, d: usize, seed: u64) -> (DataMatrix, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
        let x = DataMatrix::new(n, d, vals).unwrap();
        let y = x
            .rows()
            .map(|r| (r[0]).sin() + 0.5 * r[1] * r[1] + 0.05 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        (x, y)
    }

    fn tight() -> SolverConfig {
        SolverConfig {
            abs_tol: 1e-9,
            rel_tol: 1e-9,
            max_iter: 20_000,
            ..Default::default()
        }
    }

    #[test]
    fn single_point_linear_prediction() {
        let x = DataMatrix::new(1, 2, vec![1.0, 2.0]).unwrap();
        let m = FittedModel {
            kernel: KernelSpec::Linear,
            x_train: x.clone(),
            columns: vec![0, 1],
            alpha: vec![1.0],
            beta: vec![0.0, 0.0],
            intercept: 0.0,
            support: vec![0, 1],
            derivative_norms: vec![0.0; 2],
            tau: 0.0,
            nu: 0.0,
            mu: None,
            normalization: None,
        };
        let xs = DataMatrix::new(2, 2, vec![3.0, -1.0, 0.5, 0.5]).unwrap();
        assert_eq!(m.predict(&xs).unwrap(), vec![1.0, 1.5]);
        let zero = FittedModel {
            alpha: vec![0.0],
            ..m.clone()
        };
        assert_eq!(zero.predict(&xs).unwrap(), vec![0.0, 0.0]);
        let bad = DataMatrix::new(1, 3, vec![0.0; 3]).unwrap();
        assert!(m.predict(&bad).is_err());
    }

    #[test]
    fn training_predictions_equal_solver_fit() {
        let (x, y) = random_data(15, 3, 1);
        let kernel = KernelSpec::gaussian(1.5);
        let cfg = SolverConfig {
            tau: 0.05,
            ..Default::default()
        };
        let ts = TrainingSet::new(&x, &y, &kernel, false).unwrap();
        let r = ts.solver().unwrap().solve(&RegularizerSpec::Lasso, &cfg, None).unwrap();
        let m = ts.model_from(&RegularizerSpec::Lasso, &cfg, &r);
        let fw = linalg::matvec(ts.ops.f.as_ref(), &r.omega);
        for (p, q) in m.predict(&x).unwrap().iter().zip(&fw) {
            assert!((p - q).abs() <= 1e-10 * q.abs().max(1.0), "{p} vs {q}");
        }
    }

    #[test]
    fn finite_differences_match_derivative_readout() {
        let (x, y) = random_data(20, 3, 2);
        let kernel = KernelSpec::gaussian(1.2);
        let cfg = SolverConfig {
            tau: 0.02,
            ..Default::default()
        };
        let ts = TrainingSet::new(&x, &y, &kernel, false).unwrap();
        let r = ts.solver().unwrap().solve(&RegularizerSpec::Lasso, &cfg, None).unwrap();
        let m = ts.model_from(&RegularizerSpec::Lasso, &cfg, &r);
        let zw = linalg::matvec(ts.ops.z.as_ref(), &r.omega);
        let h = 1e-5;
        for i in 0..20 {
            for a in 0..3 {
                let mut up = x.row(i).to_vec();
                let mut dn = up.clone();
                up[a] += h;
                dn[a] -= h;
                let pts = DataMatrix::from_rows(&[up, dn]).unwrap();
                let p = m.predict(&pts).unwrap();
                let fd = (p[0] - p[1]) / (2.0 * h);
                let an = zw[a * 20 + i];
                assert!((fd - an).abs() <= 1e-4 * an.abs().max(1e-2), "{i},{a}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn prediction_invariant_to_training_order() {
        let (x, y) = random_data(12, 3, 3);
        let kernel = KernelSpec::polynomial(2, 1.0);
        let cfg = SolverConfig {
            tau: 0.05,
            nu: 1e-2,
            ..tight()
        };
        let perm: Vec<usize> = (0..12).rev().collect();
        let xp = x.select_rows(&perm).unwrap();
        let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let (a, _) = fit(&x, &y, &kernel, &RegularizerSpec::Lasso, &cfg, true).unwrap();
        let (b, _) = fit(&xp, &yp, &kernel, &RegularizerSpec::Lasso, &cfg, true).unwrap();
        let (xt, _) = random_data(30, 3, 4);
        let pa = a.predict(&xt).unwrap();
        let pb = b.predict(&xt).unwrap();
        let scale = pa.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (u, v) in pa.iter().zip(&pb) {
            assert!((u - v).abs() <= 1e-6 * scale, "{u} vs {v}");
        }
    }

    #[test]
    fn huge_tau_flattens_training_derivatives() {
        let (x, y) = random_data(10, 2, 5);
        let cfg = SolverConfig {
            tau: 1e8,
            ..Default::default()
        };
        let ts = TrainingSet::new(&x, &y, &KernelSpec::gaussian(1.0), false).unwrap();
        let r = ts.solver().unwrap().solve(&RegularizerSpec::Lasso, &cfg, None).unwrap();
        assert!(r.support.is_empty());
        let zw = linalg::matvec(ts.ops.z.as_ref(), &r.omega);
        assert!(linalg::norm2(&zw) < 1e-4, "{}", linalg::norm2(&zw));
    }

    #[test]
    fn krls_matches_linear_solve_oracle() {
        let (x, y) = random_data(9, 2, 7);
        let kernel = KernelSpec::gaussian(1.0);
        let nu = 0.01;
        let m = krls_fit(&x, &y, &kernel, nu, false).unwrap();
        let n = 9;
        let a = Mat::from_fn(n, n, |i, j| {
            kernel.eval(x.row(i), x.row(j)).unwrap() + if i == j { n as f64 * nu } else { 0.0 }
        });
        use faer::linalg::solvers::Solve;
        let oracle: faer::Col<f64> = a.partial_piv_lu().solve(faer::ColRef::from_slice(&y));
        for (u, v) in m.alpha.iter().zip(oracle.iter()) {
            assert!((u - v).abs() <= 1e-8 * v.abs().max(1.0));
        }
        assert_eq!(m.support, vec![0, 1]);
    }

    #[test]
    fn krls_limits() {
        let (x, y) = random_data(8, 2, 8);
        let kernel = KernelSpec::gaussian(0.7);
        let interp = krls_fit(&x, &y, &kernel, 0.0, false).unwrap();
        for (p, t) in interp.predict(&x).unwrap().iter().zip(&y) {
            assert!((p - t).abs() <= 1e-8, "{p} vs {t}");
        }
        let flat = krls_fit(&x, &y, &kernel, 1e12, false).unwrap();
        assert!(flat.alpha.iter().all(|a| a.abs() < 1e-10));
    }

    #[test]
    fn debias_conventions() {
        let (x, y) = random_data(10, 3, 9);
        let kernel = KernelSpec::gaussian(1.0);
        let krls = krls_fit(&x, &y, &kernel, 1e-3, false).unwrap();
        let full = debias(&x, &y, &krls, 1e-3).unwrap();
        let (xt, _) = random_data(7, 3, 10);
        assert_eq!(full.predict(&xt).unwrap(), krls.predict(&xt).unwrap());

        let empty = FittedModel {
            support: Vec::new(),
            ..krls.clone()
        };
        let m = debias(&x, &y, &empty, 1e-3).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        for p in m.predict(&xt).unwrap() {
            assert!((p - mean).abs() <= 1e-12);
        }

        let partial = FittedModel {
            support: vec![1],
            ..krls
        };
        let m = debias(&x, &y, &partial, 1e-3).unwrap();
        assert_eq!(m.support, vec![1]);
        // Columns outside the support are ignored.
        let mut shifted = xt.clone().values().to_vec();
        for r in 0..7 {
            shifted[r * 3] += 5.0;
            shifted[r * 3 + 2] -= 3.0;
        }
        let shifted = DataMatrix::new(7, 3, shifted).unwrap();
        assert_eq!(m.predict(&xt).unwrap(), m.predict(&shifted).unwrap());
    }

    #[test]
    fn tau_zero_matches_kernel_ridge() {
        let (x, y) = random_data(20, 2, 11);
        let (xt, _) = random_data(50, 2, 12);
        for kernel in [KernelSpec::Linear, KernelSpec::polynomial(2, 1.0), KernelSpec::gaussian(1.0)] {
            let nu = 1e-3;
            let cfg = SolverConfig {
                tau: 0.0,
                nu,
                ..tight()
            };
            let (m, _) = fit(&x, &y, &kernel, &RegularizerSpec::Lasso, &cfg, false).unwrap();
            let ridge = krls_fit(&x, &y, &kernel, nu, false).unwrap();
            let a = m.predict(&xt).unwrap();
            let b = ridge.predict(&xt).unwrap();
            let diff = (a.iter().zip(&b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>() / 50.0).sqrt();
            assert!(diff <= 1e-3, "{kernel:?}: {diff}");
        }
    }

    #[test]
    fn auto_grid_starts_at_empty_support() {
        let data = gen_e2(30, 3).unwrap();
        let ts = TrainingSet::new(&data.x, &data.y, &KernelSpec::polynomial(3, 1.0), false).unwrap();
        let solver = ts.solver().unwrap();
        let cfg = SolverConfig::default();
        let reg = RegularizerSpec::GroupLasso {
            groups: data.groups.clone(),
        };
        let grid = auto_tau_grid(&solver, &reg, &cfg, 10, 3.0).unwrap();
        assert_eq!(grid.len(), 10);
        assert!(grid.windows(2).all(|w| w[0] > w[1]));
        assert!((grid[0] / grid[9] - 1e3).abs() < 1e-6);
        let r = solver
            .solve(&reg, &SolverConfig { tau: grid[0], ..cfg }, None)
            .unwrap();
        assert!(r.support.is_empty());
    }

    #[test]
    fn auto_grid_rejects_constant_targets() {
        let (x, _) = random_data(6, 2, 13);
        let y = vec![0.0; 6];
        let ts = TrainingSet::new(&x, &y, &KernelSpec::gaussian(1.0), false).unwrap();
        let solver = ts.solver().unwrap();
        let err = auto_tau_grid(&solver, &RegularizerSpec::Lasso, &SolverConfig::default(), 5, 3.0);
        assert!(matches!(err, Err(Error::DegenerateData(_))));
        assert!(auto_tau_grid(&solver, &RegularizerSpec::Lasso, &SolverConfig::default(), 1, 3.0).is_err());
    }

    #[test]
    fn warm_started_path_is_cheaper() {
        let data = gen_e2(30, 4).unwrap();
        let kernel = KernelSpec::polynomial(3, 1.0);
        let ts = TrainingSet::new(&data.x, &data.y, &kernel, false).unwrap();
        let solver = ts.solver().unwrap();
        let reg = RegularizerSpec::Lasso;
        let cfg = SolverConfig::default();
        let grid = auto_tau_grid(&solver, &reg, &cfg, 15, 2.0).unwrap();
        let opts = |warm_start| PathOptions {
            grid: TauGrid::Explicit(grid.clone()),
            mu_grid: Vec::new(),
            warm_start,
        };
        let warm = fit_path_on(&ts, &solver, &reg, &cfg, &opts(true)).unwrap();
        let cold = fit_path_on(&ts, &solver, &reg, &cfg, &opts(false)).unwrap();
        assert!(warm.points[0].model.support.is_empty());
        assert!(warm.all_converged());
        assert!(
            warm.total_iterations() < cold.total_iterations(),
            "{} vs {}",
            warm.total_iterations(),
            cold.total_iterations()
        );
    }

    #[test]
    fn elastic_net_path_covers_mu_grid() {
        let (x, y) = random_data(10, 2, 14);
        let path = fit_path(
            &x,
            &y,
            &KernelSpec::gaussian(1.0),
            &RegularizerSpec::ElasticNet { mu: 0.5 },
            &SolverConfig::default(),
            &PathOptions {
                grid: TauGrid::Explicit(vec![0.01, 0.1, 1.0]),
                ..Default::default()
            },
            true,
        )
        .unwrap();
        assert_eq!(path.len(), 15);
        assert_eq!(path.points[0].mu, Some(0.1));
        assert_eq!(path.points[14].mu, Some(0.9));
        assert_eq!(path.points[0].tau, 1.0);
    }

    #[test]
    fn selection_rules() {
        let (x, y) = random_data(10, 2, 15);
        let base = krls_fit(&x, &y, &KernelSpec::gaussian(1.0), 1e-2, false).unwrap();
        let point = |tau: f64, model: FittedModel| PathPoint {
            tau,
            mu: None,
            model,
            iterations: 1,
            converged: true,
            objective: 0.0,
            readout_gap: 0.0,
            zero_blocks_exact: true,
        };
        let single = PathResult {
            points: vec![point(1.0, base.clone())],
        };
        assert_eq!(select_by_validation(&single, &x, &y).unwrap().index, 0);
        let tied = PathResult {
            points: vec![point(0.5, base.clone()), point(2.0, base.clone())],
        };
        assert_eq!(select_by_validation(&tied, &x, &y).unwrap().index, 1);
    }

    #[test]
    fn selection_matches_recomputed_argmin() {
        let (x, y) = random_data(15, 3, 16);
        let (xv, yv) = random_data(40, 3, 17);
        let path = fit_path(
            &x,
            &y,
            &KernelSpec::gaussian(1.5),
            &RegularizerSpec::Lasso,
            &SolverConfig::default(),
            &PathOptions {
                grid: TauGrid::Explicit(vec![0.3, 0.1, 0.03, 0.01, 0.003]),
                ..Default::default()
            },
            false,
        )
        .unwrap();
        let sel = select_by_validation(&path, &xv, &yv).unwrap();
        let errs: Vec<f64> = path
            .points
            .iter()
            .map(|p| mse(&p.model.predict(&xv).unwrap(), &yv).unwrap())
            .collect();
        let min = errs.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(errs[sel.index], min);
        assert_eq!(sel.validation_mse, min);
    }

    #[test]
    fn json_round_trip_preserves_predictions() {
        let (x, y) = random_data(12, 3, 18);
        let cfg = SolverConfig {
            tau: 0.05,
            ..Default::default()
        };
        let reg = RegularizerSpec::ElasticNet { mu: 0.3 };
        let (m, _) = fit(&x, &y, &KernelSpec::gaussian(1.1), &reg, &cfg, true).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.json");
        m.save(&p).unwrap();
        let back = FittedModel::load(&p).unwrap();
        assert_eq!(back, m);
        let (xt, _) = random_data(20, 3, 19);
        assert_eq!(back.predict(&xt).unwrap(), m.predict(&xt).unwrap());
        assert!(FittedModel::from_json("{\"kernel\":1}").is_err());
    }

    #[test]
    fn readout_of_coefficients_matches_solver_norms() {
        let data = gen_e1(25, 20).unwrap();
        let ts = TrainingSet::new(&data.x, &data.y, &KernelSpec::polynomial(3, 1.0), false).unwrap();
        let reg = RegularizerSpec::GroupLasso {
            groups: data.groups.clone(),
        };
        let cfg = SolverConfig {
            tau: 0.5,
            ..tight()
        };
        let r = ts.solver().unwrap().solve(&reg, &cfg, None).unwrap();
        assert!(r.converged);
        let m = ts.model_from(&reg, &cfg, &r);
        let again = derivative_norms_from_coefficients(&ts.ops, &m).unwrap();
        for (a, b) in again.iter().zip(&m.derivative_norms) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn inexact_descent_path_runs() {
        let (x, y) = random_data(10, 2, 21);
        let cfg = SolverConfig {
            s1_mode: S1Mode::InexactDescent,
            ..Default::default()
        };
        let path = fit_path(
            &x,
            &y,
            &KernelSpec::gaussian(1.0),
            &RegularizerSpec::Lasso,
            &cfg,
            &PathOptions {
                grid: TauGrid::Explicit(vec![0.2, 0.05]),
                ..Default::default()
            },
            false,
        )
        .unwrap();
        assert_eq!(path.len(), 2);
    }

    /// Exhaustive oracle at small scale: the group-lasso path, selected on
    /// debiased validation error, keeps only groups that belong to the best
    /// subset found by refitting every one of the 2^6 group subsets.
    #[test]
    fn group_support_within_exhaustive_best_subset() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (xv, yv) = Experiment::E1.sample(300, &mut rng).unwrap();
        let (x, y) = Experiment::E1.sample(40, &mut rng).unwrap();
        let kernel = KernelSpec::polynomial(3, 1.0);
        let nu = NU_DEBIAS_TEST;
        let groups = GroupStructure::consecutive(18, 3).unwrap();
        let mut best = (f64::INFINITY, Vec::new());
        for mask in 0u32..64 {
            let cols: Vec<usize> = (0..6)
                .filter(|g| mask >> g & 1 == 1)
                .flat_map(|g| groups.groups()[g].clone())
                .collect();
            let sparse = FittedModel {
                support: cols.clone(),
                ..krls_fit(&x, &y, &kernel, nu, false).unwrap()
            };
            let m = debias(&x, &y, &sparse, nu).unwrap();
            let e = mse(&m.predict(&xv).unwrap(), &yv).unwrap();
            if e < best.0 {
                best = (e, cols);
            }
        }
        let reg = RegularizerSpec::GroupLasso { groups };
        let path = fit_path(&x, &y, &kernel, &reg, &SolverConfig::default(), &PathOptions::default(), false)
            .unwrap();
        let sel = select_debiased(&path, &x, &y, &[nu], &xv, &yv).unwrap();
        assert!(
            sel.model.support.iter().all(|a| best.1.contains(a)),
            "{:?} not within {:?}",
            sel.model.support,
            best.1
        );
    }

    const NU_DEBIAS_TEST: f64 = 1e-4;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn log_grid_is_strictly_decreasing(tmax in 1e-3f64..1e3, count in 2usize..80, dec in 0.5f64..6.0) {
            let g = log_grid(tmax, count, dec);
            prop_assert_eq!(g.len(), count);
            prop_assert_eq!(g[0], tmax);
            prop_assert!(g.windows(2).all(|w| w[0] > w[1]));
        }

        #[test]
        fn pick_prefers_larger_tau_on_ties(errs in proptest::collection::vec(0u8..4, 1..20)) {
            let scores: Vec<(f64, f64)> = errs.iter().enumerate().map(|(i, e)| (*e as f64, 100.0 - i as f64)).collect();
            let i = pick(&scores).unwrap();
            let min = scores.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
            prop_assert_eq!(scores[i].0, min);
            prop_assert!(scores[..i].iter().all(|s| s.0 > min));
        }
    }
}
