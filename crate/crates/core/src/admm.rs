//! ADMM for the finite-dimensional derivative-penalised problem
//!
//! ```text
//! min_omega (1/n) |y - F omega|^2 + tau I(Z omega) + nu omega^T Q omega
//! ```
//!
//! split as `phi = Z omega` with scaled dual `lambda` and step size `kappa`.

use std::sync::{Arc, Mutex};

use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SpdFactor};
use crate::operators::OperatorSet;
use crate::prox::{self, BlockVector, RegularizerSpec};

/// Relative diagonal jitter added to every S1 system.
pub const JITTER_REL: f64 = 1e-10;
/// Largest relative jitter tried before giving up on a factorization.
pub const JITTER_MAX_REL: f64 = 1e-6;
const FACTOR_CACHE_SIZE: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum S1Mode {
    ExactFactorized,
    InexactDescent,
}

/// Number of steepest-descent steps at ADMM iteration `k` (1-based):
/// `min(base + ceil(k / every), cap)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescentSchedule {
    pub base: usize,
    pub every: usize,
    pub cap: usize,
}

impl Default for DescentSchedule {
    fn default() -> Self {
        Self {
            base: 5,
            every: 10,
            cap: 50,
        }
    }
}

impl DescentSchedule {
    pub fn steps(&self, k: usize) -> usize {
        (self.base + k.div_ceil(self.every.max(1))).min(self.cap)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualBalance {
    pub factor: f64,
    pub scale: f64,
    pub enabled: bool,
}

impl Default for ResidualBalance {
    fn default() -> Self {
        Self {
            factor: 10.0,
            scale: 2.0,
            enabled: true,
        }
    }
}

/// How the quadratic part of the elastic net is handled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElasticNetRoute {
    /// Fold `tau (1 - mu) / n |Z omega|^2` into S1; S2 is then a lasso prox.
    Footnote,
    /// Keep the quadratic term in S2 and use the elastic-net prox.
    DirectProx,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tau: f64,
    pub nu: f64,
    pub kappa_init: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    pub s1_mode: S1Mode,
    pub s1_descent_schedule: DescentSchedule,
    pub residual_balance: ResidualBalance,
    pub en_route: ElasticNetRoute,
    /// Evaluate the objective after every iteration (one extra dense matvec).
    pub record_objective: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tau: 0.0,
            nu: 1e-4,
            kappa_init: 1.0,
            abs_tol: 1e-6,
            rel_tol: 1e-4,
            max_iter: 2000,
            s1_mode: S1Mode::ExactFactorized,
            s1_descent_schedule: DescentSchedule::default(),
            residual_balance: ResidualBalance::default(),
            en_route: ElasticNetRoute::Footnote,
            record_objective: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return bad(format!("tau must be finite and >= 0, got {}", self.tau));
        }
        if !(self.nu >= 0.0) || !self.nu.is_finite() {
            return bad(format!("nu must be finite and >= 0, got {}", self.nu));
        }
        if !(self.kappa_init > 0.0) || !self.kappa_init.is_finite() {
            return bad(format!("kappa_init must be finite and > 0, got {}", self.kappa_init));
        }
        if !(self.abs_tol > 0.0) || !(self.rel_tol > 0.0) {
            return bad("tolerances must be > 0".into());
        }
        if self.max_iter == 0 {
            return bad("max_iter must be >= 1".into());
        }
        let b = &self.residual_balance;
        if b.enabled && (!(b.factor > 1.0) || !(b.scale > 1.0)) {
            return bad("residual balance factor and scale must be > 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverState {
    pub omega: Vec<f64>,
    pub phi: BlockVector,
    pub lambda: BlockVector,
    pub kappa: f64,
    pub iteration: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

impl SolverState {
    pub fn initial(n: usize, d: usize, kappa: f64) -> Self {
        Self {
            omega: vec![0.0; n + n * d],
            phi: BlockVector::zeros(d, n),
            lambda: BlockVector::zeros(d, n),
            kappa,
            iteration: 0,
            primal_residual: 0.0,
            dual_residual: 0.0,
        }
    }

    fn check_shape(&self, n: usize, d: usize) -> Result<()> {
        let dn = n * d;
        for (expected, got) in [
            (n + dn, self.omega.len()),
            (dn, self.phi.len()),
            (dn, self.lambda.len()),
        ] {
            if expected != got {
                return Err(Error::DimensionMismatch { expected, got });
            }
        }
        if self.phi.block_len() != n || self.lambda.block_len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.phi.block_len(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub eps_primal: f64,
    pub eps_dual: f64,
    pub kappa: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveResult {
    pub omega: Vec<f64>,
    pub phi: BlockVector,
    /// Zero-based indices of the selected variables.
    pub support: Vec<usize>,
    pub derivative_norms: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub residual_history: Vec<IterationRecord>,
    /// Final iterate, usable as a warm start.
    pub state: SolverState,
}

impl SolveResult {
    pub fn diagnostics_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Diagnostics<'a> {
            iterations: usize,
            converged: bool,
            objective: f64,
            history: &'a [IterationRecord],
        }
        Ok(serde_json::to_string_pretty(&Diagnostics {
            iterations: self.iterations,
            converged: self.converged,
            objective: self.objective,
            history: &self.residual_history,
        })?)
    }
}

/// `(1/n) |y - F omega|^2 + tau I(Z omega) + nu omega^T Q omega`.
pub fn objective_value(
    ops: &OperatorSet,
    y: &[f64],
    reg: &RegularizerSpec,
    config: &SolverConfig,
    omega: &[f64],
) -> Result<f64> {
    check_inputs(ops, y)?;
    if omega.len() != ops.dim() {
        return Err(Error::DimensionMismatch {
            expected: ops.dim(),
            got: omega.len(),
        });
    }
    let fw = linalg::matvec(ops.f.as_ref(), omega);
    let loss = y.iter().zip(&fw).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / ops.n as f64;
    let zw = BlockVector::new(linalg::matvec(ops.z.as_ref(), omega), ops.n)?;
    let pen = prox::regularizer_value(reg, &zw, ops.n);
    let quad = linalg::dot(omega, &linalg::matvec(ops.q.as_ref(), omega));
    Ok(loss + config.tau * pen + config.nu * quad)
}

/// S2: proximal step on `v = Z omega + lambda`.
pub fn s2_update(
    v: &BlockVector,
    reg: &RegularizerSpec,
    tau: f64,
    kappa: f64,
    n: usize,
    route: ElasticNetRoute,
) -> Result<BlockVector> {
    let sqrt_n = (n as f64).sqrt();
    match reg {
        RegularizerSpec::Lasso => prox::prox_lasso(v, tau / (kappa * sqrt_n)),
        RegularizerSpec::GroupLasso { groups } => {
            prox::prox_group_lasso(v, tau / (kappa * sqrt_n), groups)
        }
        RegularizerSpec::ElasticNet { mu } => match route {
            ElasticNetRoute::Footnote => prox::prox_lasso(v, tau * mu / (kappa * sqrt_n)),
            ElasticNetRoute::DirectProx => prox::prox_elastic_net(v, tau, *mu, kappa, n),
        },
    }
}

/// S3: `lambda + Z omega - phi`.
pub fn s3_update(lambda: &BlockVector, z_omega: &BlockVector, phi: &BlockVector) -> Result<BlockVector> {
    if lambda.len() != z_omega.len() || lambda.len() != phi.len() {
        return Err(Error::DimensionMismatch {
            expected: lambda.len(),
            got: z_omega.len().max(phi.len()),
        });
    }
    let data = lambda
        .as_slice()
        .iter()
        .zip(z_omega.as_slice())
        .zip(phi.as_slice())
        .map(|((l, z), p)| l + z - p)
        .collect();
    BlockVector::new(data, lambda.block_len())
}

/// Residual balancing: returns the new `kappa` and rescales `lambda` in place.
pub fn step_size_update(state: &mut SolverState, balance: &ResidualBalance) -> f64 {
    if balance.enabled {
        let (r, s) = (state.primal_residual, state.dual_residual);
        let mult = if r > balance.factor * s {
            balance.scale
        } else if s > balance.factor * r {
            1.0 / balance.scale
        } else {
            1.0
        };
        if mult != 1.0 {
            state.kappa *= mult;
            state
                .lambda
                .as_mut_slice()
                .iter_mut()
                .for_each(|l| *l /= mult);
        }
    }
    state.kappa
}

/// S1 on the literal dense system
/// `(nu (Q + Q^T) + (2/n) F^T F + kappa Z^T Z) omega = (2/n) F^T y + kappa Z^T (phi - lambda)`.
/// [`AdmmSolver`] solves the same step in the Gram eigenbasis.
pub fn s1_update(
    ops: &OperatorSet,
    y: &[f64],
    config: &SolverConfig,
    phi: &BlockVector,
    lambda: &BlockVector,
    kappa: f64,
) -> Result<Vec<f64>> {
    check_inputs(ops, y)?;
    let dn = ops.n * ops.d;
    if phi.len() != dn || lambda.len() != dn {
        return Err(Error::DimensionMismatch {
            expected: dn,
            got: phi.len().max(lambda.len()),
        });
    }
    let scale = 2.0 / ops.n as f64;
    let ftf = ops.f.transpose() * &ops.f;
    let ztz = ops.z.transpose() * &ops.z;
    let dim = ops.dim();
    let m = Mat::from_fn(dim, dim, |i, j| {
        config.nu * (ops.q[(i, j)] + ops.q[(j, i)]) + scale * ftf[(i, j)] + kappa * ztz[(i, j)]
    });
    let diff: Vec<f64> = phi
        .as_slice()
        .iter()
        .zip(lambda.as_slice())
        .map(|(p, l)| p - l)
        .collect();
    let zt = linalg::matvec_t(ops.z.as_ref(), &diff);
    let ft = linalg::matvec_t(ops.f.as_ref(), y);
    let b: Vec<f64> = ft.iter().zip(&zt).map(|(f, z)| scale * f + kappa * z).collect();
    Ok(SpdFactor::new(&m, JITTER_REL, JITTER_MAX_REL)?.solve(&b))
}

fn check_inputs(ops: &OperatorSet, y: &[f64]) -> Result<()> {
    if y.len() != ops.n {
        return Err(Error::DimensionMismatch {
            expected: ops.n,
            got: y.len(),
        });
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidData(format!("non-finite target at row {}", i + 1)));
    }
    Ok(())
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Factorization of the S1 system `diag(dg) + c Ft^T Ft`.
enum S1Factor {
    Dense(SpdFactor),
    /// Woodbury form, used when `n` is well below the rank:
    /// `M^-1 = D^-1 - c D^-1 Ft^T C^-1 Ft D^-1` with `C = I + c Ft D^-1 Ft^T`.
    LowRank { d_inv: Vec<f64>, c: f64, cap: SpdFactor },
}

impl S1Factor {
    fn jitter(&self) -> f64 {
        match self {
            S1Factor::Dense(f) => f.jitter,
            S1Factor::LowRank { .. } => 0.0,
        }
    }
}

struct CachedFactor {
    key: (u64, u64),
    factor: Arc<S1Factor>,
}

/// ADMM on one dataset, shareable across a regularization path and across
/// methods.
///
/// Every quantity of the problem depends on `omega` only through `G omega`,
/// where `G = [[K, D^T], [D, L]]` is the symmetric part of `Q` and
/// `[F; Z] = G`. With `G = U diag(s) U^T` truncated to eigenvalues above
/// [`SPECTRAL_CUTOFF`] times the largest, the solver works with
/// `theta = diag(s)^{1/2} U^T omega`, so that `F omega = Ft theta`,
/// `Z omega = Zt theta`, `omega^T Q omega = |theta|^2` and
/// `Ft^T Ft + Zt^T Zt = diag(s)`.
pub struct AdmmSolver<'a> {
    ops: &'a OperatorSet,
    y: &'a [f64],
    /// Kept eigenvalues `s`.
    spectrum: Vec<f64>,
    /// `W = U diag(s)^{1/2}` (`N x r`); rows `0..n` are `Ft`, the rest `Zt`.
    w: Mat<f64>,
    /// `Ft^T Ft` (`r x r`)
    ftf: Mat<f64>,
    /// `(2/n) Ft^T y`
    fty: Vec<f64>,
    /// `Zt^T` (`r x dn`) stored contiguously, so that products with single
    /// derivative blocks read contiguous columns.
    ztt: Mat<f64>,
    cache: Mutex<Vec<CachedFactor>>,
}

/// Relative eigenvalue threshold below which directions of the Gram matrix
/// are treated as its null space.
pub const SPECTRAL_CUTOFF: f64 = 1e-10;
const LAMBDA_REFRESH: usize = 50;

impl<'a> AdmmSolver<'a> {
    pub fn new(ops: &'a OperatorSet, y: &'a [f64]) -> Result<Self> {
        check_inputs(ops, y)?;
        let big = ops.dim();
        let eig = ops
            .gram()
            .self_adjoint_eigen(Side::Lower)
            .map_err(|_| Error::Factorization { jitter: 0.0 })?;
        let vals = eig.S().column_vector();
        let top = (0..big).map(|i| vals[i]).fold(0.0f64, f64::max);
        let keep: Vec<usize> = if top > 0.0 {
            (0..big).filter(|&i| vals[i] > SPECTRAL_CUTOFF * top).collect()
        } else {
            Vec::new()
        };
        let spectrum: Vec<f64> = keep.iter().map(|&i| vals[i]).collect();
        let u = eig.U();
        let w = Mat::from_fn(big, keep.len(), |r, c| u[(r, keep[c])] * spectrum[c].sqrt());
        let ft = w.as_ref().subrows(0, ops.n);
        let ftf = ft.transpose() * ft;
        let mut fty = linalg::matvec_t(ft, y);
        let scale = 2.0 / ops.n as f64;
        fty.iter_mut().for_each(|v| *v *= scale);
        let ztt = w.as_ref().subrows(ops.n, ops.n * ops.d).transpose().to_owned();
        Ok(Self {
            ops,
            y,
            spectrum,
            w,
            ftf,
            fty,
            ztt,
            cache: Mutex::new(Vec::new()),
        })
    }

    pub fn ops(&self) -> &OperatorSet {
        self.ops
    }

    pub fn y(&self) -> &[f64] {
        self.y
    }

    /// Numerical rank of the Gram matrix.
    pub fn rank(&self) -> usize {
        self.spectrum.len()
    }

    /// `Z~^T phi`, skipping the blocks of `phi` that are exactly zero.
    fn zt_apply_t(&self, phi: &BlockVector) -> Vec<f64> {
        let n = self.ops.n;
        let mut out = vec![0.0; self.ztt.nrows()];
        for a in 0..phi.num_blocks() {
            let block = phi.block(a);
            if block.iter().all(|v| *v == 0.0) {
                continue;
            }
            let part = linalg::matvec(self.ztt.as_ref().subcols(a * n, n), block);
            out.iter_mut().zip(&part).for_each(|(o, p)| *o += p);
        }
        out
    }

    fn ft(&self) -> faer::MatRef<'_, f64> {
        self.w.as_ref().subrows(0, self.ops.n)
    }

    pub fn omega_to_theta(&self, omega: &[f64]) -> Vec<f64> {
        linalg::matvec_t(self.w.as_ref(), omega)
    }

    pub fn theta_to_omega(&self, theta: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = theta.iter().zip(&self.spectrum).map(|(t, s)| t / s).collect();
        linalg::matvec(self.w.as_ref(), &scaled)
    }

    /// `Zt^T Zt theta = diag(s) theta - Ft^T Ft theta`.
    fn ztz_apply(&self, theta: &[f64], ft_theta: &[f64]) -> Vec<f64> {
        let back = linalg::matvec_t(self.ft(), ft_theta);
        theta
            .iter()
            .zip(&self.spectrum)
            .zip(&back)
            .map(|((t, s), b)| s * t - b)
            .collect()
    }

    /// `(2 nu I + (2/n) Ft^T Ft + c Zt^T Zt) theta`
    fn system_apply(&self, nu: f64, c: f64, theta: &[f64]) -> Vec<f64> {
        let scale = 2.0 / self.ops.n as f64;
        let ft_theta = linalg::matvec(self.ft(), theta);
        let ftf_theta = linalg::matvec_t(self.ft(), &ft_theta);
        theta
            .iter()
            .zip(&self.spectrum)
            .zip(&ftf_theta)
            .map(|((t, s), g)| 2.0 * nu * t + (scale - c) * g + c * s * t)
            .collect()
    }

    fn factor(&self, nu: f64, c: f64) -> Result<Arc<S1Factor>> {
        let key = (nu.to_bits(), c.to_bits());
        let mut cache = self.cache.lock().expect("factor cache poisoned");
        if let Some(entry) = cache.iter().find(|e| e.key == key) {
            return Ok(entry.factor.clone());
        }
        let factor = Arc::new(match self.low_rank_factor(nu, c) {
            Some(f) => f,
            None => S1Factor::Dense(self.dense_factor(nu, c)?),
        });
        if cache.len() >= FACTOR_CACHE_SIZE {
            cache.remove(0);
        }
        cache.push(CachedFactor {
            key,
            factor: factor.clone(),
        });
        Ok(factor)
    }

    fn dense_factor(&self, nu: f64, c: f64) -> Result<SpdFactor> {
        let r = self.rank();
        let scale = 2.0 / self.ops.n as f64;
        let m = Mat::from_fn(r, r, |i, j| {
            let diag = if i == j { 2.0 * nu + c * self.spectrum[i] } else { 0.0 };
            diag + (scale - c) * self.ftf[(i, j)]
        });
        match SpdFactor::new(&m, 0.0, 0.0) {
            Ok(f) => Ok(f),
            Err(_) => SpdFactor::new(&m, JITTER_REL, JITTER_MAX_REL),
        }
    }

    fn low_rank_factor(&self, nu: f64, c: f64) -> Option<S1Factor> {
        let n = self.ops.n;
        if 2 * n > self.rank() {
            return None;
        }
        let dg: Vec<f64> = self.spectrum.iter().map(|s| 2.0 * nu + c * s).collect();
        let top = dg.iter().copied().fold(0.0f64, f64::max);
        if !(top > 0.0) || dg.iter().any(|&v| !(v > 1e-12 * top)) {
            return None;
        }
        let d_inv: Vec<f64> = dg.iter().map(|v| 1.0 / v).collect();
        let cw = 2.0 / n as f64 - c;
        let ft = self.ft();
        let fd = Mat::from_fn(n, self.rank(), |i, j| ft[(i, j)] * d_inv[j]);
        let mut cap = &fd * ft.transpose();
        for i in 0..n {
            for j in 0..n {
                cap[(i, j)] *= cw;
            }
            cap[(i, i)] += 1.0;
        }
        let cap = SpdFactor::new(&cap, 0.0, 0.0).ok()?;
        Some(S1Factor::LowRank { d_inv, c: cw, cap })
    }

    fn s1_solve(&self, factor: &S1Factor, nu: f64, c: f64, b: &[f64]) -> Vec<f64> {
        match factor {
            S1Factor::Dense(f) => f.solve(b),
            S1Factor::LowRank { d_inv, c: cw, cap } => {
                let woodbury = |rhs: &[f64]| -> Vec<f64> {
                    let u: Vec<f64> = rhs.iter().zip(d_inv).map(|(b, d)| b * d).collect();
                    let t = cap.solve(&linalg::matvec(self.ft(), &u));
                    let back = linalg::matvec_t(self.ft(), &t);
                    u.iter()
                        .zip(&back)
                        .zip(d_inv)
                        .map(|((u, k), d)| u - cw * d * k)
                        .collect()
                };
                // One step of iterative refinement.
                let mut x = woodbury(b);
                let res = sub(b, &self.system_apply(nu, c, &x));
                let dx = woodbury(&res);
                x.iter_mut().zip(&dx).for_each(|(x, d)| *x += d);
                x
            }
        }
    }

    /// `(2/n) Ft^T y + kappa Zt^T (phi - lambda)`
    fn rhs(&self, kappa: f64, zt_diff: &[f64]) -> Vec<f64> {
        self.fty
            .iter()
            .zip(zt_diff)
            .map(|(f, z)| f + kappa * z)
            .collect()
    }

    /// Exact S1 with `kappa_eff` multiplying `Zt^T Zt`. Any jitter needed by
    /// the factorization acts as a proximal term around `center`.
    fn s1_exact(
        &self,
        nu: f64,
        kappa: f64,
        kappa_eff: f64,
        zt_diff: &[f64],
        center: &[f64],
    ) -> Result<Vec<f64>> {
        if self.rank() == 0 {
            return Ok(Vec::new());
        }
        let factor = self.factor(nu, kappa_eff)?;
        let mut b = self.rhs(kappa, zt_diff);
        let jitter = factor.jitter();
        if jitter > 0.0 {
            b.iter_mut().zip(center).for_each(|(b, c)| *b += jitter * c);
        }
        Ok(self.s1_solve(&factor, nu, kappa_eff, &b))
    }

    /// Steepest descent with exact line search, started at `start`.
    fn s1_descent(
        &self,
        nu: f64,
        kappa: f64,
        kappa_eff: f64,
        zt_diff: &[f64],
        start: &[f64],
        steps: usize,
    ) -> Vec<f64> {
        let b = self.rhs(kappa, zt_diff);
        let mut t = start.to_vec();
        let mut r = sub(&b, &self.system_apply(nu, kappa_eff, &t));
        for _ in 0..steps {
            let rr = linalg::dot(&r, &r);
            if rr == 0.0 {
                break;
            }
            let mr = self.system_apply(nu, kappa_eff, &r);
            let curv = linalg::dot(&r, &mr);
            if !(curv > 0.0) {
                break;
            }
            let step = rr / curv;
            for ((ti, ri), mri) in t.iter_mut().zip(r.iter_mut()).zip(&mr) {
                *ti += step * *ri;
                *ri -= step * mri;
            }
        }
        t
    }

    /// Minimizer of the smooth part alone:
    /// `(nu (Q + Q^T) + (2/n) F^T F) omega = (2/n) F^T y` on the range of `G`.
    pub fn smooth_minimizer(&self, nu: f64) -> Result<Vec<f64>> {
        let r = self.rank();
        let theta = self.s1_exact(nu, 0.0, 0.0, &vec![0.0; r], &vec![0.0; r])?;
        Ok(self.theta_to_omega(&theta))
    }

    /// `|diag(s)^{1/2} v|`, the norm of `Z^T x` when `v = Zt^T x`.
    fn omega_norm(&self, v: &[f64]) -> f64 {
        v.iter()
            .zip(&self.spectrum)
            .map(|(a, s)| s * a * a)
            .sum::<f64>()
            .sqrt()
    }

    fn theta_objective(
        &self,
        reg: &RegularizerSpec,
        config: &SolverConfig,
        theta: &[f64],
        z_theta: &BlockVector,
    ) -> f64 {
        let n = self.ops.n;
        let fit = linalg::matvec(self.ft(), theta);
        let loss = self.y.iter().zip(&fit).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64;
        loss + config.tau * prox::regularizer_value(reg, z_theta, n)
            + config.nu * linalg::dot(theta, theta)
    }

    pub fn solve(
        &self,
        reg: &RegularizerSpec,
        config: &SolverConfig,
        warm_start: Option<&SolverState>,
    ) -> Result<SolveResult> {
        config.validate()?;
        let (n, d) = (self.ops.n, self.ops.d);
        reg.validate(d)?;
        let mut state = match warm_start {
            Some(s) => {
                s.check_shape(n, d)?;
                let mut s = s.clone();
                s.iteration = 0;
                s
            }
            None => SolverState::initial(n, d, config.kappa_init),
        };

        let nf = n as f64;
        let extra = match (reg, config.en_route) {
            (RegularizerSpec::ElasticNet { mu }, ElasticNetRoute::Footnote) => {
                2.0 * config.tau * (1.0 - mu) / nf
            }
            _ => 0.0,
        };
        let sqrt_dn = ((n * d) as f64).sqrt();
        let sqrt_dim = (self.ops.dim() as f64).sqrt();
        let ztt = self.ztt.as_ref();

        let mut theta = self.omega_to_theta(&state.omega);
        let mut zt_phi = self.zt_apply_t(&state.phi);
        let mut zt_lambda = linalg::matvec(ztt, state.lambda.as_slice());
        let mut history = Vec::new();
        let mut converged = false;

        for k in 1..=config.max_iter {
            let kappa = state.kappa;
            let kappa_eff = kappa + extra;
            let zt_diff = sub(&zt_phi, &zt_lambda);
            theta = match config.s1_mode {
                S1Mode::ExactFactorized => {
                    self.s1_exact(config.nu, kappa, kappa_eff, &zt_diff, &theta)?
                }
                S1Mode::InexactDescent => self.s1_descent(
                    config.nu,
                    kappa,
                    kappa_eff,
                    &zt_diff,
                    &theta,
                    config.s1_descent_schedule.steps(k),
                ),
            };
            if theta.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { iteration: k });
            }

            let z_theta = BlockVector::new(linalg::matvec_t(ztt, &theta), n)?;
            let mut v = z_theta.clone();
            v.as_mut_slice()
                .iter_mut()
                .zip(state.lambda.as_slice())
                .for_each(|(a, l)| *a += l);
            let phi = s2_update(&v, reg, config.tau, kappa, n, config.en_route)?;
            let lambda = s3_update(&state.lambda, &z_theta, &phi)?;

            let zt_phi_new = self.zt_apply_t(&phi);
            let primal = linalg::norm2(&sub(z_theta.as_slice(), phi.as_slice()));
            let dual = kappa * self.omega_norm(&sub(&zt_phi_new, &zt_phi));
            zt_lambda = if k % LAMBDA_REFRESH == 0 {
                linalg::matvec(ztt, lambda.as_slice())
            } else {
                let ft_theta = linalg::matvec(self.ft(), &theta);
                let ztz_theta = self.ztz_apply(&theta, &ft_theta);
                zt_lambda
                    .iter()
                    .zip(&ztz_theta)
                    .zip(&zt_phi_new)
                    .map(|((l, a), p)| l + a - p)
                    .collect()
            };
            zt_phi = zt_phi_new;
            if !primal.is_finite() || !dual.is_finite() {
                return Err(Error::Divergence { iteration: k });
            }

            let eps_pri = sqrt_dn * config.abs_tol
                + config.rel_tol * linalg::norm2(z_theta.as_slice()).max(linalg::norm2(phi.as_slice()));
            let eps_dual =
                sqrt_dim * config.abs_tol + config.rel_tol * kappa * self.omega_norm(&zt_lambda);

            let objective = config
                .record_objective
                .then(|| self.theta_objective(reg, config, &theta, &z_theta));
            state.phi = phi;
            state.lambda = lambda;
            state.iteration = k;
            state.primal_residual = primal;
            state.dual_residual = dual;
            history.push(IterationRecord {
                iteration: k,
                primal_residual: primal,
                dual_residual: dual,
                eps_primal: eps_pri,
                eps_dual,
                kappa,
                objective,
            });

            if primal <= eps_pri && dual <= eps_dual {
                converged = true;
                break;
            }
            let old = state.kappa;
            let new = step_size_update(&mut state, &config.residual_balance);
            if new != old {
                let ratio = old / new;
                zt_lambda.iter_mut().for_each(|v| *v *= ratio);
            }
        }

        state.omega = self.theta_to_omega(&theta);
        let derivative_norms = prox::partial_derivative_norms(&state.phi, n);
        let support = prox::support_from_norms(&derivative_norms);
        let objective = objective_value(self.ops, self.y, reg, config, &state.omega)?;
        Ok(SolveResult {
            omega: state.omega.clone(),
            phi: state.phi.clone(),
            support,
            derivative_norms,
            objective,
            iterations: state.iteration,
            converged,
            residual_history: history,
            state,
        })
    }
}

/// One-shot solve that assembles the cached solver internally.
pub fn solve(
    ops: &OperatorSet,
    y: &[f64],
    reg: &RegularizerSpec,
    config: &SolverConfig,
    warm_start: Option<&SolverState>,
) -> Result<SolveResult> {
    AdmmSolver::new(ops, y)?.solve(reg, config, warm_start)
}
