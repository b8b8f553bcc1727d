//! Kernel functions together with the first and mixed second partial
//! derivatives needed by the derivative-penalised estimators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A positive semi-definite kernel with closed-form derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum KernelSpec {
    /// `k(x, x') = <x, x'>`
    Linear,
    /// `k(x, x') = (<x, x'> + offset)^degree`
    Polynomial { degree: u32, offset: f64 },
    /// `k(x, x') = exp(-|x - x'|^2 / (2 width^2))`
    Gaussian { width: f64 },
}

impl KernelSpec {
    pub fn polynomial(degree: u32, offset: f64) -> Self {
        KernelSpec::Polynomial { degree, offset }
    }

    pub fn gaussian(width: f64) -> Self {
        KernelSpec::Gaussian { width }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Polynomial { degree, offset } => {
                if degree < 1 {
                    return Err(Error::InvalidKernel("polynomial degree must be >= 1".into()));
                }
                if !(offset >= 0.0) || !offset.is_finite() {
                    return Err(Error::InvalidKernel(format!(
                        "polynomial offset must be finite and >= 0, got {offset}"
                    )));
                }
                Ok(())
            }
            KernelSpec::Gaussian { width } => {
                if !(width > 0.0) || !width.is_finite() {
                    return Err(Error::InvalidKernel(format!(
                        "gaussian width must be finite and > 0, got {width}"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn eval(&self, x: &[f64], xp: &[f64]) -> Result<f64> {
        check_dims(x, xp)?;
        Ok(self.eval_unchecked(x, xp))
    }

    /// Gradient of `s -> k(s, xp)` evaluated at `s = x`.
    pub fn grad1(&self, x: &[f64], xp: &[f64]) -> Result<Vec<f64>> {
        check_dims(x, xp)?;
        let mut out = vec![0.0; x.len()];
        self.grad1_into(x, xp, &mut out);
        Ok(out)
    }

    /// Mixed Hessian `d^2 k(s, r) / ds_a dr_b` at `s = x`, `r = xp`, row-major `d x d`.
    pub fn cross_hessian(&self, x: &[f64], xp: &[f64]) -> Result<Vec<f64>> {
        check_dims(x, xp)?;
        let d = x.len();
        let mut out = vec![0.0; d * d];
        self.cross_hessian_into(x, xp, &mut out);
        Ok(out)
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64], xp: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => dot(x, xp),
            KernelSpec::Polynomial { degree, offset } => {
                (dot(x, xp) + offset).powi(degree as i32)
            }
            KernelSpec::Gaussian { width } => {
                (-sq_dist(x, xp) / (2.0 * width * width)).exp()
            }
        }
    }

    pub(crate) fn grad1_into(&self, x: &[f64], xp: &[f64], out: &mut [f64]) {
        match *self {
            KernelSpec::Linear => out.copy_from_slice(xp),
            KernelSpec::Polynomial { degree, offset } => {
                let p = degree as i32;
                let scale = f64::from(degree) * (dot(x, xp) + offset).powi(p - 1);
                for (o, &b) in out.iter_mut().zip(xp) {
                    *o = scale * b;
                }
            }
            KernelSpec::Gaussian { width } => {
                let s2 = width * width;
                let k = (-sq_dist(x, xp) / (2.0 * s2)).exp();
                for ((o, &a), &b) in out.iter_mut().zip(x).zip(xp) {
                    *o = k * (b - a) / s2;
                }
            }
        }
    }

    pub(crate) fn cross_hessian_into(&self, x: &[f64], xp: &[f64], out: &mut [f64]) {
        let d = x.len();
        match *self {
            KernelSpec::Linear => {
                out.iter_mut().for_each(|v| *v = 0.0);
                for a in 0..d {
                    out[a * d + a] = 1.0;
                }
            }
            KernelSpec::Polynomial { degree, offset } => {
                let p = f64::from(degree);
                let u = dot(x, xp) + offset;
                let diag = p * u.powi(degree as i32 - 1);
                let outer = if degree >= 2 {
                    p * (p - 1.0) * u.powi(degree as i32 - 2)
                } else {
                    0.0
                };
                for a in 0..d {
                    for b in 0..d {
                        let mut v = outer * x[b] * xp[a];
                        if a == b {
                            v += diag;
                        }
                        out[a * d + b] = v;
                    }
                }
            }
            KernelSpec::Gaussian { width } => {
                let s2 = width * width;
                let s4 = s2 * s2;
                let k = (-sq_dist(x, xp) / (2.0 * s2)).exp();
                for a in 0..d {
                    let da = xp[a] - x[a];
                    for b in 0..d {
                        out[a * d + b] = if a == b {
                            k * (s2 - da * da) / s4
                        } else {
                            k * da * (x[b] - xp[b]) / s4
                        };
                    }
                }
            }
        }
    }
}

fn check_dims(x: &[f64], xp: &[f64]) -> Result<()> {
    if x.len() != xp.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: xp.len(),
        });
    }
    Ok(())
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}
