//! Thin helpers over faer for the dense kernels used throughout the crate.

use faer::linalg::solvers::{Llt, Solve};
use faer::{Col, ColRef, Mat, MatRef, Side};

use crate::error::{Error, Result};

pub fn matvec(a: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    let y: Col<f64> = a * ColRef::from_slice(x);
    y.iter().copied().collect()
}

pub fn matvec_t(a: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    let y: Col<f64> = a.transpose() * ColRef::from_slice(x);
    y.iter().copied().collect()
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn trace(m: MatRef<'_, f64>) -> f64 {
    (0..m.nrows().min(m.ncols())).map(|i| m[(i, i)]).sum()
}

/// Cholesky factor of a symmetric positive (semi-)definite matrix with a
/// diagonal jitter that escalates by decades until the factorization succeeds.
pub struct SpdFactor {
    llt: Llt<f64>,
    pub jitter: f64,
}

impl SpdFactor {
    /// Factors `m + eps I`, starting at `eps = rel_jitter * trace(m) / dim` and
    /// multiplying by ten up to `max_rel_jitter * trace(m) / dim`.
    pub fn new(m: &Mat<f64>, rel_jitter: f64, max_rel_jitter: f64) -> Result<Self> {
        let dim = m.nrows();
        let scale = (trace(m.as_ref()) / dim as f64).abs().max(f64::MIN_POSITIVE);
        let mut rel = rel_jitter;
        let mut work = m.clone();
        loop {
            let eps = rel * scale;
            for i in 0..dim {
                work[(i, i)] = m[(i, i)] + eps;
            }
            match work.llt(Side::Lower) {
                Ok(llt) => return Ok(Self { llt, jitter: eps }),
                Err(_) if rel > 0.0 && rel * 10.0 <= max_rel_jitter * (1.0 + 1e-12) => rel *= 10.0,
                Err(_) => return Err(Error::Factorization { jitter: eps }),
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let x: Col<f64> = self.llt.solve(ColRef::from_slice(b));
        x.iter().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_solves_spd_system() {
        let m = Mat::from_fn(3, 3, |i, j| if i == j { 4.0 } else { 1.0 });
        let f = SpdFactor::new(&m, 0.0, 0.0).unwrap();
        let x = f.solve(&[6.0, 6.0, 6.0]);
        for v in x {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn jitter_rescues_singular_psd() {
        let m = Mat::from_fn(2, 2, |_, _| 1.0);
        let f = SpdFactor::new(&m, 1e-10, 1e-6).unwrap();
        assert!(f.jitter > 0.0);
    }

    #[test]
    fn indefinite_matrix_fails_after_escalation() {
        let m = Mat::from_fn(2, 2, |i, j| if i == j { -1.0 } else { 0.0 });
        assert!(matches!(
            SpdFactor::new(&m, 1e-10, 1e-6),
            Err(Error::Factorization { .. })
        ));
    }
}
