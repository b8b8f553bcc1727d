//! Assembly of the dense matrices of the finite-dimensional problem.
//!
//! With `N = n + d n` coefficients `omega = [alpha; beta]`:
//!
//! * `K` (`n x n`): `K_ij = k(x_i, x_j)`
//! * `D` (`dn x n`): blocks `D^a`, `D^a_ij = d/ds_a k(s, x_j)` at `s = x_i`
//! * `L` (`dn x dn`): blocks `L^ab`, `L^ab_ij = d^2/ds_a dr_b k(s, r)` at `(x_i, x_j)`
//! * `F = [K D^T]` (`n x N`): `F omega` are the function values at the inputs
//! * `Z = [D L]` (`dn x N`): `Z omega` stacks the partial derivatives per variable
//! * `Q = [[K, 0], [2D, L]]` (`N x N`): `omega^T Q omega` is the squared RKHS norm

use faer::Mat;

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;

pub const DEFAULT_MEMORY_CAP_BYTES: u64 = 4 * 1024 * 1024 * 1024;

#[derive(Clone, Debug)]
pub struct OperatorSet {
    pub kernel: KernelSpec,
    pub n: usize,
    pub d: usize,
    pub k: Mat<f64>,
    pub d_mat: Mat<f64>,
    pub l: Mat<f64>,
    pub f: Mat<f64>,
    pub z: Mat<f64>,
    pub q: Mat<f64>,
}

impl OperatorSet {
    /// Number of coefficients `n + d n`.
    pub fn dim(&self) -> usize {
        self.n + self.n * self.d
    }

    /// Symmetric Gram matrix `[[K, D^T], [D, L]] = (Q + Q^T) / 2` of the
    /// kernel sections and kernel derivative sections.
    pub fn gram(&self) -> Mat<f64> {
        let (n, big) = (self.n, self.dim());
        Mat::from_fn(big, big, |r, c| match (r < n, c < n) {
            (true, true) => self.k[(r, c)],
            (true, false) => self.d_mat[(c - n, r)],
            (false, true) => self.d_mat[(r - n, c)],
            (false, false) => self.l[(r - n, c - n)],
        })
    }

    /// Estimated memory footprint in bytes of the assembled matrices.
    pub fn estimate_bytes(n: usize, d: usize) -> u64 {
        let (n, d) = (n as u64, d as u64);
        let dn = d * n;
        let big = n + dn;
        8 * (n * n + dn * n + dn * dn + n * big + dn * big + big * big)
    }
}

pub fn assemble_operators(kernel: &KernelSpec, x: &DataMatrix) -> Result<OperatorSet> {
    assemble_operators_with_cap(kernel, x, DEFAULT_MEMORY_CAP_BYTES)
}

pub fn assemble_operators_with_cap(
    kernel: &KernelSpec,
    x: &DataMatrix,
    memory_cap_bytes: u64,
) -> Result<OperatorSet> {
    kernel.validate()?;
    let (n, d) = (x.n(), x.d());
    let estimated = OperatorSet::estimate_bytes(n, d);
    if estimated > memory_cap_bytes {
        return Err(Error::MemoryCap {
            estimated,
            cap: memory_cap_bytes,
        });
    }

    let dn = d * n;
    let mut k = Mat::<f64>::zeros(n, n);
    let mut dm = Mat::<f64>::zeros(dn, n);
    let mut l = Mat::<f64>::zeros(dn, dn);
    let mut grad = vec![0.0; d];
    let mut hess = vec![0.0; d * d];

    for i in 0..n {
        let xi = x.row(i);
        for j in i..n {
            let xj = x.row(j);
            let kij = kernel.eval_unchecked(xi, xj);
            k[(i, j)] = kij;
            k[(j, i)] = kij;

            kernel.grad1_into(xi, xj, &mut grad);
            for a in 0..d {
                dm[(a * n + i, j)] = grad[a];
            }
            if i != j {
                kernel.grad1_into(xj, xi, &mut grad);
                for a in 0..d {
                    dm[(a * n + j, i)] = grad[a];
                }
            }

            // L^ab_ij and L^ba_ji share one evaluation so the symmetry is exact.
            kernel.cross_hessian_into(xi, xj, &mut hess);
            if i == j {
                for a in 0..d {
                    for b in a..d {
                        let v = hess[a * d + b];
                        l[(a * n + i, b * n + i)] = v;
                        l[(b * n + i, a * n + i)] = v;
                    }
                }
            } else {
                for a in 0..d {
                    for b in 0..d {
                        let v = hess[a * d + b];
                        l[(a * n + i, b * n + j)] = v;
                        l[(b * n + j, a * n + i)] = v;
                    }
                }
            }
        }
    }

    let big = n + dn;
    let f = Mat::from_fn(n, big, |r, c| if c < n { k[(r, c)] } else { dm[(c - n, r)] });
    let z = Mat::from_fn(dn, big, |r, c| if c < n { dm[(r, c)] } else { l[(r, c - n)] });
    let q = Mat::from_fn(big, big, |r, c| match (r < n, c < n) {
        (true, true) => k[(r, c)],
        (true, false) => 0.0,
        (false, true) => 2.0 * dm[(r - n, c)],
        (false, false) => l[(r - n, c - n)],
    });

    Ok(OperatorSet {
        kernel: *kernel,
        n,
        d,
        k,
        d_mat: dm,
        l,
        f,
        z,
        q,
    })
}

/// Median of the pooled Euclidean distances from every point to its
/// `min(neighbors, n - 1)` nearest neighbours.
pub fn gaussian_width_heuristic(x: &DataMatrix, neighbors: usize) -> Result<f64> {
    let n = x.n();
    if n < 2 {
        return Err(Error::InvalidData(
            "width heuristic needs at least two points".into(),
        ));
    }
    if neighbors == 0 {
        return Err(Error::InvalidParameter("neighbors must be >= 1".into()));
    }
    let m = neighbors.min(n - 1);
    let mut pooled = Vec::with_capacity(n * m);
    let mut dists = Vec::with_capacity(n - 1);
    for i in 0..n {
        dists.clear();
        dists.extend(
            (0..n)
                .filter(|&j| j != i)
                .map(|j| crate::kernel::sq_dist(x.row(i), x.row(j)).sqrt()),
        );
        dists.sort_by(f64::total_cmp);
        pooled.extend_from_slice(&dists[..m]);
    }
    let med = median(&mut pooled);
    if !(med > 0.0) {
        return Err(Error::DegenerateData(
            "nearest-neighbour distances are all zero".into(),
        ));
    }
    Ok(med)
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let len = values.len();
    if len % 2 == 1 {
        values[len / 2]
    } else {
        0.5 * (values[len / 2 - 1] + values[len / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_linear_example() {
        let x = DataMatrix::new(1, 1, vec![2.0]).unwrap();
        let ops = assemble_operators(&KernelSpec::Linear, &x).unwrap();
        assert_eq!(ops.k[(0, 0)], 4.0);
        assert_eq!(ops.d_mat[(0, 0)], 2.0);
        assert_eq!(ops.l[(0, 0)], 1.0);
        assert_eq!((ops.f[(0, 0)], ops.f[(0, 1)]), (4.0, 2.0));
        assert_eq!((ops.z[(0, 0)], ops.z[(0, 1)]), (2.0, 1.0));
        assert_eq!(
            [ops.q[(0, 0)], ops.q[(0, 1)], ops.q[(1, 0)], ops.q[(1, 1)]],
            [4.0, 0.0, 4.0, 1.0]
        );
    }

    #[test]
    fn mixed_derivative_symmetry_is_exact() {
        let x = DataMatrix::from_rows(&[vec![0.3, -1.2], vec![1.1, 0.4]]).unwrap();
        let ops = assemble_operators(&KernelSpec::gaussian(1.0), &x).unwrap();
        let (n, d) = (2, 2);
        for a in 0..d {
            for b in 0..d {
                for i in 0..n {
                    for j in 0..n {
                        assert_eq!(ops.l[(a * n + i, b * n + j)], ops.l[(b * n + j, a * n + i)]);
                    }
                }
            }
        }
    }

    #[test]
    fn memory_cap_rejects_large_problems() {
        let x = DataMatrix::new(10, 3, vec![0.5; 30]).unwrap();
        let err = assemble_operators_with_cap(&KernelSpec::Linear, &x, 1000).unwrap_err();
        assert!(matches!(err, Error::MemoryCap { .. }));
    }

    #[test]
    fn width_heuristic_small_examples() {
        let two = DataMatrix::new(2, 1, vec![0.0, 1.0]).unwrap();
        assert_eq!(gaussian_width_heuristic(&two, 20).unwrap(), 1.0);
        let three = DataMatrix::new(3, 1, vec![0.0, 1.0, 2.0]).unwrap();
        assert_eq!(gaussian_width_heuristic(&three, 1).unwrap(), 1.0);
    }

    #[test]
    fn width_heuristic_degenerate() {
        let dup = DataMatrix::new(3, 2, vec![1.0; 6]).unwrap();
        assert!(matches!(
            gaussian_width_heuristic(&dup, 20),
            Err(Error::DegenerateData(_))
        ));
        let one = DataMatrix::new(1, 2, vec![1.0, 2.0]).unwrap();
        assert!(gaussian_width_heuristic(&one, 20).is_err());
    }
}
