use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major `n x d` matrix of input points; row `i` is one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DataMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidData(format!(
                "data matrix must have at least one row and one column, got {rows}x{cols}"
            )));
        }
        if values.len() != rows * cols {
            return Err(Error::InvalidData(format!(
                "expected {} values for a {rows}x{cols} matrix, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite entry at row {}, column {}",
                pos / cols + 1,
                pos % cols + 1
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != d) {
            return Err(Error::InvalidData(format!(
                "row {} has {} columns, expected {d}",
                i + 1,
                r.len()
            )));
        }
        Self::new(n, d, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.rows
    }

    pub fn d(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.cols)
    }

    pub fn get(&self, i: usize, a: usize) -> f64 {
        self.values[i * self.cols + a]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Keeps only the listed columns, in the listed order.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Self> {
        if let Some(&c) = columns.iter().find(|&&c| c >= self.cols) {
            return Err(Error::InvalidData(format!(
                "column index {c} out of range for {} columns",
                self.cols
            )));
        }
        let values = self
            .rows()
            .flat_map(|r| columns.iter().map(move |&c| r[c]))
            .collect();
        Self::new(self.rows, columns.len(), values)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let values = rows.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        Self::new(rows.len(), self.cols, values)
    }

    pub fn map_rows(&self, mut f: impl FnMut(&[f64], &mut [f64])) -> Self {
        let mut values = vec![0.0; self.values.len()];
        for (src, dst) in self.values.chunks_exact(self.cols).zip(values.chunks_exact_mut(self.cols)) {
            f(src, dst);
        }
        Self {
            rows: self.rows,
            cols: self.cols,
            values,
        }
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.cols];
        for r in self.rows() {
            for (acc, v) in m.iter_mut().zip(r) {
                *acc += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.rows as f64);
        m
    }

    /// Population standard deviation of each column.
    pub fn column_stds(&self) -> Vec<f64> {
        let means = self.column_means();
        let mut s = vec![0.0; self.cols];
        for r in self.rows() {
            for ((acc, v), m) in s.iter_mut().zip(r).zip(&means) {
                *acc += (v - m) * (v - m);
            }
        }
        s.iter_mut().for_each(|v| *v = (*v / self.rows as f64).sqrt());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(DataMatrix::new(0, 3, vec![]).is_err());
        assert!(DataMatrix::new(1, 0, vec![]).is_err());
        assert!(DataMatrix::new(1, 2, vec![1.0]).is_err());
        let err = DataMatrix::new(2, 2, vec![1.0, 2.0, f64::NAN, 0.0]).unwrap_err();
        assert!(err.to_string().contains("row 2, column 1"));
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(DataMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    #[test]
    fn column_selection_and_stats() {
        let x = DataMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![3.0, 6.0, 9.0]]).unwrap();
        let s = x.select_columns(&[2, 0]).unwrap();
        assert_eq!(s.row(0), &[3.0, 1.0]);
        assert_eq!(s.row(1), &[9.0, 3.0]);
        assert_eq!(x.column_means(), vec![2.0, 4.0, 6.0]);
        assert_eq!(x.column_stds(), vec![1.0, 2.0, 3.0]);
        assert!(x.select_columns(&[3]).is_err());
    }
}
