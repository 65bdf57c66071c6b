use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The N x M factor loading matrix with the identifiability structure:
/// unit diagonal and zero upper triangle in the top M x M block, all
/// entries below the diagonal free.
///
/// Free entries of column s (0-based) are rows s+1..N; the structural
/// ones and zeros are never written by the sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorLoading {
    n: usize,
    m: usize,
    /// Row-major N x M storage.
    values: Vec<f64>,
}

impl FactorLoading {
    /// Identity-structured loading with all free entries zero.
    pub fn new(n: usize, m: usize) -> Result<Self> {
        if m == 0 || m > n {
            return Err(Error::validation(format!(
                "factor count {m} must be in 1..={n}"
            )));
        }
        let mut values = vec![0.0; n * m];
        for i in 0..m {
            values[i * m + i] = 1.0;
        }
        Ok(FactorLoading { n, m, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.m + col]
    }

    /// Number of free entries in column s: N - s - 1.
    pub fn free_len(&self, col: usize) -> usize {
        self.n - col - 1
    }

    /// The free part of column s (rows s+1..N).
    pub fn free_column(&self, col: usize) -> DVector<f64> {
        DVector::from_fn(self.free_len(col), |i, _| self.get(col + 1 + i, col))
    }

    /// Writes the free part of column s; structural entries are untouched.
    pub fn set_free_column(&mut self, col: usize, values: &DVector<f64>) -> Result<()> {
        if values.len() != self.free_len(col) {
            return Err(Error::validation(format!(
                "column {col} expects {} free entries, got {}",
                self.free_len(col),
                values.len()
            )));
        }
        for (i, v) in values.iter().enumerate() {
            self.values[(col + 1 + i) * self.m + col] = *v;
        }
        Ok(())
    }

    /// Total free entries across all columns.
    pub fn total_free(&self) -> usize {
        (0..self.m).map(|s| self.free_len(s)).sum()
    }

    /// Dense copy of the matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.m, |i, j| self.get(i, j))
    }

    /// Checks the structural invariants (unit diagonal, zero upper block).
    pub fn structure_ok(&self) -> bool {
        for i in 0..self.m {
            if self.get(i, i) != 1.0 {
                return false;
            }
            for j in (i + 1)..self.m {
                if self.get(i, j) != 0.0 {
                    return false;
                }
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structure_after_new() {
        let b = FactorLoading::new(5, 3).unwrap();
        assert!(b.structure_ok());
        assert_eq!(b.get(0, 0), 1.0);
        assert_eq!(b.get(0, 1), 0.0);
        assert_eq!(b.get(1, 1), 1.0);
        assert_eq!(b.get(4, 2), 0.0);
    }

    #[test]
    fn free_column_round_trip() {
        let mut b = FactorLoading::new(5, 2).unwrap();
        let v = DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4]);
        b.set_free_column(0, &v).unwrap();
        assert_eq!(b.free_column(0), v);
        assert!(b.structure_ok());
        assert_eq!(b.get(1, 0), 0.1);
        assert_eq!(b.get(4, 0), 0.4);

        let w = DVector::from_vec(vec![-1.0, 2.0, 7.0]);
        b.set_free_column(1, &w).unwrap();
        assert_eq!(b.free_column(1), w);
        assert!(b.structure_ok());
    }

    #[test]
    fn wrong_length_rejected() {
        let mut b = FactorLoading::new(4, 2).unwrap();
        assert!(b.set_free_column(0, &DVector::from_vec(vec![1.0])).is_err());
    }

    #[test]
    fn invalid_dims_rejected() {
        assert!(FactorLoading::new(3, 0).is_err());
        assert!(FactorLoading::new(3, 4).is_err());
        assert!(FactorLoading::new(3, 3).is_ok());
    }
}
