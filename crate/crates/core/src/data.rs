use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major n×p covariate matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    n: usize,
    p: usize,
    values: Vec<f64>,
}

impl Covariates {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if n == 0 || p == 0 {
            return Err(Error::Schema("covariate matrix is empty".into()));
        }
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::Schema("ragged covariate rows".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Schema("non-finite covariate value".into()));
        }
        Ok(Self {
            n,
            p,
            values: rows.concat(),
        })
    }

    /// Single-covariate matrix.
    pub fn from_column(column: &[f64]) -> Result<Self> {
        let rows: Vec<Vec<f64>> = column.iter().map(|&v| vec![v]).collect();
        Self::from_rows(&rows)
    }

    /// Column-wise construction; all columns must have equal length.
    pub fn from_columns(columns: &[&[f64]]) -> Result<Self> {
        let n = columns.first().map_or(0, |c| c.len());
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::Schema("covariate columns differ in length".into()));
        }
        let rows: Vec<Vec<f64>> = (0..n).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
        Self::from_rows(&rows)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn get(&self, i: usize, var: usize) -> f64 {
        self.values[i * self.p + var]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    pub fn column(&self, var: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, var)).collect()
    }
}
