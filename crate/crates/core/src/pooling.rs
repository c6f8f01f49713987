//! Sliding-window average pooling `P_μ : R^{d+μ} -> R^d`.
//!
//! Row `i` of the induced matrix holds `1/(μ+1)` in columns `i..=i+μ`, so the
//! matrix always has full row rank and `μ = 0` is the identity.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::check_dim;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolingSpec {
    mu: usize,
    out_dim: usize,
}

impl PoolingSpec {
    pub fn new(mu: usize, out_dim: usize) -> Result<Self> {
        if out_dim == 0 {
            return Err(Error::invalid("pooling output dimension must be positive"));
        }
        Ok(Self { mu, out_dim })
    }

    /// Pooling that maps `in_dim` neurons down to `out_dim` outputs.
    pub fn from_dims(in_dim: usize, out_dim: usize) -> Result<Self> {
        if in_dim < out_dim {
            return Err(Error::invalid(format!(
                "layer width {in_dim} is smaller than the output dimension {out_dim}"
            )));
        }
        Self::new(in_dim - out_dim, out_dim)
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::new(0, dim)
    }

    #[inline]
    pub fn mu(&self) -> usize {
        self.mu
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.out_dim + self.mu
    }

    #[inline]
    fn scale(&self) -> f64 {
        1.0 / (self.mu as f64 + 1.0)
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("pool input", self.in_dim(), x.len())?;
        let w = self.scale();
        Ok((0..self.out_dim)
            .map(|i| x[i..=i + self.mu].iter().sum::<f64>() * w)
            .collect())
    }

    /// `Pᵀ y`.
    pub fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim("pool adjoint input", self.out_dim, y.len())?;
        let w = self.scale();
        let mut x = vec![0.0; self.in_dim()];
        for (i, yi) in y.iter().enumerate() {
            for xj in &mut x[i..=i + self.mu] {
                *xj += yi * w;
            }
        }
        Ok(x)
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let w = self.scale();
        DMatrix::from_fn(self.out_dim, self.in_dim(), |i, j| {
            if j >= i && j <= i + self.mu {
                w
            } else {
                0.0
            }
        })
    }

    /// `P Pᵀ`, a banded symmetric positive definite `d × d` matrix.
    pub fn gram(&self) -> DMatrix<f64> {
        let w = self.scale();
        let mu = self.mu as isize;
        DMatrix::from_fn(self.out_dim, self.out_dim, |i, k| {
            let overlap = mu + 1 - (i as isize - k as isize).abs();
            if overlap > 0 {
                overlap as f64 * w * w
            } else {
                0.0
            }
        })
    }

    /// `P A` for `A` with `in_dim` rows.
    pub fn pool_rows(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("pool rows", self.in_dim(), a.nrows())?;
        let w = self.scale();
        let mut out = DMatrix::zeros(self.out_dim, a.ncols());
        for c in 0..a.ncols() {
            let col = a.column(c);
            for i in 0..self.out_dim {
                out[(i, c)] = col.rows(i, self.mu + 1).sum() * w;
            }
        }
        Ok(out)
    }

    /// `Pᵀ B` for `B` with `out_dim` rows.
    pub fn adjoint_rows(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("pool adjoint rows", self.out_dim, b.nrows())?;
        let w = self.scale();
        let mut out = DMatrix::zeros(self.in_dim(), b.ncols());
        for c in 0..b.ncols() {
            for i in 0..self.out_dim {
                let v = b[(i, c)] * w;
                for j in i..=i + self.mu {
                    out[(j, c)] += v;
                }
            }
        }
        Ok(out)
    }

    /// `A Pᵀ`: pools every row of `A` (samples × `in_dim`).
    pub fn pool_cols(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("pool columns", self.in_dim(), a.ncols())?;
        let w = self.scale();
        let mut out = DMatrix::zeros(a.nrows(), self.out_dim);
        for i in 0..self.out_dim {
            let mut col = out.column_mut(i);
            for j in i..=i + self.mu {
                col += a.column(j);
            }
            col *= w;
        }
        Ok(out)
    }
}

pub fn pool_apply(p: &PoolingSpec, x: &[f64]) -> Result<Vec<f64>> {
    p.apply(x)
}

pub fn pool_adjoint(p: &PoolingSpec, y: &[f64]) -> Result<Vec<f64>> {
    p.adjoint(y)
}
