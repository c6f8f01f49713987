//! Discrete inner products over sample-indexed vectors and the relative
//! squared error.

use std::ops::Range;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::check_dim;
use crate::{Error, Result};

/// Splits `0..n` into `parts` contiguous ranges (at most `n`).
pub fn partition(n: usize, parts: usize) -> Vec<Range<usize>> {
    let parts = parts.clamp(1, n.max(1));
    let base = n / parts;
    let extra = n % parts;
    let mut start = 0;
    (0..parts)
        .map(|p| {
            let len = base + usize::from(p < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// Evaluates `f` on each partition in parallel and adds the partial sums in
/// partition order, so the result depends only on `parts`.
pub fn partitioned_sum<F>(n: usize, parts: usize, f: F) -> f64
where
    F: Fn(Range<usize>) -> f64 + Sync,
{
    if parts <= 1 {
        return f(0..n);
    }
    let partials: Vec<f64> = partition(n, parts).into_par_iter().map(&f).collect();
    partials.into_iter().fold(0.0, |acc, v| acc + v)
}

/// `⟨u, v⟩_m = Σ_j u_jᵀ v_j` for row-per-sample matrices.
pub fn inner_product_m(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<f64> {
    check_dim("inner product samples", u.nrows(), v.nrows())?;
    check_dim("inner product width", u.ncols(), v.ncols())?;
    let mut total = 0.0;
    for j in 0..u.nrows() {
        let mut s = 0.0;
        for c in 0..u.ncols() {
            s += u[(j, c)] * v[(j, c)];
        }
        total += s;
    }
    Ok(total)
}

pub fn norm_m(u: &DMatrix<f64>) -> f64 {
    inner_product_m(u, u).expect("same shape").sqrt()
}

/// `Σ‖ŷ_n − y_n‖² / Σ‖y_n‖²`.
pub fn compute_rse(predictions: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<f64> {
    check_dim("rse samples", targets.nrows(), predictions.nrows())?;
    check_dim("rse width", targets.ncols(), predictions.ncols())?;
    let denom = targets.norm_squared();
    if denom == 0.0 {
        return Err(Error::ZeroTargets);
    }
    let num: f64 = predictions
        .iter()
        .zip(targets.iter())
        .map(|(p, y)| (p - y) * (p - y))
        .sum();
    Ok(num / denom)
}
