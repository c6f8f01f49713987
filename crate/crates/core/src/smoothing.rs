//! Gaussian smoothing of component functions by windowed rectangle quadrature.
//!
//! For a query point `x` with window `[a_x, b_x]` and `M` nodes
//! `y_i = a_x + i (b_x - a_x) / M`, `i = 1..=M`, the smoothed value is
//! `(b_x - a_x)/M * sum_i G_τ(x - y_i) f(y_i)`. Only 1-D inputs are supported.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Upper bound on quadrature nodes evaluated in a single batch.
const NODE_CHUNK: usize = 16_384;

pub fn gaussian_eval(tau: f64, u: f64) -> Result<f64> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!(
            "gaussian width must be positive, got {tau}"
        )));
    }
    Ok(gaussian(tau, u))
}

#[inline]
fn gaussian(tau: f64, u: f64) -> f64 {
    let z = u / tau;
    (-0.5 * z * z).exp() / (tau * (2.0 * PI).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum WindowMode {
    /// Half-width of `count` grid steps of size `step`.
    GridSteps { count: usize, step: f64 },
    /// Half-width of `factor * τ`.
    TauMultiples { factor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmootherConfig {
    pub tau: f64,
    pub window: WindowMode,
    pub quad_points: usize,
    pub renormalize: bool,
}

impl SmootherConfig {
    pub fn new(tau: f64, window: WindowMode, quad_points: usize) -> Result<Self> {
        let cfg = Self {
            tau,
            window,
            quad_points,
            renormalize: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn renormalized(mut self) -> Self {
        self.renormalize = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::invalid(format!(
                "smoothing tau must be positive, got {}",
                self.tau
            )));
        }
        let hw = self.half_width();
        if !(hw > 0.0) || !hw.is_finite() {
            return Err(Error::invalid(
                "smoothing window half-width must be positive",
            ));
        }
        if self.quad_points < 2 {
            return Err(Error::invalid(
                "smoothing needs at least 2 quadrature points",
            ));
        }
        Ok(())
    }

    pub fn half_width(&self) -> f64 {
        match self.window {
            WindowMode::GridSteps { count, step } => count as f64 * step,
            WindowMode::TauMultiples { factor } => factor * self.tau,
        }
    }

    /// Window `[a_x, b_x]` around `x`.
    pub fn interval(&self, x: f64) -> (f64, f64) {
        let hw = self.half_width();
        (x - hw, x + hw)
    }

    pub fn nodes(&self, x: f64) -> impl Iterator<Item = f64> {
        let (a, b) = self.interval(x);
        let h = (b - a) / self.quad_points as f64;
        (1..=self.quad_points).map(move |i| h * i as f64 + a)
    }

    /// Quadrature weights at `x`, normalized to sum to one when `renormalize` is set.
    pub fn weights(&self, x: f64) -> Vec<f64> {
        let (a, b) = self.interval(x);
        let h = (b - a) / self.quad_points as f64;
        let mut w: Vec<f64> = self
            .nodes(x)
            .map(|y| h * gaussian(self.tau, x - y))
            .collect();
        if self.renormalize {
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= total);
        }
        w
    }

    fn combine(&self, weights: &[f64], values: &DMatrix<f64>, first_row: usize, out: &mut [f64]) {
        let m = self.quad_points;
        for (c, o) in out.iter_mut().enumerate() {
            if self.renormalize {
                // Weights sum to one, so summing deviations from the first node
                // reproduces constants bit-for-bit.
                let base = values[(first_row, c)];
                let dev: f64 = (0..m)
                    .map(|i| weights[i] * (values[(first_row + i, c)] - base))
                    .sum();
                *o = base + dev;
            } else {
                *o = (0..m)
                    .map(|i| weights[i] * values[(first_row + i, c)])
                    .sum();
            }
        }
    }
}

/// Smoothed value of `f` at a single point; `f` maps a batch of points to a
/// `points × t` matrix.
pub fn smooth_at<F>(f: F, cfg: &SmootherConfig, x: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<DMatrix<f64>>,
{
    let out = smooth_points(f, cfg, &[x])?;
    Ok(out.row(0).iter().copied().collect())
}

/// Smoothed values at arbitrary query points, returned as `xs.len() × t`.
pub fn smooth_points<F>(f: F, cfg: &SmootherConfig, xs: &[f64]) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<DMatrix<f64>>,
{
    cfg.validate()?;
    let m = cfg.quad_points;
    let per_chunk = (NODE_CHUNK / m).max(1);
    let mut out: Option<DMatrix<f64>> = None;
    let mut row = vec![];
    for (chunk_idx, chunk) in xs.chunks(per_chunk).enumerate() {
        let nodes: Vec<f64> = chunk.iter().flat_map(|&x| cfg.nodes(x)).collect();
        let values = f(&nodes)?;
        if values.nrows() != nodes.len() {
            return Err(Error::DimensionMismatch {
                context: "smoothing evaluator rows",
                expected: nodes.len(),
                found: values.nrows(),
            });
        }
        let t = values.ncols();
        let out = out.get_or_insert_with(|| DMatrix::zeros(xs.len(), t));
        row.resize(t, 0.0);
        for (j, &x) in chunk.iter().enumerate() {
            let w = cfg.weights(x);
            cfg.combine(&w, &values, j * m, &mut row);
            let r = chunk_idx * per_chunk + j;
            for (c, v) in row.iter().enumerate() {
                out[(r, c)] = *v;
            }
        }
    }
    Ok(out.unwrap_or_else(|| DMatrix::zeros(0, 0)))
}

/// An equally spaced set of points `start + i * step`, `i < len`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformGrid {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl UniformGrid {
    pub fn from_points(xs: &[f64]) -> Result<Self> {
        if xs.len() < 2 {
            return Err(Error::invalid("a grid needs at least two points"));
        }
        let start = xs[0];
        let range = xs[xs.len() - 1] - start;
        let step = range / (xs.len() - 1) as f64;
        if !(step > 0.0) {
            return Err(Error::invalid("grid points must be increasing"));
        }
        let tol = 1e-9 * range.abs();
        for (i, &x) in xs.iter().enumerate() {
            if (x - (start + step * i as f64)).abs() > tol {
                return Err(Error::invalid(format!(
                    "grid is not uniform at index {i} (x = {x})"
                )));
            }
        }
        Ok(Self {
            start,
            step,
            len: xs.len(),
        })
    }

    pub fn point(&self, i: isize) -> f64 {
        self.start + self.step * i as f64
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len as isize).map(|i| self.point(i)).collect()
    }
}

/// Smoothing at every grid point. When the quadrature nodes coincide with
/// grid points, `f` is evaluated once on the (extended) grid and reused.
pub fn smooth_grid<F>(f: F, cfg: &SmootherConfig, grid: &UniformGrid) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<DMatrix<f64>>,
{
    cfg.validate()?;
    let aligned = match cfg.window {
        WindowMode::GridSteps { count, step } => {
            cfg.quad_points == 2 * count && (step - grid.step).abs() <= 1e-12 * grid.step
        }
        WindowMode::TauMultiples { .. } => false,
    };
    if !aligned {
        return smooth_points(f, cfg, &grid.points());
    }

    // Node i of grid point j sits at grid index j - count + i.
    let count = cfg.quad_points as isize / 2;
    let first = 1 - count;
    let ext: Vec<f64> = (first..grid.len as isize + count)
        .map(|k| grid.point(k))
        .collect();
    let mut values: Option<DMatrix<f64>> = None;
    let mut filled = 0;
    for chunk in ext.chunks(NODE_CHUNK) {
        let v = f(chunk)?;
        if v.nrows() != chunk.len() {
            return Err(Error::DimensionMismatch {
                context: "smoothing evaluator rows",
                expected: chunk.len(),
                found: v.nrows(),
            });
        }
        let all = values.get_or_insert_with(|| DMatrix::zeros(ext.len(), v.ncols()));
        all.rows_mut(filled, chunk.len()).copy_from(&v);
        filled += chunk.len();
    }
    let values = values.expect("extended grid is never empty");
    let t = values.ncols();
    let mut out = DMatrix::zeros(grid.len, t);
    let mut row = vec![0.0; t];
    for j in 0..grid.len {
        let x = grid.point(j as isize);
        let w = cfg.weights(x);
        cfg.combine(&w, &values, j, &mut row);
        for (c, v) in row.iter().enumerate() {
            out[(j, c)] = *v;
        }
    }
    Ok(out)
}

/// Piecewise-linear interpolant of samples on a uniform grid, held constant
/// outside the grid.
#[derive(Debug, Clone)]
pub struct GridInterpolant<'a> {
    grid: UniformGrid,
    values: &'a DMatrix<f64>,
}

impl<'a> GridInterpolant<'a> {
    pub fn new(grid: UniformGrid, values: &'a DMatrix<f64>) -> Result<Self> {
        if values.nrows() != grid.len {
            return Err(Error::DimensionMismatch {
                context: "interpolant samples",
                expected: grid.len,
                found: values.nrows(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn eval(&self, xs: &[f64]) -> Result<DMatrix<f64>> {
        let t = self.values.ncols();
        let last = self.grid.len - 1;
        let mut out = DMatrix::zeros(xs.len(), t);
        for (r, &x) in xs.iter().enumerate() {
            let u = (x - self.grid.start) / self.grid.step;
            if u <= 0.0 {
                out.row_mut(r).copy_from(&self.values.row(0));
            } else if u >= last as f64 {
                out.row_mut(r).copy_from(&self.values.row(last));
            } else {
                let i = (u.floor() as usize).min(last - 1);
                let frac = u - i as f64;
                for c in 0..t {
                    let lo = self.values[(i, c)];
                    let hi = self.values[(i + 1, c)];
                    out[(r, c)] = lo + frac * (hi - lo);
                }
            }
        }
        Ok(out)
    }
}

/// Smooths sampled grid values through their linear interpolant.
pub fn smooth_grid_samples(
    values: &DMatrix<f64>,
    cfg: &SmootherConfig,
    grid: &UniformGrid,
) -> Result<DMatrix<f64>> {
    let interp = GridInterpolant::new(*grid, values)?;
    smooth_grid(|xs| interp.eval(xs), cfg, grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_fn(g: impl Fn(f64) -> f64) -> impl Fn(&[f64]) -> Result<DMatrix<f64>> {
        move |xs: &[f64]| {
            Ok(DMatrix::from_iterator(
                xs.len(),
                1,
                xs.iter().map(|&x| g(x)),
            ))
        }
    }

    fn inv_sqrt_2pi() -> f64 {
        1.0 / (2.0 * PI).sqrt()
    }

    #[test]
    fn gaussian_values() {
        assert_eq!(gaussian_eval(1.0, 0.0).unwrap(), inv_sqrt_2pi());
        assert!((gaussian_eval(1.0, 0.0).unwrap() - 0.398_942_28).abs() < 1e-8);
        assert!((gaussian_eval(2.0, 0.0).unwrap() - 0.5 * inv_sqrt_2pi()).abs() < 1e-16);
        let want = (-0.5f64).exp() * inv_sqrt_2pi();
        assert!((gaussian_eval(1.0, 1.0).unwrap() - want).abs() < 1e-16);
        assert!(gaussian_eval(0.0, 1.0).is_err());
        assert!(gaussian_eval(-1.0, 1.0).is_err());
    }

    #[test]
    fn config_validation() {
        let w = WindowMode::TauMultiples { factor: 6.0 };
        assert!(SmootherConfig::new(0.1, w, 1).is_err());
        assert!(SmootherConfig::new(0.0, w, 10).is_err());
        assert!(SmootherConfig::new(
            0.1,
            WindowMode::GridSteps {
                count: 0,
                step: 0.1
            },
            10
        )
        .is_err());
    }

    #[test]
    fn nodes_follow_right_endpoint_rule() {
        let cfg = SmootherConfig::new(0.5, WindowMode::TauMultiples { factor: 2.0 }, 4).unwrap();
        let nodes: Vec<f64> = cfg.nodes(0.0).collect();
        assert_eq!(nodes, vec![-0.5, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn constant_preserved_when_renormalized() {
        let cfg = SmootherConfig::new(0.03, WindowMode::TauMultiples { factor: 6.0 }, 200)
            .unwrap()
            .renormalized();
        for &c in &[3.7, -1e-3, 12345.678] {
            let v = smooth_at(scalar_fn(move |_| c), &cfg, 0.42).unwrap();
            assert_eq!(v[0], c);
        }
    }

    #[test]
    fn weights_positive_and_near_unit_mass() {
        let cfg = SmootherConfig::new(0.01, WindowMode::TauMultiples { factor: 6.0 }, 200).unwrap();
        let w = cfg.weights(0.3);
        assert!(w.iter().all(|&v| v > 0.0));
        let total: f64 = w.iter().sum();
        assert!((total - 1.0).abs() < 1e-3, "{total}");
        let v = smooth_at(scalar_fn(|_| 2.5), &cfg, 0.3).unwrap();
        assert!((v[0] - 2.5).abs() / 2.5 < 1e-3);

        let renorm = cfg.renormalized().weights(0.3);
        assert!((renorm.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn odd_integrand_vanishes() {
        // A wide window keeps the unpaired right-end node's weight negligible.
        let cfg = SmootherConfig::new(0.05, WindowMode::TauMultiples { factor: 10.0 }, 200)
            .unwrap()
            .renormalized();
        let v = smooth_at(scalar_fn(|x| x), &cfg, 0.0).unwrap();
        assert!(v[0].abs() < 1e-12, "{}", v[0]);
    }

    #[test]
    fn grid_matches_pointwise() {
        let xs: Vec<f64> = (0..101).map(|i| -1.0 + 0.02 * i as f64).collect();
        let grid = UniformGrid::from_points(&xs).unwrap();
        let f = scalar_fn(|x| (3.0 * x).sin() + x * x);
        for cfg in [
            SmootherConfig::new(0.03, WindowMode::TauMultiples { factor: 6.0 }, 200).unwrap(),
            SmootherConfig::new(
                0.03,
                WindowMode::GridSteps {
                    count: 5,
                    step: 0.02,
                },
                10,
            )
            .unwrap(),
            SmootherConfig::new(
                0.03,
                WindowMode::GridSteps {
                    count: 5,
                    step: 0.02,
                },
                11,
            )
            .unwrap(),
        ] {
            let g = smooth_grid(&f, &cfg, &grid).unwrap();
            for (j, &x) in xs.iter().enumerate() {
                let p = smooth_at(&f, &cfg, x).unwrap();
                assert!((g[(j, 0)] - p[0]).abs() < 1e-12, "{cfg:?} at {x}");
            }
        }
    }

    #[test]
    fn linear_reproduced_in_interior() {
        let xs: Vec<f64> = (0..201).map(|i| 0.005 * i as f64).collect();
        let grid = UniformGrid::from_points(&xs).unwrap();
        let cfg = SmootherConfig::new(0.01, WindowMode::TauMultiples { factor: 10.0 }, 400)
            .unwrap()
            .renormalized();
        let g = smooth_grid(scalar_fn(|x| 2.0 * x - 0.7), &cfg, &grid).unwrap();
        for (j, &x) in xs.iter().enumerate() {
            assert!((g[(j, 0)] - (2.0 * x - 0.7)).abs() < 1e-10);
        }
    }

    #[test]
    fn approximate_identity_for_small_tau() {
        let xs: Vec<f64> = (0..501).map(|i| -1.0 + 0.004 * i as f64).collect();
        let grid = UniformGrid::from_points(&xs).unwrap();
        let cfg = SmootherConfig::new(
            grid.step / 10.0,
            WindowMode::TauMultiples { factor: 6.0 },
            200,
        )
        .unwrap()
        .renormalized();
        let f = |x: f64| (2.0 * x).cos() + 0.5 * x;
        let g = smooth_grid(scalar_fn(f), &cfg, &grid).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for (j, &x) in xs.iter().enumerate() {
            num += (g[(j, 0)] - f(x)).powi(2);
            den += f(x).powi(2);
        }
        assert!((num / den).sqrt() < 1e-3);
    }

    #[test]
    fn non_uniform_grid_rejected() {
        assert!(UniformGrid::from_points(&[0.0, 0.1, 0.3]).is_err());
        assert!(UniformGrid::from_points(&[0.0]).is_err());
    }

    #[test]
    fn interpolant_is_linear_between_samples() {
        let xs = [0.0, 1.0, 2.0];
        let grid = UniformGrid::from_points(&xs).unwrap();
        let vals = DMatrix::from_column_slice(3, 1, &[0.0, 2.0, 1.0]);
        let it = GridInterpolant::new(grid, &vals).unwrap();
        let out = it.eval(&[-1.0, 0.5, 1.25, 5.0]).unwrap();
        assert_eq!(out.as_slice(), &[0.0, 1.0, 1.75, 1.0]);
    }
}
