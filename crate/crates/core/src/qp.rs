//! The per-grade pooled affine least-squares problem
//!
//! ```text
//! J(W, b) = Σ_j ‖e_j − P(W φ_j + b)‖² + λ(‖W‖² + ‖b‖²)
//! ```
//!
//! and its two solvers: constant-step Nesterov acceleration, and a direct
//! oracle (CGLS on the unpooled problem followed by the minimum-norm lift
//! through `P`).
//!
//! Parameters are handled as `Θ = [W | b]` (`m_k × (n+1)`) against the
//! augmented features `Φ̃ = [Φ | 1]`. The objective only sees `PΘ`, so every
//! product is formed with `PΘ` (`t × (n+1)`) instead of `Θ`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::SplitMix64;
use crate::metrics::{partition, partitioned_sum};
use crate::pooling::PoolingSpec;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct AffineLsqProblem {
    features: DMatrix<f64>,
    /// `Φ̃`, `m × (n+1)`.
    phi: DMatrix<f64>,
    targets: DMatrix<f64>,
    pooling: PoolingSpec,
    ridge: f64,
    partitions: usize,
}

impl AffineLsqProblem {
    pub fn assemble(
        features: DMatrix<f64>,
        targets: DMatrix<f64>,
        pooling: PoolingSpec,
        ridge: f64,
    ) -> Result<Self> {
        if features.nrows() != targets.nrows() {
            return Err(Error::DimensionMismatch {
                context: "problem sample count",
                expected: features.nrows(),
                found: targets.nrows(),
            });
        }
        if features.nrows() == 0 {
            return Err(Error::invalid("problem has no samples"));
        }
        if pooling.out_dim() != targets.ncols() {
            return Err(Error::DimensionMismatch {
                context: "pooling output vs target width",
                expected: targets.ncols(),
                found: pooling.out_dim(),
            });
        }
        if !(ridge >= 0.0) || !ridge.is_finite() {
            return Err(Error::invalid("ridge must be a finite non-negative number"));
        }
        if features
            .iter()
            .chain(targets.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("problem features or targets".into()));
        }
        let (m, n) = features.shape();
        let mut phi = DMatrix::from_element(m, n + 1, 1.0);
        phi.columns_mut(0, n).copy_from(&features);
        Ok(Self {
            features,
            phi,
            targets,
            pooling,
            ridge,
            partitions: 1,
        })
    }

    /// Partition count for the sample sums (results are bit-stable per count).
    pub fn with_partitions(mut self, parts: usize) -> Self {
        self.partitions = parts.max(1);
        self
    }

    pub fn samples(&self) -> usize {
        self.phi.nrows()
    }

    /// `m_{k-1}`.
    pub fn in_width(&self) -> usize {
        self.features.ncols()
    }

    /// `m_k`.
    pub fn width(&self) -> usize {
        self.pooling.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.pooling.out_dim()
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn pooling(&self) -> &PoolingSpec {
        &self.pooling
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn augmented_features(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn targets(&self) -> &DMatrix<f64> {
        &self.targets
    }

    fn check_theta(&self, theta: &DMatrix<f64>) -> Result<()> {
        if theta.shape() != (self.width(), self.in_width() + 1) {
            return Err(Error::DimensionMismatch {
                context: "grade parameter shape",
                expected: self.width() * (self.in_width() + 1),
                found: theta.len(),
            });
        }
        Ok(())
    }

    /// Pooled predictions `Φ̃ (PΘ)ᵀ`, one row per sample.
    pub fn predictions(&self, theta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_theta(theta)?;
        let q = self.pooling.pool_rows(theta)?;
        Ok(&self.phi * q.transpose())
    }

    fn residual(&self, theta: &DMatrix<f64>) -> DMatrix<f64> {
        let q = self.pooling.pool_rows(theta).expect("checked shape");
        let mut r = self.targets.clone();
        r.gemm(-1.0, &self.phi, &q.transpose(), 1.0);
        r
    }

    fn residual_norm_sq(&self, r: &DMatrix<f64>) -> f64 {
        let t = r.ncols();
        partitioned_sum(r.nrows(), self.partitions, |rows| {
            let mut s = 0.0;
            for j in rows {
                for c in 0..t {
                    s += r[(j, c)] * r[(j, c)];
                }
            }
            s
        })
    }

    fn value(&self, theta: &DMatrix<f64>, r: &DMatrix<f64>) -> f64 {
        let fit = self.residual_norm_sq(r);
        if self.ridge > 0.0 {
            fit + self.ridge * theta.norm_squared()
        } else {
            fit
        }
    }

    /// `Rᵀ Φ̃`, summed over samples partition by partition.
    fn residual_dot_features(&self, r: &DMatrix<f64>) -> DMatrix<f64> {
        if self.partitions <= 1 {
            return r.tr_mul(&self.phi);
        }
        use rayon::prelude::*;
        let parts = partition(r.nrows(), self.partitions);
        let partials: Vec<DMatrix<f64>> = parts
            .into_par_iter()
            .map(|rows| {
                let len = rows.len();
                r.rows(rows.start, len)
                    .tr_mul(&self.phi.rows(rows.start, len))
            })
            .collect();
        let mut acc = DMatrix::zeros(r.ncols(), self.phi.ncols());
        for p in partials {
            acc += p;
        }
        acc
    }

    fn gradient_from_residual(&self, theta: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
        let rphi = self.residual_dot_features(r);
        let mut g = self.pooling.adjoint_rows(&rphi).expect("pooled width");
        g *= -2.0;
        if self.ridge > 0.0 {
            g += theta * (2.0 * self.ridge);
        }
        g
    }

    pub fn objective_theta(&self, theta: &DMatrix<f64>) -> Result<f64> {
        self.check_theta(theta)?;
        Ok(self.value(theta, &self.residual(theta)))
    }

    pub fn gradient_theta(&self, theta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_theta(theta)?;
        Ok(self.gradient_from_residual(theta, &self.residual(theta)))
    }

    pub fn objective(&self, w: &DMatrix<f64>, b: &DVector<f64>) -> Result<f64> {
        self.objective_theta(&join_theta(w, b)?)
    }

    pub fn gradient(
        &self,
        w: &DMatrix<f64>,
        b: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let g = self.gradient_theta(&join_theta(w, b)?)?;
        Ok(split_theta(&g))
    }
}

pub fn assemble(
    features: DMatrix<f64>,
    residual_targets: DMatrix<f64>,
    pooling: PoolingSpec,
    ridge: f64,
) -> Result<AffineLsqProblem> {
    AffineLsqProblem::assemble(features, residual_targets, pooling, ridge)
}

pub fn objective(problem: &AffineLsqProblem, w: &DMatrix<f64>, b: &DVector<f64>) -> Result<f64> {
    problem.objective(w, b)
}

pub fn gradient(
    problem: &AffineLsqProblem,
    w: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    problem.gradient(w, b)
}

/// `[W | b]`.
pub fn join_theta(w: &DMatrix<f64>, b: &DVector<f64>) -> Result<DMatrix<f64>> {
    if b.len() != w.nrows() {
        return Err(Error::DimensionMismatch {
            context: "bias length",
            expected: w.nrows(),
            found: b.len(),
        });
    }
    let (r, c) = w.shape();
    let mut theta = DMatrix::zeros(r, c + 1);
    theta.columns_mut(0, c).copy_from(w);
    theta.column_mut(c).copy_from(b);
    Ok(theta)
}

pub fn split_theta(theta: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let c = theta.ncols() - 1;
    (
        theta.columns(0, c).into_owned(),
        theta.column(c).into_owned(),
    )
}

const POWER_MAX_ITERS: usize = 200;
const POWER_TOL: f64 = 1e-10;

/// Largest eigenvalue of a symmetric positive semi-definite operator of size
/// `dim`, by power iteration from the normalized all-ones vector. `None` when
/// the iteration does not settle.
fn power_iteration(dim: usize, apply: impl Fn(&DVector<f64>) -> DVector<f64>) -> Option<f64> {
    let mut v = DVector::from_element(dim, 1.0 / (dim as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let w = apply(&v);
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return Some(0.0);
        }
        if !norm.is_finite() {
            return None;
        }
        v = w / norm;
        if (next - lambda).abs() <= POWER_TOL * next.abs() {
            // ‖Av‖ bounds the Rayleigh quotient from above and λ_max from below.
            return Some(norm);
        }
        lambda = next;
    }
    None
}

/// `L = safety · (2 σ_max(P)² σ_max(Φ̃)² + 2λ)`.
pub fn lipschitz_upper_bound(problem: &AffineLsqProblem, safety: f64) -> f64 {
    let gram = problem.pooling.gram();
    let p_sq = power_iteration(gram.nrows(), |v| &gram * v).unwrap_or_else(|| gram.trace());
    let phi = &problem.phi;
    let phi_sq = power_iteration(phi.ncols(), |v| phi.tr_mul(&(phi * v)))
        .unwrap_or_else(|| phi.norm_squared());
    safety * (2.0 * p_sq * phi_sq + 2.0 * problem.ridge)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    Nesterov,
    DirectMinNorm,
}

/// Starting point. `Random` draws every entry of `[W | b]` uniformly from
/// `±scale/√m_{k-1}`; the direct solver then returns the minimizer closest
/// to that start. `RandomKernel` draws the same way and then removes the
/// part seen by the pooling, so `PΘ₀ = 0` and the start has the objective of
/// the zero start.
#[derive(Debug, Clone, PartialEq)]
pub enum SolverInit {
    Zero,
    Given {
        weight: DMatrix<f64>,
        bias: DVector<f64>,
    },
    Random {
        seed: u64,
        scale: f64,
    },
    RandomKernel {
        seed: u64,
        scale: f64,
    },
}

impl SolverInit {
    pub fn theta(&self, width: usize, in_width: usize) -> Result<DMatrix<f64>> {
        match self {
            SolverInit::Zero => Ok(DMatrix::zeros(width, in_width + 1)),
            SolverInit::Given { weight, bias } => {
                let theta = join_theta(weight, bias)?;
                if theta.shape() != (width, in_width + 1) {
                    return Err(Error::DimensionMismatch {
                        context: "given initial parameters",
                        expected: width * (in_width + 1),
                        found: theta.len(),
                    });
                }
                Ok(theta)
            }
            SolverInit::Random { seed, scale } | SolverInit::RandomKernel { seed, scale } => {
                let bound = scale / (in_width.max(1) as f64).sqrt();
                let mut rng = SplitMix64::new(*seed);
                let mut theta = DMatrix::zeros(width, in_width + 1);
                for i in 0..width {
                    for j in 0..=in_width {
                        theta[(i, j)] = rng.uniform(-bound, bound);
                    }
                }
                Ok(theta)
            }
        }
    }

    /// Starting `Θ` for `problem`.
    pub fn start(&self, problem: &AffineLsqProblem) -> Result<DMatrix<f64>> {
        let theta = self.theta(problem.width(), problem.in_width())?;
        match self {
            SolverInit::RandomKernel { .. } => {
                let seen = problem.pooling().pool_rows(&theta)?;
                Ok(&theta - min_norm_lift(problem.pooling(), &seen.transpose())?)
            }
            _ => Ok(theta),
        }
    }

    fn is_zero(&self) -> bool {
        matches!(self, SolverInit::Zero)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub method: SolverMethod,
    pub epsilon: f64,
    pub max_iters: usize,
    pub lipschitz_safety: f64,
    pub init: SolverInit,
    /// Reset the momentum whenever the objective increases.
    pub restart: bool,
    pub record_trace: bool,
    pub partitions: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: SolverMethod::Nesterov,
            epsilon: 1e-7,
            max_iters: 5000,
            lipschitz_safety: 1.0,
            init: SolverInit::Zero,
            restart: false,
            record_trace: false,
            partitions: 1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("solver epsilon must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("solver max_iters must be at least 1"));
        }
        if !(self.lipschitz_safety >= 1.0) {
            return Err(Error::invalid("lipschitz_safety must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Epsilon,
    MaxIters,
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub final_objective: f64,
    /// `J(θ_0), J(θ_1), …` when tracing is on.
    pub objective_trace: Vec<f64>,
    pub wall_time_s: f64,
    pub stop_reason: StopReason,
    pub lipschitz: Option<f64>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub stats: SolveStats,
}

impl Solution {
    fn from_theta(theta: &DMatrix<f64>, stats: SolveStats) -> Self {
        let (weight, bias) = split_theta(theta);
        Self {
            weight,
            bias,
            stats,
        }
    }

    pub fn theta(&self) -> DMatrix<f64> {
        join_theta(&self.weight, &self.bias).expect("consistent shapes")
    }
}

pub fn solve(problem: &AffineLsqProblem, config: &SolverConfig) -> Result<Solution> {
    match config.method {
        SolverMethod::Nesterov => nesterov_solve(problem, config),
        SolverMethod::DirectMinNorm => direct_solve_with(problem, &config.init),
    }
}

/// Accelerated gradient with constant step `1/L`.
pub fn nesterov_solve(problem: &AffineLsqProblem, config: &SolverConfig) -> Result<Solution> {
    config.validate()?;
    let start = Instant::now();
    let lip = lipschitz_upper_bound(problem, config.lipschitz_safety);
    if !(lip.is_finite()) {
        return Err(Error::NonFinite("Lipschitz estimate".into()));
    }
    let mut theta = config.init.start(problem)?;
    let mut r = problem.residual(&theta);
    let mut j_prev = problem.value(&theta, &r);
    let mut trace = vec![];
    if config.record_trace {
        trace.push(j_prev);
    }
    if lip == 0.0 {
        // Φ̃ = 0 cannot happen (ones column); kept for completeness.
        return Ok(Solution::from_theta(
            &theta,
            SolveStats {
                iterations: 0,
                final_objective: j_prev,
                objective_trace: trace,
                wall_time_s: start.elapsed().as_secs_f64(),
                stop_reason: StopReason::Epsilon,
                lipschitz: Some(lip),
                notes: vec![],
            },
        ));
    }
    let step = 1.0 / lip;
    let mut y = theta.clone();
    let mut r_y = r.clone();
    let mut t = 1.0f64;
    let mut stop = StopReason::MaxIters;
    let mut iterations = config.max_iters;
    let mut restarts = 0usize;
    for it in 1..=config.max_iters {
        let g = problem.gradient_from_residual(&y, &r_y);
        let mut theta_new = y;
        theta_new -= g * step;
        let r_new = problem.residual(&theta_new);
        let j_new = problem.value(&theta_new, &r_new);
        if !j_new.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective at Nesterov iteration {it} (L = {lip:e})"
            )));
        }
        if config.record_trace {
            trace.push(j_new);
        }
        let rel = (j_new - j_prev).abs() / j_prev.abs().max(1e-30);
        let restarted = config.restart && j_new > j_prev;
        if restarted {
            t = 1.0;
            y = theta_new.clone();
            r_y = r_new.clone();
            restarts += 1;
        } else {
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let beta = (t - 1.0) / t_next;
            y = &theta_new * (1.0 + beta) - &theta * beta;
            r_y = &r_new * (1.0 + beta) - &r * beta;
            t = t_next;
        }
        theta = theta_new;
        r = r_new;
        j_prev = j_new;
        if !restarted && rel < config.epsilon {
            stop = StopReason::Epsilon;
            iterations = it;
            break;
        }
    }
    let mut notes = vec![];
    if restarts > 0 {
        notes.push(format!("momentum restarted {restarts} times"));
    }
    Ok(Solution::from_theta(
        &theta,
        SolveStats {
            iterations,
            final_objective: j_prev,
            objective_trace: trace,
            wall_time_s: start.elapsed().as_secs_f64(),
            stop_reason: stop,
            lipschitz: Some(lip),
            notes,
        },
    ))
}

const CG_TOL: f64 = 1e-12;

struct CglsOutcome {
    x: DVector<f64>,
    iterations: usize,
    converged: bool,
}

/// CGLS for `min ‖b − A x‖` from `x = 0`; the iterates stay in the row space
/// of `A`, so the limit is the minimum-norm solution.
fn cgls(a: &DMatrix<f64>, b: &DVector<f64>) -> CglsOutcome {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut r = b.clone();
    let mut s = a.tr_mul(&r);
    let s0 = s.norm();
    if s0 == 0.0 {
        return CglsOutcome {
            x,
            iterations: 0,
            converged: true,
        };
    }
    let mut p = s.clone();
    let mut gamma = s.norm_squared();
    let max_iters = 10 * n;
    for k in 1..=max_iters {
        let q = a * &p;
        let qq = q.norm_squared();
        if qq == 0.0 {
            return CglsOutcome {
                x,
                iterations: k,
                converged: false,
            };
        }
        let alpha = gamma / qq;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &q, 1.0);
        s = a.tr_mul(&r);
        let gamma_new = s.norm_squared();
        if gamma_new.sqrt() <= CG_TOL * s0 {
            return CglsOutcome {
                x,
                iterations: k,
                converged: true,
            };
        }
        p = &s + &p * (gamma_new / gamma);
        gamma = gamma_new;
    }
    CglsOutcome {
        x,
        iterations: max_iters,
        converged: false,
    }
}

/// Unpooled least squares `min_M ‖E − Φ̃ M‖` column by column, plus total
/// CG iterations and whether every column converged.
fn unpooled_lsq(phi: &DMatrix<f64>, targets: &DMatrix<f64>) -> (DMatrix<f64>, usize, bool) {
    let mut m = DMatrix::zeros(phi.ncols(), targets.ncols());
    let mut iters = 0;
    let mut all = true;
    for c in 0..targets.ncols() {
        let out = cgls(phi, &targets.column(c).into_owned());
        m.column_mut(c).copy_from(&out.x);
        iters += out.iterations;
        all &= out.converged;
    }
    (m, iters, all)
}

/// `Θ = Pᵀ (PPᵀ)⁻¹ Mᵀ`, the minimum-norm `Θ` with `PΘ = Mᵀ`.
pub fn min_norm_lift(pooling: &PoolingSpec, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.ncols() != pooling.out_dim() {
        return Err(Error::DimensionMismatch {
            context: "lift output width",
            expected: pooling.out_dim(),
            found: m.ncols(),
        });
    }
    let chol = pooling
        .gram()
        .cholesky()
        .ok_or_else(|| Error::invalid("pooling gram matrix is not positive definite"))?;
    let z = chol.solve(&m.transpose());
    pooling.adjoint_rows(&z)
}

pub fn direct_solve(problem: &AffineLsqProblem) -> Result<Solution> {
    direct_solve_with(problem, &SolverInit::Zero)
}

/// Minimizer closest to the starting point: solve for the correction on the
/// residual left by the start, then lift it with the minimum-norm right
/// inverse of `P`.
pub fn direct_solve_with(problem: &AffineLsqProblem, init: &SolverInit) -> Result<Solution> {
    if problem.ridge != 0.0 {
        return Err(Error::invalid("the direct solver handles ridge = 0 only"));
    }
    let start = Instant::now();
    let theta0 = init.start(problem)?;
    let targets = if init.is_zero() {
        problem.targets.clone()
    } else {
        problem.residual(&theta0)
    };
    let (m, iterations, converged) = unpooled_lsq(&problem.phi, &targets);
    let mut theta = min_norm_lift(&problem.pooling, &m)?;
    if !init.is_zero() {
        theta += theta0;
    }
    let mut notes = vec![];
    if !converged {
        notes.push(format!(
            "conjugate gradient stopped at the iteration cap before relative residual {CG_TOL:e}; features are (nearly) rank deficient"
        ));
    }
    let final_objective = problem.objective_theta(&theta)?;
    Ok(Solution::from_theta(
        &theta,
        SolveStats {
            iterations,
            final_objective,
            objective_trace: vec![],
            wall_time_s: start.elapsed().as_secs_f64(),
            stop_reason: StopReason::Direct,
            lipschitz: None,
            notes,
        },
    ))
}

/// Largest `|⟨R, Φ̃_l e_c⟩| / (‖E‖ ‖Φ̃_l‖)` over the directions spanned by the
/// pooled predictions: the gradient scaled by the target and feature norms.
pub fn residual_orthogonality(
    problem: &AffineLsqProblem,
    w: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<f64> {
    let theta = join_theta(w, b)?;
    problem.check_theta(&theta)?;
    let r = problem.residual(&theta);
    let en = problem.targets.norm();
    if en == 0.0 || r.norm() == 0.0 {
        return Ok(0.0);
    }
    let rphi = r.tr_mul(&problem.phi);
    let mut worst: f64 = 0.0;
    for l in 0..problem.phi.ncols() {
        let cn = problem.phi.column(l).norm();
        if cn == 0.0 {
            continue;
        }
        for c in 0..r.ncols() {
            worst = worst.max(rphi[(c, l)].abs() / (en * cn));
        }
    }
    Ok(worst)
}
