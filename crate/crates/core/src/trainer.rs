//! The SAL grade loop.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::data::{Dataset, SplitMix64};
use crate::metrics::{compute_rse, inner_product_m};
use crate::model::{GradeParams, SalModel};
use crate::pooling::PoolingSpec;
use crate::qp::{solve, AffineLsqProblem, SolverConfig, SolverInit, SolverMethod, StopReason};
use crate::smoothing::{smooth_grid_samples, SmootherConfig, UniformGrid, WindowMode};
use crate::ssg::{train_mlp, MlpParams, MlpTrainConfig, SsgReport};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ActivationChoice {
    Fixed(ActivationKind),
    /// Optimal linear combination of the listed bases, fitted after the grade.
    SelectFrom(Vec<ActivationKind>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingTarget {
    Component,
    Residual,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GradeInit {
    Zero,
    /// Seeded uniform start, see [`SolverInit::Random`].
    Random {
        scale: f64,
    },
    /// Seeded uniform start projected onto the kernel of the pooling, see
    /// [`SolverInit::RandomKernel`].
    RandomKernel {
        scale: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradeConfig {
    pub width: usize,
    pub activation: ActivationChoice,
    pub tau: f64,
    pub epsilon: f64,
    pub max_iters: usize,
    pub solver: SolverMethod,
    pub smoothing_target: SmoothingTarget,
    pub window: WindowMode,
    pub quad_points: usize,
    pub renormalize: bool,
    pub init: GradeInit,
    pub ridge: f64,
    pub restart: bool,
    pub lipschitz_safety: f64,
}

impl GradeConfig {
    pub fn new(width: usize, activation: ActivationKind) -> Self {
        Self {
            width,
            activation: ActivationChoice::Fixed(activation),
            tau: 0.0,
            epsilon: 1e-7,
            max_iters: 5000,
            solver: SolverMethod::Nesterov,
            smoothing_target: SmoothingTarget::Component,
            window: WindowMode::TauMultiples { factor: 6.0 },
            quad_points: 200,
            renormalize: false,
            init: GradeInit::Zero,
            ridge: 0.0,
            restart: false,
            lipschitz_safety: 1.0,
        }
    }

    pub fn smoother(&self) -> Result<Option<SmootherConfig>> {
        if self.tau == 0.0 || self.smoothing_target == SmoothingTarget::None {
            return Ok(None);
        }
        let mut cfg = SmootherConfig::new(self.tau, self.window, self.quad_points)?;
        cfg.renormalize = self.renormalize;
        Ok(Some(cfg))
    }

    fn validate(&self, t: usize) -> Result<()> {
        if self.width < t {
            return Err(Error::invalid(format!(
                "grade width {} is smaller than the output dimension {t}",
                self.width
            )));
        }
        if !(self.tau >= 0.0) {
            return Err(Error::invalid("tau must be non-negative"));
        }
        match &self.activation {
            ActivationChoice::Fixed(a) => a.validate()?,
            ActivationChoice::SelectFrom(list) => {
                if list.is_empty() {
                    return Err(Error::invalid(
                        "activation selection needs at least one base",
                    ));
                }
                for a in list {
                    if matches!(a, ActivationKind::Combination { .. }) {
                        return Err(Error::invalid("selection bases cannot be combinations"));
                    }
                    a.validate()?;
                }
            }
        }
        if let GradeInit::Random { scale } | GradeInit::RandomKernel { scale } = self.init {
            if !(scale >= 0.0) || !scale.is_finite() {
                return Err(Error::invalid("init scale must be finite and non-negative"));
            }
        }
        self.smoother()?;
        Ok(())
    }

    fn solver_config(&self, seed: u64, partitions: usize) -> SolverConfig {
        SolverConfig {
            method: self.solver,
            epsilon: self.epsilon,
            max_iters: self.max_iters,
            lipschitz_safety: self.lipschitz_safety,
            init: match self.init {
                GradeInit::Zero => SolverInit::Zero,
                GradeInit::Random { scale } => SolverInit::Random { seed, scale },
                GradeInit::RandomKernel { scale } => SolverInit::RandomKernel { seed, scale },
            },
            restart: self.restart,
            record_trace: false,
            partitions,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridConfig {
    pub head: MlpTrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub grades: Vec<GradeConfig>,
    pub hybrid: Option<HybridConfig>,
    pub record_test_metrics: bool,
    pub seed: u64,
    pub partitions: usize,
}

impl TrainConfig {
    pub fn new(grades: Vec<GradeConfig>) -> Self {
        Self {
            grades,
            hybrid: None,
            record_test_metrics: true,
            seed: 0,
            partitions: 1,
        }
    }
}

/// Seed of the random start of grade `k`.
pub fn grade_seed(seed: u64, k: usize) -> u64 {
    SplitMix64::new(seed ^ (k as u64).wrapping_mul(0xA24B_AED4_963E_E407)).next_u64()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradeRecord {
    pub grade: usize,
    pub tau: f64,
    pub epsilon: f64,
    pub iterations: usize,
    pub train_time_s: f64,
    pub rse_train: f64,
    pub rse_test: Option<f64>,
    /// Wall time since training started, at the end of this grade.
    pub elapsed_s: f64,
    pub stop_reason: Option<StopReason>,
    pub activation: String,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub records: Vec<GradeRecord>,
    pub total_time_s: f64,
    /// Squared residual norms `‖e_0‖², ‖e_1‖², …` on the training set.
    pub residual_norms_sq: Vec<f64>,
    /// Squared component norms `‖f_1‖², ‖f_2‖², …` on the training set.
    pub component_norms_sq: Vec<f64>,
    pub notes: Vec<String>,
}

impl TrainReport {
    fn new() -> Self {
        Self {
            records: vec![],
            total_time_s: 0.0,
            residual_norms_sq: vec![],
            component_norms_sq: vec![],
            notes: vec![
                "rse values are computed after smoothing".into(),
                "test data is never used for stopping or selection".into(),
            ],
        }
    }

    /// First `(grade, elapsed)` whose training rse is at or below `threshold`.
    pub fn time_to(&self, threshold: f64) -> Option<(usize, f64)> {
        self.records
            .iter()
            .find(|r| r.rse_train <= threshold)
            .map(|r| (r.grade, r.elapsed_s))
    }
}

/// A failed run: the error plus everything trained before it.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: Error,
    pub model: SalModel,
    pub report: TrainReport,
}

impl std::fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} (after {} completed grades)",
            self.error,
            self.model.num_grades()
        )
    }
}

impl std::error::Error for TrainFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Mutable state threaded through the grade loop.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub train_x: DMatrix<f64>,
    pub train_y: DMatrix<f64>,
    /// `N_{k-1}` at the training points.
    pub features: DMatrix<f64>,
    /// `e*_k` at the training points.
    pub residual: DMatrix<f64>,
    pub predictions: DMatrix<f64>,
    pub test: Option<TestState>,
    pub partitions: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TestState {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub features: DMatrix<f64>,
    pub predictions: DMatrix<f64>,
}

impl TrainState {
    /// State for a model that has no grades yet.
    pub fn new(
        model: &SalModel,
        train: &Dataset,
        test: Option<&Dataset>,
        seed: u64,
        partitions: usize,
    ) -> Result<Self> {
        let predictions = match &model.hybrid_head {
            Some(h) => h.predict(&train.inputs)?,
            None => DMatrix::zeros(train.len(), model.output_dim),
        };
        let test = match test {
            Some(d) => Some(TestState {
                x: d.inputs.clone(),
                y: d.targets.clone(),
                features: model.base_features(&d.inputs)?,
                predictions: match &model.hybrid_head {
                    Some(h) => h.predict(&d.inputs)?,
                    None => DMatrix::zeros(d.len(), model.output_dim),
                },
            }),
            None => None,
        };
        Ok(Self {
            train_x: train.inputs.clone(),
            train_y: train.targets.clone(),
            features: model.base_features(&train.inputs)?,
            residual: &train.targets - &predictions,
            predictions,
            test,
            partitions,
            seed,
        })
    }
}

/// Fits grade `model.num_grades() + 1` on the current residual, appends it to
/// the model, and advances `state`.
pub fn train_grade(
    model: &mut SalModel,
    state: &mut TrainState,
    cfg: &GradeConfig,
    label: usize,
) -> Result<GradeRecord> {
    let start = Instant::now();
    let t = model.output_dim;
    cfg.validate(t)?;
    let k = model.num_grades() + 1;
    let pooling = PoolingSpec::from_dims(cfg.width, t)?;
    let problem = AffineLsqProblem::assemble(
        state.features.clone(),
        state.residual.clone(),
        pooling,
        cfg.ridge,
    )?
    .with_partitions(state.partitions);
    let solution = solve(
        &problem,
        &cfg.solver_config(grade_seed(state.seed, k), state.partitions),
    )?;
    let mut notes = solution.stats.notes.clone();

    let initial_activation = match &cfg.activation {
        ActivationChoice::Fixed(a) => a.clone(),
        ActivationChoice::SelectFrom(list) => list[0].clone(),
    };
    let smoother = cfg.smoother()?;
    let component_smoothing = smoother
        .clone()
        .filter(|_| cfg.smoothing_target == SmoothingTarget::Component);
    let grade = GradeParams::new(solution.weight, solution.bias, t, initial_activation)?
        .with_smoothing(component_smoothing.clone());
    model.push_grade(grade)?;

    let pre = model.grades[k - 1].pre_activation(&state.features)?;
    let component = match &component_smoothing {
        None => pooling.pool_cols(&pre)?,
        Some(_) => model.component_batch(k, &state.train_x)?,
    };
    let mut residual = &state.residual - &component;
    if cfg.smoothing_target == SmoothingTarget::Residual {
        if let Some(sm) = &smoother {
            if state.train_x.ncols() != 1 {
                return Err(Error::invalid(
                    "smoothing is only supported for one-dimensional inputs",
                ));
            }
            let xs: Vec<f64> = state.train_x.column(0).iter().copied().collect();
            let grid = UniformGrid::from_points(&xs)?;
            residual = smooth_grid_samples(&residual, sm, &grid)?;
            notes.push("residual smoothed; predictions use the unsmoothed component".into());
        }
    }

    if let ActivationChoice::SelectFrom(basis) = &cfg.activation {
        let sel = select_activation_from_preact(&pre, &pooling, &residual, basis)?;
        if sel.truncated {
            notes.push(
                "activation selection gram matrix was singular; minimum-norm weights used".into(),
            );
        }
        model.grades[k - 1].activation = ActivationKind::combination(sel.weights, basis.clone())?;
    }

    let mut next = pre;
    model.grades[k - 1].activation.eval_matrix_mut(&mut next);
    state.features = next;
    state.predictions += &component;
    state.residual = residual;

    let rse_train = compute_rse(&state.predictions, &state.train_y)?;
    let rse_test = match state.test.as_mut() {
        Some(test) => {
            let pre_test = model.grades[k - 1].pre_activation(&test.features)?;
            let comp_test = match &component_smoothing {
                None => pooling.pool_cols(&pre_test)?,
                Some(_) => model.component_batch(k, &test.x)?,
            };
            test.predictions += &comp_test;
            let mut next_test = pre_test;
            model.grades[k - 1]
                .activation
                .eval_matrix_mut(&mut next_test);
            test.features = next_test;
            Some(compute_rse(&test.predictions, &test.y)?)
        }
        None => None,
    };
    if !rse_train.is_finite() {
        return Err(Error::NonFinite(format!(
            "training rse after grade {label}"
        )));
    }
    Ok(GradeRecord {
        grade: label,
        tau: cfg.tau,
        epsilon: cfg.epsilon,
        iterations: solution.stats.iterations,
        train_time_s: start.elapsed().as_secs_f64(),
        rse_train,
        rse_test,
        elapsed_s: 0.0,
        stop_reason: Some(solution.stats.stop_reason),
        activation: model.grades[k - 1].activation.name(),
        notes,
    })
}

fn run_grades(
    mut model: SalModel,
    mut state: TrainState,
    mut report: TrainReport,
    grades: &[GradeConfig],
    first_label: usize,
    record_test: bool,
    start: Instant,
) -> std::result::Result<(SalModel, TrainReport), TrainFailure> {
    report.residual_norms_sq.push(state.residual.norm_squared());
    for (i, g) in grades.iter().enumerate() {
        let label = first_label + i;
        let before = state.residual.clone();
        match train_grade(&mut model, &mut state, g, label) {
            Ok(mut rec) => {
                if !record_test {
                    rec.rse_test = None;
                }
                rec.elapsed_s = start.elapsed().as_secs_f64();
                report
                    .component_norms_sq
                    .push((&before - &state.residual).norm_squared());
                report.residual_norms_sq.push(state.residual.norm_squared());
                report.records.push(rec);
            }
            Err(e) => {
                report.total_time_s = start.elapsed().as_secs_f64();
                return Err(TrainFailure {
                    error: Error::Grade {
                        grade: label,
                        source: Box::new(e),
                    },
                    model,
                    report,
                });
            }
        }
    }
    report.total_time_s = start.elapsed().as_secs_f64();
    Ok((model, report))
}

fn check_train_data(train: &Dataset, test: Option<&Dataset>) -> Result<()> {
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if let Some(t) = test {
        if t.input_dim() != train.input_dim() || t.output_dim() != train.output_dim() {
            return Err(Error::invalid(
                "test set dimensions differ from the training set",
            ));
        }
    }
    Ok(())
}

fn failure(error: Error, model: SalModel, report: TrainReport) -> TrainFailure {
    TrainFailure {
        error,
        model,
        report,
    }
}

/// Runs every configured grade in order (after the hybrid head, if any).
pub fn train_sal(
    train: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
) -> std::result::Result<(SalModel, TrainReport), TrainFailure> {
    let empty = SalModel::new(train.input_dim(), train.output_dim());
    if let Err(e) = check_train_data(train, test) {
        return Err(failure(e, empty, TrainReport::new()));
    }
    if cfg.grades.is_empty() && cfg.hybrid.is_none() {
        return Err(failure(
            Error::invalid("no grades configured"),
            empty,
            TrainReport::new(),
        ));
    }
    if let Some(h) = &cfg.hybrid {
        return hybrid_train(train, test, &h.head, cfg);
    }
    let start = Instant::now();
    let state = match TrainState::new(&empty, train, test, cfg.seed, cfg.partitions) {
        Ok(s) => s,
        Err(e) => return Err(failure(e, empty, TrainReport::new())),
    };
    run_grades(
        empty,
        state,
        TrainReport::new(),
        &cfg.grades,
        1,
        cfg.record_test_metrics,
        start,
    )
}

/// "1+l" hybrid: a shallow network trained by Adam is grade 1, its last
/// hidden layer feeds the SAL grades that follow.
pub fn hybrid_train(
    train: &Dataset,
    test: Option<&Dataset>,
    head_cfg: &MlpTrainConfig,
    cfg: &TrainConfig,
) -> std::result::Result<(SalModel, TrainReport), TrainFailure> {
    let start = Instant::now();
    let empty = SalModel::new(train.input_dim(), train.output_dim());
    let test_pair = test.map(|d| (&d.inputs, &d.targets));
    let (head, head_report): (MlpParams, SsgReport) =
        match train_mlp(&train.inputs, &train.targets, head_cfg, test_pair) {
            Ok(v) => v,
            Err(e) => {
                return Err(failure(
                    Error::Grade {
                        grade: 1,
                        source: Box::new(e),
                    },
                    empty,
                    TrainReport::new(),
                ))
            }
        };
    let model = SalModel::with_head(head);
    let mut report = TrainReport::new();
    report
        .notes
        .push("grade 1 is a shallow network trained by full-batch Adam".into());
    let state = match TrainState::new(&model, train, test, cfg.seed, cfg.partitions) {
        Ok(s) => s,
        Err(e) => return Err(failure(e, model, report)),
    };
    let rse_train = compute_rse(&state.predictions, &state.train_y);
    let rse_test = state
        .test
        .as_ref()
        .map(|t| compute_rse(&t.predictions, &t.y))
        .transpose();
    let (rse_train, rse_test) = match (rse_train, rse_test) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Err(failure(e, model, report)),
    };
    report.records.push(GradeRecord {
        grade: 1,
        tau: 0.0,
        epsilon: head_cfg.epsilon,
        iterations: head_report.epochs_run,
        train_time_s: head_report.total_time_s,
        rse_train,
        rse_test: rse_test.filter(|_| cfg.record_test_metrics),
        elapsed_s: start.elapsed().as_secs_f64(),
        stop_reason: None,
        activation: format!(
            "mlp {}",
            model
                .hybrid_head
                .as_ref()
                .map(|h| h.structure())
                .unwrap_or_default()
        ),
        notes: vec![],
    });
    run_grades(
        model,
        state,
        report,
        &cfg.grades,
        2,
        cfg.record_test_metrics,
        start,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub weights: Vec<f64>,
    /// Some eigenvalues of the gram matrix fell below the threshold.
    pub truncated: bool,
}

/// Weights `α*` minimizing `‖e − P Σ_j α_j σ_j(A)‖_m` for pre-activations
/// `A` (samples × `m_k`).
pub fn select_activation_from_preact(
    pre: &DMatrix<f64>,
    pooling: &PoolingSpec,
    residual: &DMatrix<f64>,
    basis: &[ActivationKind],
) -> Result<Selection> {
    if basis.is_empty() {
        return Err(Error::invalid("activation basis is empty"));
    }
    let pooled: Vec<DMatrix<f64>> = basis
        .iter()
        .map(|s| pooling.pool_cols(&s.eval_matrix(pre)))
        .collect::<Result<_>>()?;
    let l = basis.len();
    let mut g = DMatrix::zeros(l, l);
    let mut c = DVector::zeros(l);
    for i in 0..l {
        c[i] = inner_product_m(&pooled[i], residual)?;
        for j in 0..=i {
            let v = inner_product_m(&pooled[i], &pooled[j])?;
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    let eig = g.symmetric_eigen();
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let mut alpha = DVector::zeros(l);
    let mut truncated = false;
    for (idx, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > 1e-12 * lmax && lambda > 0.0 {
            let v = eig.eigenvectors.column(idx);
            alpha += v * (v.dot(&c) / lambda);
        } else {
            truncated = true;
        }
    }
    Ok(Selection {
        weights: alpha.iter().copied().collect(),
        truncated,
    })
}

/// Selection for grade `k` of `model` on inputs `x` against residual `e*_k`.
pub fn select_activation(
    model: &SalModel,
    k: usize,
    x: &DMatrix<f64>,
    residual: &DMatrix<f64>,
    basis: &[ActivationKind],
) -> Result<Selection> {
    if k == 0 || k > model.num_grades() {
        return Err(Error::IndexOutOfRange {
            index: k,
            available: model.num_grades(),
        });
    }
    let prev = model.features_batch(k - 1, x)?;
    let grade = &model.grades[k - 1];
    select_activation_from_preact(
        &grade.pre_activation(&prev)?,
        &grade.pooling,
        residual,
        basis,
    )
}
