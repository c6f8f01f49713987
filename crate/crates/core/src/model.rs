//! SAL models: an ordered list of grades evaluated as the superposition of
//! their pooled affine components.

use nalgebra::{DMatrix, DVector};

use crate::activation::ActivationKind;
use crate::pooling::PoolingSpec;
use crate::smoothing::{smooth_grid, smooth_points, SmootherConfig, UniformGrid};
use crate::ssg::{affine_rows, MlpParams};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradeParams {
    /// `m_k × m_{k-1}`.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub pooling: PoolingSpec,
    pub activation: ActivationKind,
    /// `None` when the component is used unsmoothed (τ = 0).
    pub smoothing: Option<SmootherConfig>,
}

impl GradeParams {
    pub fn new(
        weight: DMatrix<f64>,
        bias: DVector<f64>,
        out_dim: usize,
        activation: ActivationKind,
    ) -> Result<Self> {
        let pooling = PoolingSpec::from_dims(weight.nrows(), out_dim)?;
        let g = Self {
            weight,
            bias,
            pooling,
            activation,
            smoothing: None,
        };
        g.validate_shape()?;
        Ok(g)
    }

    pub fn with_smoothing(mut self, smoothing: Option<SmootherConfig>) -> Self {
        self.smoothing = smoothing;
        self
    }

    pub fn width(&self) -> usize {
        self.weight.nrows()
    }

    pub fn in_width(&self) -> usize {
        self.weight.ncols()
    }

    pub fn tau(&self) -> f64 {
        self.smoothing.as_ref().map_or(0.0, |s| s.tau)
    }

    fn validate_shape(&self) -> Result<()> {
        if self.bias.len() != self.width() {
            return Err(Error::DimensionMismatch {
                context: "grade bias length",
                expected: self.width(),
                found: self.bias.len(),
            });
        }
        if self.pooling.in_dim() != self.width() {
            return Err(Error::DimensionMismatch {
                context: "grade pooling input width",
                expected: self.width(),
                found: self.pooling.in_dim(),
            });
        }
        self.activation.validate()?;
        if let Some(s) = &self.smoothing {
            s.validate()?;
        }
        Ok(())
    }

    /// `A Wᵀ + 1 bᵀ` for previous features `A` (samples × `m_{k-1}`).
    pub fn pre_activation(&self, prev: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if prev.ncols() != self.in_width() {
            return Err(Error::DimensionMismatch {
                context: "grade input features",
                expected: self.in_width(),
                found: prev.ncols(),
            });
        }
        Ok(affine_rows(prev, &self.weight, &self.bias))
    }

    /// Unsmoothed component rows `P(W φ + b)`.
    pub fn raw_component(&self, prev: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.pooling.pool_cols(&self.pre_activation(prev)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SalModel {
    pub input_dim: usize,
    pub output_dim: usize,
    pub grades: Vec<GradeParams>,
    pub hybrid_head: Option<MlpParams>,
}

impl SalModel {
    pub fn new(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            output_dim,
            grades: vec![],
            hybrid_head: None,
        }
    }

    pub fn with_head(head: MlpParams) -> Self {
        Self {
            input_dim: head.input_dim,
            output_dim: head.output_dim,
            grades: vec![],
            hybrid_head: Some(head),
        }
    }

    pub fn num_grades(&self) -> usize {
        self.grades.len()
    }

    /// Width of `N_0`: the input, or the head's last hidden layer.
    pub fn base_width(&self) -> usize {
        self.hybrid_head
            .as_ref()
            .map_or(self.input_dim, |h| h.last_hidden_width())
    }

    /// Width of `N_k`.
    pub fn feature_width(&self, k: usize) -> usize {
        if k == 0 {
            self.base_width()
        } else {
            self.grades[k - 1].width()
        }
    }

    pub fn push_grade(&mut self, grade: GradeParams) -> Result<()> {
        let expected = self.feature_width(self.grades.len());
        if grade.in_width() != expected {
            return Err(Error::DimensionMismatch {
                context: "grade weight columns",
                expected,
                found: grade.in_width(),
            });
        }
        if grade.pooling.out_dim() != self.output_dim {
            return Err(Error::DimensionMismatch {
                context: "grade pooling output",
                expected: self.output_dim,
                found: grade.pooling.out_dim(),
            });
        }
        grade.validate_shape()?;
        if grade.smoothing.is_some() && self.input_dim != 1 {
            return Err(Error::invalid(
                "smoothing is only supported for one-dimensional inputs",
            ));
        }
        self.grades.push(grade);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(h) = &self.hybrid_head {
            h.validate()?;
            if h.input_dim != self.input_dim || h.output_dim != self.output_dim {
                return Err(Error::invalid(
                    "hybrid head dimensions disagree with the model",
                ));
            }
        }
        let mut probe = Self {
            grades: vec![],
            ..self.clone()
        };
        for g in &self.grades {
            probe.push_grade(g.clone())?;
        }
        Ok(())
    }

    fn check_inputs(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(Error::DimensionMismatch {
                context: "model input width",
                expected: self.input_dim,
                found: x.ncols(),
            });
        }
        Ok(())
    }

    fn check_grade(&self, k: usize) -> Result<()> {
        if k > self.grades.len() {
            return Err(Error::IndexOutOfRange {
                index: k,
                available: self.grades.len(),
            });
        }
        Ok(())
    }

    pub fn base_features(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_inputs(x)?;
        match &self.hybrid_head {
            Some(h) => h.hidden_output(x),
            None => Ok(x.clone()),
        }
    }

    /// `N_k = σ_k(W_k N_{k-1} + b_k)` given `N_{k-1}` (1-based `k`).
    pub fn next_features(&self, k: usize, prev: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if k == 0 {
            return Err(Error::IndexOutOfRange {
                index: 0,
                available: self.grades.len(),
            });
        }
        self.check_grade(k)?;
        let g = &self.grades[k - 1];
        let mut z = g.pre_activation(prev)?;
        g.activation.eval_matrix_mut(&mut z);
        Ok(z)
    }

    /// `N_k` at every row of `x` (pre-pooling, after activation).
    pub fn features_batch(&self, k: usize, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_grade(k)?;
        let mut n = self.base_features(x)?;
        for j in 1..=k {
            n = self.next_features(j, &n)?;
        }
        Ok(n)
    }

    /// Unsmoothed components `P(W_j N_{j-1} + b_j)` for grades `1..=k`.
    pub fn raw_components_batch(&self, k: usize, x: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
        self.check_grade(k)?;
        let mut out = Vec::with_capacity(k);
        let mut n = self.base_features(x)?;
        for j in 1..=k {
            let g = &self.grades[j - 1];
            let mut z = g.pre_activation(&n)?;
            out.push(g.pooling.pool_cols(&z)?);
            if j < k {
                g.activation.eval_matrix_mut(&mut z);
                n = z;
            }
        }
        Ok(out)
    }

    pub fn raw_component_batch(&self, k: usize, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if k == 0 {
            return Err(Error::IndexOutOfRange {
                index: 0,
                available: self.grades.len(),
            });
        }
        let prev = self.features_batch(k - 1, x)?;
        self.grades[k - 1].raw_component(&prev)
    }

    /// `f_k` at every row of `x`, smoothed when grade `k` carries a smoother.
    pub fn component_batch(&self, k: usize, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if k == 0 {
            return Err(Error::IndexOutOfRange {
                index: 0,
                available: self.grades.len(),
            });
        }
        self.check_grade(k)?;
        self.check_inputs(x)?;
        match &self.grades[k - 1].smoothing {
            None => self.raw_component_batch(k, x),
            Some(cfg) => {
                let eval = |nodes: &[f64]| {
                    self.raw_component_batch(k, &DMatrix::from_column_slice(nodes.len(), 1, nodes))
                };
                let xs: Vec<f64> = x.column(0).iter().copied().collect();
                match UniformGrid::from_points(&xs) {
                    Ok(grid) => smooth_grid(eval, cfg, &grid),
                    Err(_) => smooth_points(eval, cfg, &xs),
                }
            }
        }
    }

    /// `f̄ = head + f_1 + … + f_l`, accumulated in that order.
    pub fn predict_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_inputs(x)?;
        if self.grades.is_empty() && self.hybrid_head.is_none() {
            return Err(Error::EmptyModel);
        }
        let mut out = match &self.hybrid_head {
            Some(h) => h.predict(x)?,
            None => DMatrix::zeros(x.nrows(), self.output_dim),
        };
        let unsmoothed = self.grades.iter().all(|g| g.smoothing.is_none());
        if unsmoothed && !self.grades.is_empty() {
            for c in self.raw_components_batch(self.grades.len(), x)? {
                out += c;
            }
        } else {
            for k in 1..=self.grades.len() {
                out += self.component_batch(k, x)?;
            }
        }
        Ok(out)
    }

    pub fn grade_features(&self, k: usize, x: &[f64]) -> Result<Vec<f64>> {
        let m = self.features_batch(k, &row(x))?;
        Ok(m.row(0).iter().copied().collect())
    }

    pub fn component_eval(&self, k: usize, x: &[f64]) -> Result<Vec<f64>> {
        let m = self.component_batch(k, &row(x))?;
        Ok(m.row(0).iter().copied().collect())
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = self.predict_batch(&row(x))?;
        Ok(m.row(0).iter().copied().collect())
    }
}

fn row(x: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, x.len(), x)
}

pub fn grade_features(model: &SalModel, k: usize, x: &[f64]) -> Result<Vec<f64>> {
    model.grade_features(k, x)
}

pub fn component_eval(model: &SalModel, k: usize, x: &[f64]) -> Result<Vec<f64>> {
    model.component_eval(k, x)
}

pub fn model_predict(model: &SalModel, x: &[f64]) -> Result<Vec<f64>> {
    model.predict(x)
}
