//! Single-grade baseline: a fully connected network trained end to end by
//! full-batch Adam from He initialization.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::data::SplitMix64;
use crate::metrics::compute_rse;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out × in`.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: ActivationKind,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    /// `A Wᵀ + 1 bᵀ` for a batch `A` (samples × in).
    pub fn pre_activation(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        affine_rows(a, &self.weight, &self.bias)
    }
}

/// `A Wᵀ + 1 bᵀ`.
pub fn affine_rows(a: &DMatrix<f64>, w: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let mut z = a * w.transpose();
    for (j, mut col) in z.column_iter_mut().enumerate() {
        col.add_scalar_mut(b[j]);
    }
    z
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub input_dim: usize,
    pub output_dim: usize,
    pub layers: Vec<DenseLayer>,
}

impl MlpParams {
    pub fn validate(&self) -> Result<()> {
        let last = self.layers.last().ok_or(Error::EmptyModel)?;
        let mut width = self.input_dim;
        for layer in &self.layers {
            if layer.in_dim() != width {
                return Err(Error::DimensionMismatch {
                    context: "mlp layer input width",
                    expected: width,
                    found: layer.in_dim(),
                });
            }
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::DimensionMismatch {
                    context: "mlp bias length",
                    expected: layer.out_dim(),
                    found: layer.bias.len(),
                });
            }
            layer.activation.validate()?;
            width = layer.out_dim();
        }
        if width != self.output_dim {
            return Err(Error::DimensionMismatch {
                context: "mlp output width",
                expected: self.output_dim,
                found: width,
            });
        }
        if last.activation != ActivationKind::Identity {
            return Err(Error::invalid(
                "the output layer must use the identity activation",
            ));
        }
        Ok(())
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.out_dim())
            .collect()
    }

    /// Width of the last hidden layer (the input width when there is none).
    pub fn last_hidden_width(&self) -> usize {
        self.hidden_widths()
            .last()
            .copied()
            .unwrap_or(self.input_dim)
    }

    pub fn structure(&self) -> String {
        structure_label(&self.hidden_widths())
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(mlp_forward(self, x)?.0)
    }

    /// Output of the last hidden layer (after its activation).
    pub fn hidden_output(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_input(self, x)?;
        let mut a = x.clone();
        for layer in &self.layers[..self.layers.len() - 1] {
            let mut z = layer.pre_activation(&a);
            layer.activation.eval_matrix_mut(&mut z);
            a = z;
        }
        Ok(a)
    }

    fn zeros_like(&self) -> MlpGrads {
        MlpGrads {
            weight: self
                .layers
                .iter()
                .map(|l| DMatrix::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            bias: self
                .layers
                .iter()
                .map(|l| DVector::zeros(l.out_dim()))
                .collect(),
        }
    }
}

/// `"50x6"` for uniform widths, otherwise the widths joined by `-`.
pub fn structure_label(widths: &[usize]) -> String {
    match widths.first() {
        None => "linear".into(),
        Some(&w) if widths.iter().all(|&v| v == w) => format!("{w}x{}", widths.len()),
        Some(_) => widths
            .iter()
            .map(|w| w.to_string())
            .collect::<Vec<_>>()
            .join("-"),
    }
}

fn check_input(params: &MlpParams, x: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != params.input_dim {
        return Err(Error::DimensionMismatch {
            context: "mlp input width",
            expected: params.input_dim,
            found: x.ncols(),
        });
    }
    Ok(())
}

/// Hidden widths and activations; the output layer is always identity.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpShape {
    pub input_dim: usize,
    pub hidden: Vec<(usize, ActivationKind)>,
    pub output_dim: usize,
}

impl MlpShape {
    pub fn new(
        input_dim: usize,
        widths: &[usize],
        activations: &[ActivationKind],
        output_dim: usize,
    ) -> Result<Self> {
        if widths.len() != activations.len() {
            return Err(Error::DimensionMismatch {
                context: "mlp activations per hidden layer",
                expected: widths.len(),
                found: activations.len(),
            });
        }
        if input_dim == 0 || output_dim == 0 || widths.contains(&0) {
            return Err(Error::invalid("mlp widths must be positive"));
        }
        Ok(Self {
            input_dim,
            hidden: widths
                .iter()
                .copied()
                .zip(activations.iter().cloned())
                .collect(),
            output_dim,
        })
    }

    fn layer_dims(&self) -> Vec<(usize, usize, ActivationKind)> {
        let mut dims = vec![];
        let mut fan_in = self.input_dim;
        for (w, act) in &self.hidden {
            dims.push((fan_in, *w, act.clone()));
            fan_in = *w;
        }
        dims.push((fan_in, self.output_dim, ActivationKind::Identity));
        dims
    }
}

/// Weights drawn from `N(0, 2/fan_in)`, biases zero.
pub fn he_init(shape: &MlpShape, seed: u64) -> MlpParams {
    let mut rng = SplitMix64::new(seed);
    let layers = shape
        .layer_dims()
        .into_iter()
        .map(|(fan_in, out, activation)| {
            let std = (2.0 / fan_in as f64).sqrt();
            // Row-major fill keeps the draw order independent of storage layout.
            let mut weight = DMatrix::zeros(out, fan_in);
            for i in 0..out {
                for j in 0..fan_in {
                    weight[(i, j)] = std * rng.next_normal();
                }
            }
            DenseLayer {
                weight,
                bias: DVector::zeros(out),
                activation,
            }
        })
        .collect();
    MlpParams {
        input_dim: shape.input_dim,
        output_dim: shape.output_dim,
        layers,
    }
}

pub fn zero_init(shape: &MlpShape) -> MlpParams {
    let layers = shape
        .layer_dims()
        .into_iter()
        .map(|(fan_in, out, activation)| DenseLayer {
            weight: DMatrix::zeros(out, fan_in),
            bias: DVector::zeros(out),
            activation,
        })
        .collect();
    MlpParams {
        input_dim: shape.input_dim,
        output_dim: shape.output_dim,
        layers,
    }
}

/// Layer inputs and pre-activations saved by the forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<DMatrix<f64>>,
    pre: Vec<DMatrix<f64>>,
}

pub fn mlp_forward(params: &MlpParams, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, ForwardCache)> {
    check_input(params, x)?;
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut pre = Vec::with_capacity(params.layers.len());
    let mut a = x.clone();
    for layer in &params.layers {
        let z = layer.pre_activation(&a);
        let next = layer.activation.eval_matrix(&z);
        inputs.push(a);
        pre.push(z);
        a = next;
    }
    Ok((a, ForwardCache { inputs, pre }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weight: Vec<DMatrix<f64>>,
    pub bias: Vec<DVector<f64>>,
}

impl MlpGrads {
    pub fn norm_squared(&self) -> f64 {
        self.weight.iter().map(|w| w.norm_squared()).sum::<f64>()
            + self.bias.iter().map(|b| b.norm_squared()).sum::<f64>()
    }
}

/// Reverse pass given `d_output = ∂L/∂(network output)` for the cached batch.
pub fn mlp_backward(
    params: &MlpParams,
    cache: &ForwardCache,
    d_output: &DMatrix<f64>,
) -> Result<MlpGrads> {
    let n = params.layers.len();
    if cache.pre.len() != n {
        return Err(Error::DimensionMismatch {
            context: "forward cache layers",
            expected: n,
            found: cache.pre.len(),
        });
    }
    let last = &cache.pre[n - 1];
    if d_output.shape() != last.shape() {
        return Err(Error::DimensionMismatch {
            context: "output gradient shape",
            expected: last.len(),
            found: d_output.len(),
        });
    }
    let mut grads = params.zeros_like();
    let mut upstream = d_output.clone();
    for l in (0..n).rev() {
        let layer = &params.layers[l];
        let mut delta = upstream;
        if layer.activation != ActivationKind::Identity {
            delta.zip_apply(&cache.pre[l], |d, z| *d *= layer.activation.derivative(z));
        }
        grads.weight[l] = delta.tr_mul(&cache.inputs[l]);
        grads.bias[l] = DVector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum()));
        upstream = if l > 0 {
            &delta * &layer.weight
        } else {
            DMatrix::zeros(0, 0)
        };
    }
    Ok(grads)
}

/// Summed squared error `Σ_j ‖N(x_j) − y_j‖²`.
pub fn mlp_loss(params: &MlpParams, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    let pred = params.predict(x)?;
    Ok((pred - y).norm_squared())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
}

impl AdamHyper {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub hyper: AdamHyper,
    m: MlpGrads,
    v: MlpGrads,
}

impl AdamState {
    pub fn new(params: &MlpParams, hyper: AdamHyper) -> Self {
        Self {
            step: 0,
            hyper,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

pub fn adam_step(params: &mut MlpParams, grads: &MlpGrads, state: &mut AdamState) -> Result<()> {
    if grads.weight.len() != params.layers.len() || state.m.weight.len() != params.layers.len() {
        return Err(Error::DimensionMismatch {
            context: "adam layer count",
            expected: params.layers.len(),
            found: grads.weight.len(),
        });
    }
    state.step += 1;
    let AdamHyper {
        alpha,
        beta1,
        beta2,
        eps_hat,
    } = state.hyper;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    let update = |theta: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *theta -= alpha * m_hat / (v_hat.sqrt() + eps_hat);
    };
    for (l, layer) in params.layers.iter_mut().enumerate() {
        if grads.weight[l].shape() != layer.weight.shape()
            || grads.bias[l].len() != layer.bias.len()
        {
            return Err(Error::DimensionMismatch {
                context: "adam gradient shape",
                expected: layer.weight.len(),
                found: grads.weight[l].len(),
            });
        }
        let (mw, vw) = (&mut state.m.weight[l], &mut state.v.weight[l]);
        for (((theta, g), m), v) in layer
            .weight
            .iter_mut()
            .zip(grads.weight[l].iter())
            .zip(mw.iter_mut())
            .zip(vw.iter_mut())
        {
            update(theta, *g, m, v);
        }
        let (mb, vb) = (&mut state.m.bias[l], &mut state.v.bias[l]);
        for (((theta, g), m), v) in layer
            .bias
            .iter_mut()
            .zip(grads.bias[l].iter())
            .zip(mb.iter_mut())
            .zip(vb.iter_mut())
        {
            update(theta, *g, m, v);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlpInit {
    He,
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpTrainConfig {
    pub widths: Vec<usize>,
    pub activations: Vec<ActivationKind>,
    pub alpha: f64,
    pub epochs: usize,
    pub epsilon: f64,
    pub seed: u64,
    /// Epoch indices (0-based) at which a report row is emitted.
    pub checkpoints: Vec<usize>,
    pub init: MlpInit,
}

impl MlpTrainConfig {
    pub fn shape(&self, input_dim: usize, output_dim: usize) -> Result<MlpShape> {
        MlpShape::new(input_dim, &self.widths, &self.activations, output_dim)
    }
}

/// One row of the baseline report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SsgRecord {
    pub structure: String,
    pub alpha: f64,
    pub epsilon: f64,
    pub epoch: usize,
    pub train_time_s: f64,
    pub rse_train: f64,
    pub rse_test: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SsgStop {
    Epsilon,
    MaxEpochs,
}

/// Training rse observed before the update of each epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochPoint {
    pub epoch: usize,
    pub elapsed_s: f64,
    pub rse_train: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SsgReport {
    pub records: Vec<SsgRecord>,
    pub trace: Vec<EpochPoint>,
    pub initial_loss: f64,
    pub epochs_run: usize,
    pub stop: SsgStop,
    pub total_time_s: f64,
    pub notes: Vec<String>,
}

impl SsgReport {
    /// First time the training rse fell to `threshold` or below.
    pub fn time_to(&self, threshold: f64) -> Option<(usize, f64)> {
        self.trace
            .iter()
            .find(|p| p.rse_train <= threshold)
            .map(|p| (p.epoch, p.elapsed_s))
    }
}

/// Full-batch Adam on `Σ‖N(x) − y‖²`. Epoch `e` evaluates the loss of the
/// current parameters, then applies one update; training stops after
/// `epochs` updates or once the relative loss change drops below `epsilon`.
pub fn train_mlp(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    cfg: &MlpTrainConfig,
    test: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
) -> Result<(MlpParams, SsgReport)> {
    let shape = cfg.shape(x.ncols(), y.ncols())?;
    let params = match cfg.init {
        MlpInit::He => he_init(&shape, cfg.seed),
        MlpInit::Zero => zero_init(&shape),
    };
    train_mlp_from(params, x, y, cfg, test)
}

pub fn train_mlp_from(
    mut params: MlpParams,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    cfg: &MlpTrainConfig,
    test: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
) -> Result<(MlpParams, SsgReport)> {
    params.validate()?;
    if x.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch {
            context: "training rows",
            expected: x.nrows(),
            found: y.nrows(),
        });
    }
    if !(cfg.alpha >= 0.0) || !(cfg.epsilon >= 0.0) {
        return Err(Error::invalid("alpha and epsilon must be non-negative"));
    }
    let y_norm = y.norm_squared();
    if y_norm == 0.0 {
        return Err(Error::ZeroTargets);
    }
    let structure = params.structure();
    let start = Instant::now();
    let mut adam = AdamState::new(&params, AdamHyper::with_alpha(cfg.alpha));
    let mut records = vec![];
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut prev_loss: Option<f64> = None;
    let mut initial_loss = f64::NAN;
    let mut stop = SsgStop::MaxEpochs;
    let mut epochs_run = 0;

    let record = |params: &MlpParams, epoch: usize, elapsed: f64| -> Result<SsgRecord> {
        let rse_train = compute_rse(&params.predict(x)?, y)?;
        let rse_test = match test {
            Some((tx, ty)) => Some(compute_rse(&params.predict(tx)?, ty)?),
            None => None,
        };
        Ok(SsgRecord {
            structure: structure.clone(),
            alpha: cfg.alpha,
            epsilon: cfg.epsilon,
            epoch,
            train_time_s: elapsed,
            rse_train,
            rse_test,
        })
    };

    for epoch in 0..cfg.epochs {
        let (pred, cache) = mlp_forward(&params, x)?;
        let diff = pred - y;
        let loss = diff.norm_squared();
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("baseline loss at epoch {epoch}")));
        }
        if epoch == 0 {
            initial_loss = loss;
        }
        trace.push(EpochPoint {
            epoch,
            elapsed_s: start.elapsed().as_secs_f64(),
            rse_train: loss / y_norm,
        });
        if let Some(prev) = prev_loss {
            if (loss - prev).abs() / prev.abs().max(1e-30) < cfg.epsilon {
                stop = SsgStop::Epsilon;
                records.push(record(&params, epoch, start.elapsed().as_secs_f64())?);
                break;
            }
        }
        prev_loss = Some(loss);
        let grads = mlp_backward(&params, &cache, &(diff * 2.0))?;
        adam_step(&mut params, &grads, &mut adam)?;
        epochs_run = epoch + 1;
        if cfg.checkpoints.contains(&epoch) || epoch + 1 == cfg.epochs {
            records.push(record(&params, epoch, start.elapsed().as_secs_f64())?);
        }
    }
    if cfg.epochs == 0 {
        initial_loss = mlp_loss(&params, x, y)?;
    }
    let report = SsgReport {
        records,
        trace,
        initial_loss,
        epochs_run,
        stop,
        total_time_s: start.elapsed().as_secs_f64(),
        notes: vec!["full-batch Adam; test metrics never used for stopping".into()],
    };
    Ok((params, report))
}
