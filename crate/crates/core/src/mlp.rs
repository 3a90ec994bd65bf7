//! Dense two-layer regression network trained by minibatch gradient descent.
//!
//! The network computes `w2 · act(w1 · x + b1) + b2` and supports three
//! objectives: mean squared error, pinball (quantile) loss and mean squared
//! error plus a one-sided hinge on the lower interval bound. Gradients are
//! exact (backpropagation by hand); subgradients at hinge and pinball kinks
//! are taken as zero.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MlpError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
}

pub type Result<T> = std::result::Result<T, MlpError>;

/// Row-major dense matrix of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(MlpError::DimensionMismatch {
                context: "matrix storage",
                expected: rows * cols,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MlpError::NonFinite("matrix"));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    /// Stacks equal-length rows. An empty slice yields a `0 x 0` matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(MlpError::DimensionMismatch {
                    context: "matrix row",
                    expected: cols,
                    actual: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut values = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            values,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Activation::Sigmoid => f.write_str("sigmoid"),
            Activation::Relu => f.write_str("relu"),
        }
    }
}

/// Training objective. `LowerPenalty` carries the one-sided interval width
/// `width` that shifts the prediction to its lower bound `ŷ - width`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    Mse,
    Pinball { tau: f64 },
    LowerPenalty { width: f64 },
}

impl Objective {
    fn validate(self) -> Result<()> {
        match self {
            Objective::Mse => Ok(()),
            Objective::Pinball { tau } if tau > 0.0 && tau < 1.0 => Ok(()),
            Objective::Pinball { tau } => Err(MlpError::InvalidConfig(format!(
                "pinball tau must lie in (0, 1), got {tau}"
            ))),
            Objective::LowerPenalty { width } if width >= 0.0 && width.is_finite() => Ok(()),
            Objective::LowerPenalty { width } => Err(MlpError::InvalidConfig(format!(
                "lower-penalty width must be finite and non-negative, got {width}"
            ))),
        }
    }

    /// Per-sample loss and its derivative with respect to the prediction.
    #[inline]
    fn point(self, pred: f64, label: f64) -> (f64, f64) {
        match self {
            Objective::Mse => {
                let r = pred - label;
                (r * r, 2.0 * r)
            }
            Objective::Pinball { tau } => {
                let u = label - pred;
                if u > 0.0 {
                    (tau * u, -tau)
                } else if u < 0.0 {
                    ((tau - 1.0) * u, 1.0 - tau)
                } else {
                    (0.0, 0.0)
                }
            }
            Objective::LowerPenalty { width } => {
                let r = pred - label;
                let overshoot = r - width;
                if overshoot > 0.0 {
                    (r * r + overshoot, 2.0 * r + 1.0)
                } else {
                    (r * r, 2.0 * r)
                }
            }
        }
    }
}

/// Parameters of the two-layer regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    /// hidden x input
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// 1 x hidden
    pub w2: Matrix,
    pub b2: f64,
    pub activation: Activation,
}

impl MlpParams {
    /// Zero-initialised parameters.
    pub fn zeros(input_dim: usize, hidden: usize, activation: Activation) -> Self {
        Self {
            w1: Matrix::zeros(hidden, input_dim),
            b1: vec![0.0; hidden],
            w2: Matrix::zeros(1, hidden),
            b2: 0.0,
            activation,
        }
    }

    /// Uniform initialisation in `[-s, s]`. With `init_scale = None` each layer
    /// uses `s = 1/sqrt(fan_in)`.
    pub fn init<R: Rng>(
        input_dim: usize,
        hidden: usize,
        activation: Activation,
        init_scale: Option<f64>,
        rng: &mut R,
    ) -> Self {
        let s1 = init_scale.unwrap_or(1.0 / (input_dim.max(1) as f64).sqrt());
        let s2 = init_scale.unwrap_or(1.0 / (hidden.max(1) as f64).sqrt());
        let mut params = Self::zeros(input_dim, hidden, activation);
        for v in params.w1.values_mut() {
            *v = rng.random_range(-s1..=s1);
        }
        for v in params.b1.iter_mut() {
            *v = rng.random_range(-s1..=s1);
        }
        for v in params.w2.values_mut() {
            *v = rng.random_range(-s2..=s2);
        }
        params.b2 = rng.random_range(-s2..=s2);
        params
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.rows()
    }

    pub fn is_finite(&self) -> bool {
        self.w1.values().iter().all(|v| v.is_finite())
            && self.b1.iter().all(|v| v.is_finite())
            && self.w2.values().iter().all(|v| v.is_finite())
            && self.b2.is_finite()
    }

    /// Number of scalar parameters.
    pub fn len(&self) -> usize {
        self.w1.values().len() + self.b1.len() + self.w2.values().len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flat view over every parameter, in the order w1, b1, w2, b2.
    pub fn get_flat(&self, i: usize) -> f64 {
        let (n1, nb1, n2) = (self.w1.values().len(), self.b1.len(), self.w2.values().len());
        if i < n1 {
            self.w1.values()[i]
        } else if i < n1 + nb1 {
            self.b1[i - n1]
        } else if i < n1 + nb1 + n2 {
            self.w2.values()[i - n1 - nb1]
        } else {
            self.b2
        }
    }

    pub fn set_flat(&mut self, i: usize, v: f64) {
        let (n1, nb1, n2) = (self.w1.values().len(), self.b1.len(), self.w2.values().len());
        if i < n1 {
            self.w1.values_mut()[i] = v;
        } else if i < n1 + nb1 {
            self.b1[i - n1] = v;
        } else if i < n1 + nb1 + n2 {
            self.w2.values_mut()[i - n1 - nb1] = v;
        } else {
            self.b2 = v;
        }
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.input_dim() {
            return Err(MlpError::DimensionMismatch {
                context: "network input",
                expected: self.input_dim(),
                actual: len,
            });
        }
        Ok(())
    }

    #[inline]
    fn forward_unchecked(&self, x: &[f64], pre: &mut [f64], act: &mut [f64]) -> f64 {
        let d = x.len();
        let w1 = self.w1.values();
        let w2 = self.w2.values();
        let mut out = self.b2;
        for j in 0..pre.len() {
            let row = &w1[j * d..(j + 1) * d];
            let z = row.iter().zip(x).fold(self.b1[j], |acc, (w, xi)| acc + w * xi);
            let a = self.activation.apply(z);
            pre[j] = z;
            act[j] = a;
            out += w2[j] * a;
        }
        out
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x.len())?;
        let h = self.hidden();
        let mut pre = vec![0.0; h];
        let mut act = vec![0.0; h];
        Ok(self.forward_unchecked(x, &mut pre, &mut act))
    }

    /// Predictions for every row of `features`.
    pub fn predict(&self, features: &Matrix) -> Result<Vec<f64>> {
        if features.rows() == 0 {
            return Ok(Vec::new());
        }
        self.check_input(features.cols())?;
        let h = self.hidden();
        let mut pre = vec![0.0; h];
        let mut act = vec![0.0; h];
        Ok((0..features.rows())
            .map(|i| self.forward_unchecked(features.row(i), &mut pre, &mut act))
            .collect())
    }

    fn descend(&mut self, grad: &Gradient, lr: f64) {
        for (p, g) in self.w1.values_mut().iter_mut().zip(grad.w1.values()) {
            *p -= lr * g;
        }
        for (p, g) in self.b1.iter_mut().zip(&grad.b1) {
            *p -= lr * g;
        }
        for (p, g) in self.w2.values_mut().iter_mut().zip(grad.w2.values()) {
            *p -= lr * g;
        }
        self.b2 -= lr * grad.b2;
    }
}

/// Gradient with the same shapes as [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: f64,
}

impl Gradient {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            w1: Matrix::zeros(params.hidden(), params.input_dim()),
            b1: vec![0.0; params.hidden()],
            w2: Matrix::zeros(1, params.hidden()),
            b2: 0.0,
        }
    }

    fn reset(&mut self) {
        self.w1.values_mut().fill(0.0);
        self.b1.fill(0.0);
        self.w2.values_mut().fill(0.0);
        self.b2 = 0.0;
    }

    pub fn get_flat(&self, i: usize) -> f64 {
        let (n1, nb1, n2) = (self.w1.values().len(), self.b1.len(), self.w2.values().len());
        if i < n1 {
            self.w1.values()[i]
        } else if i < n1 + nb1 {
            self.b1[i - n1]
        } else if i < n1 + nb1 + n2 {
            self.w2.values()[i - n1 - nb1]
        } else {
            self.b2
        }
    }

    pub fn iter_flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.w1
            .values()
            .iter()
            .chain(&self.b1)
            .chain(self.w2.values())
            .copied()
            .chain(std::iter::once(self.b2))
    }
}

/// A set of labelled rows.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub features: &'a Matrix,
    pub labels: &'a [f64],
}

impl<'a> Batch<'a> {
    pub fn new(features: &'a Matrix, labels: &'a [f64]) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(MlpError::DimensionMismatch {
                context: "batch labels",
                expected: features.rows(),
                actual: labels.len(),
            });
        }
        if labels.iter().any(|y| !y.is_finite()) {
            return Err(MlpError::NonFinite("labels"));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Reusable hidden-layer buffers.
struct Scratch {
    pre: Vec<f64>,
    act: Vec<f64>,
}

impl Scratch {
    fn new(hidden: usize) -> Self {
        Self {
            pre: vec![0.0; hidden],
            act: vec![0.0; hidden],
        }
    }
}

/// Mean loss over `rows` and, when `grad` is given, its gradient written into it.
fn loss_and_grad_rows(
    params: &MlpParams,
    batch: Batch<'_>,
    rows: &[usize],
    objective: Objective,
    mut grad: Option<&mut Gradient>,
    scratch: &mut Scratch,
) -> f64 {
    let scale = 1.0 / rows.len() as f64;
    let d = params.input_dim();
    let w2 = params.w2.values();
    if let Some(g) = grad.as_deref_mut() {
        g.reset();
    }
    let mut total = 0.0;
    for &i in rows {
        let x = batch.features.row(i);
        let pred = params.forward_unchecked(x, &mut scratch.pre, &mut scratch.act);
        let (loss, dpred) = objective.point(pred, batch.labels[i]);
        total += loss;
        let Some(g) = grad.as_deref_mut() else {
            continue;
        };
        let gd = dpred * scale;
        if gd == 0.0 {
            continue;
        }
        g.b2 += gd;
        let gw2 = g.w2.values_mut();
        let gw1 = g.w1.values_mut();
        for j in 0..scratch.act.len() {
            let a = scratch.act[j];
            gw2[j] += gd * a;
            let dz = gd * w2[j] * params.activation.derivative(scratch.pre[j], a);
            if dz != 0.0 {
                g.b1[j] += dz;
                let row = &mut gw1[j * d..(j + 1) * d];
                for (gw, xi) in row.iter_mut().zip(x) {
                    *gw += dz * xi;
                }
            }
        }
    }
    total * scale
}

fn check_batch(params: &MlpParams, batch: Batch<'_>, objective: Objective) -> Result<()> {
    if batch.is_empty() {
        return Err(MlpError::EmptyBatch);
    }
    params.check_input(batch.features.cols())?;
    objective.validate()
}

/// Network output for a single feature vector.
pub fn forward(params: &MlpParams, x: &[f64]) -> Result<f64> {
    params.forward(x)
}

/// Mean objective value over the batch.
pub fn loss_value(params: &MlpParams, batch: Batch<'_>, objective: Objective) -> Result<f64> {
    check_batch(params, batch, objective)?;
    let rows: Vec<usize> = (0..batch.len()).collect();
    let mut scratch = Scratch::new(params.hidden());
    Ok(loss_and_grad_rows(params, batch, &rows, objective, None, &mut scratch))
}

/// Exact gradient of [`loss_value`] with respect to every parameter.
pub fn grad(params: &MlpParams, batch: Batch<'_>, objective: Objective) -> Result<Gradient> {
    check_batch(params, batch, objective)?;
    let rows: Vec<usize> = (0..batch.len()).collect();
    let mut scratch = Scratch::new(params.hidden());
    let mut g = Gradient::zeros_like(params);
    loss_and_grad_rows(params, batch, &rows, objective, Some(&mut g), &mut scratch);
    Ok(g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden: usize,
    pub activation: Activation,
    pub epochs: usize,
    pub learning_rate: f64,
    pub minibatch_size: usize,
    pub seed: u64,
    pub objective: Objective,
    /// `None` selects `1/sqrt(fan_in)` per layer.
    pub init_scale: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 100,
            activation: Activation::Sigmoid,
            epochs: 1500,
            learning_rate: 0.01,
            minibatch_size: 32,
            seed: 0,
            objective: Objective::Mse,
            init_scale: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(MlpError::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(MlpError::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.minibatch_size == 0 {
            return Err(MlpError::InvalidConfig(
                "minibatch size must be at least 1".into(),
            ));
        }
        if self.hidden == 0 {
            return Err(MlpError::InvalidConfig("hidden width must be at least 1".into()));
        }
        if let Some(s) = self.init_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(MlpError::InvalidConfig(format!("init scale must be positive, got {s}")));
            }
        }
        self.objective.validate()
    }

    /// Number of optimizer steps one epoch takes on `n` rows.
    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.minibatch_size)
    }
}

/// Trains with the configured objective.
pub fn train(data: Batch<'_>, config: &TrainConfig) -> Result<MlpParams> {
    train_with(data, config, |_| Ok::<_, MlpError>(config.objective))
}

/// Training loop in which the objective is chosen afresh before every
/// minibatch step from the current parameters. Initialisation and shuffling
/// are derived from `config.seed` only.
pub(crate) fn train_with<E, F>(
    data: Batch<'_>,
    config: &TrainConfig,
    mut objective_for_step: F,
) -> std::result::Result<MlpParams, E>
where
    E: From<MlpError>,
    F: FnMut(&MlpParams) -> std::result::Result<Objective, E>,
{
    config.validate()?;
    if data.is_empty() {
        return Err(MlpError::EmptyBatch.into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = MlpParams::init(
        data.features.cols(),
        config.hidden,
        config.activation,
        config.init_scale,
        &mut rng,
    );
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = Gradient::zeros_like(&params);
    let mut scratch = Scratch::new(config.hidden);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for rows in order.chunks(config.minibatch_size) {
            let objective = objective_for_step(&params)?;
            objective.validate()?;
            let loss = loss_and_grad_rows(&params, data, rows, objective, Some(&mut grad), &mut scratch);
            if !loss.is_finite() {
                return Err(MlpError::Diverged { epoch: epoch + 1 }.into());
            }
            params.descend(&grad, config.learning_rate);
        }
        if !params.is_finite() {
            return Err(MlpError::Diverged { epoch: epoch + 1 }.into());
        }
    }
    Ok(params)
}

/// Trains the low and high quantile heads with pinball levels
/// `alpha/2` and `1 - alpha/2`.
pub fn train_quantile_pair(
    data: Batch<'_>,
    config: &TrainConfig,
    alpha: f64,
) -> Result<(MlpParams, MlpParams)> {
    let (tau_low, tau_high) = quantile_levels(alpha)?;
    let low = train(
        data,
        &TrainConfig {
            objective: Objective::Pinball { tau: tau_low },
            ..config.clone()
        },
    )?;
    let high = train(
        data,
        &TrainConfig {
            objective: Objective::Pinball { tau: tau_high },
            ..config.clone()
        },
    )?;
    Ok((low, high))
}

/// Pinball levels of the quantile pair for miscoverage `alpha`.
pub fn quantile_levels(alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(MlpError::InvalidConfig(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    Ok((alpha / 2.0, 1.0 - alpha / 2.0))
}
