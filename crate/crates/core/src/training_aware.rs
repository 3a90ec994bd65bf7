//! Training loops that calibrate an interval at every minibatch step.
//!
//! Both loops re-predict the validation set before each step, derive a
//! one-sided width from it, and train on squared error plus the hinge
//! `max(0, (ŷ - width) - y)`. The width is treated as a constant within the
//! step. The test-time width is the mean of the recorded per-step widths
//! after the warmup window.
//!
//! * conformal training uses the split-conformal quantile of the validation
//!   residuals at `alpha`;
//! * training-aware risk control selects `lambda` by conformal risk control
//!   on the validation set and uses `lambda * err`.

use crate::conformal::{self, ConformalError, PredictionInterval, RiskSpec};
use crate::mlp::{self, Batch, MlpError, MlpParams, Objective, TrainConfig};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainingError {
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error(transparent)]
    Conformal(#[from] ConformalError),
    #[error("invalid loop config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, TrainingError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntervalMethod {
    ConformalTraining,
    TrainingAwareCrc,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub base: TrainConfig,
    pub spec: RiskSpec,
    pub lambda_grid: Vec<f64>,
    pub warmup_epochs: usize,
    /// Replace the averaged width by a post-hoc calibration on the
    /// validation set after training.
    pub recalibrate: bool,
}

impl LoopConfig {
    /// Warmup set to 10% of the epochs.
    pub fn new(base: TrainConfig, spec: RiskSpec, lambda_grid: Vec<f64>) -> Self {
        let warmup_epochs = base.epochs / 10;
        Self {
            base,
            spec,
            lambda_grid,
            warmup_epochs,
            recalibrate: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        self.spec.validate()?;
        if self.warmup_epochs >= self.base.epochs {
            return Err(TrainingError::InvalidConfig(format!(
                "warmup epochs ({}) must be below total epochs ({})",
                self.warmup_epochs, self.base.epochs
            )));
        }
        if self.lambda_grid.is_empty() {
            return Err(ConformalError::InvalidGrid("grid is empty".into()).into());
        }
        Ok(())
    }
}

/// A trained network with a fixed one-sided interval width.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedIntervalModel {
    pub params: MlpParams,
    pub one_sided_width: f64,
    pub method: IntervalMethod,
    /// One entry per optimizer step.
    pub width_history: Vec<f64>,
    /// Steps excluded from the average.
    pub warmup_steps: usize,
}

impl TrainedIntervalModel {
    /// Mean of the post-warmup width history.
    pub fn averaged_width(&self) -> f64 {
        mean_after(&self.width_history, self.warmup_steps)
    }
}

fn mean_after(history: &[f64], skip: usize) -> f64 {
    let tail = &history[skip.min(history.len())..];
    if tail.is_empty() {
        return 0.0;
    }
    tail.iter().sum::<f64>() / tail.len() as f64
}

fn run_loop<F>(
    train_data: Batch<'_>,
    val_data: Batch<'_>,
    cfg: &LoopConfig,
    method: IntervalMethod,
    mut step_width: F,
) -> Result<TrainedIntervalModel>
where
    F: FnMut(&[f64], &[f64]) -> Result<f64>,
{
    cfg.validate()?;
    if train_data.is_empty() {
        return Err(MlpError::EmptyBatch.into());
    }
    if val_data.is_empty() {
        return Err(ConformalError::Empty("validation set").into());
    }
    let steps_per_epoch = cfg.base.steps_per_epoch(train_data.len());
    let mut history = Vec::with_capacity(steps_per_epoch * cfg.base.epochs);
    let params = mlp::train_with(train_data, &cfg.base, |params: &MlpParams| {
        let val_preds = params.predict(val_data.features)?;
        let width = step_width(&val_preds, val_data.labels)?;
        history.push(width);
        Ok::<_, TrainingError>(Objective::LowerPenalty { width })
    })?;
    let warmup_steps = cfg.warmup_epochs * steps_per_epoch;
    let mut width = mean_after(&history, warmup_steps);
    if cfg.recalibrate {
        let val_preds = params.predict(val_data.features)?;
        width = step_width(&val_preds, val_data.labels)?;
    }
    Ok(TrainedIntervalModel {
        params,
        one_sided_width: width,
        method,
        width_history: history,
        warmup_steps,
    })
}

/// Conformal training with a lower-bound penalty.
pub fn conformal_train(
    train_data: Batch<'_>,
    val_data: Batch<'_>,
    cfg: &LoopConfig,
) -> Result<TrainedIntervalModel> {
    let alpha = cfg.spec.alpha;
    run_loop(
        train_data,
        val_data,
        cfg,
        IntervalMethod::ConformalTraining,
        |preds, labels| {
            let scores = conformal::nonconformity(preds, labels)?;
            Ok(conformal::conformal_quantile(&scores, alpha)?)
        },
    )
}

/// Training-aware conformal risk control: a fresh `lambda` every minibatch.
pub fn crc_aware_train(
    train_data: Batch<'_>,
    val_data: Batch<'_>,
    cfg: &LoopConfig,
) -> Result<TrainedIntervalModel> {
    run_loop(
        train_data,
        val_data,
        cfg,
        IntervalMethod::TrainingAwareCrc,
        |preds, labels| {
            let calib = conformal::crc_select_lambda(preds, labels, &cfg.spec, &cfg.lambda_grid)?;
            Ok(calib.half_width())
        },
    )
}

/// Symmetric intervals of half-width `model.one_sided_width`.
pub fn predict_with_fixed_interval(
    model: &TrainedIntervalModel,
    features: &mlp::Matrix,
) -> Result<Vec<PredictionInterval>> {
    let w = model.one_sided_width;
    Ok(model
        .params
        .predict(features)?
        .into_iter()
        .map(|p| PredictionInterval {
            low: p - w,
            high: p + w,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{Activation, Matrix};

    fn linear_data(n: usize, offset: f64) -> (Matrix, Vec<f64>) {
        let xs: Vec<[f64; 1]> = (0..n)
            .map(|i| [-1.0 + 2.0 * (i as f64 + offset) / n as f64])
            .collect();
        let ys = xs.iter().map(|x| 2.0 * x[0]).collect();
        (Matrix::from_rows(&xs).unwrap(), ys)
    }

    fn small_cfg(epochs: usize, warmup: usize) -> LoopConfig {
        LoopConfig {
            base: TrainConfig {
                hidden: 8,
                activation: Activation::Sigmoid,
                epochs,
                learning_rate: 0.05,
                minibatch_size: 8,
                seed: 3,
                ..TrainConfig::default()
            },
            spec: RiskSpec::new(95.0, 0.1).unwrap(),
            lambda_grid: conformal::default_lambda_grid(),
            warmup_epochs: warmup,
            recalibrate: false,
        }
    }

    #[test]
    fn warmup_must_be_below_epochs() {
        let (x, y) = linear_data(16, 0.0);
        let b = Batch::new(&x, &y).unwrap();
        let err = conformal_train(b, b, &small_cfg(3, 3)).unwrap_err();
        assert!(matches!(err, TrainingError::InvalidConfig(_)));
    }

    #[test]
    fn zero_warmup_averages_every_step() {
        let (x, y) = linear_data(20, 0.0);
        let (xv, yv) = linear_data(10, 0.5);
        let cfg = small_cfg(4, 0);
        let model = conformal_train(
            Batch::new(&x, &y).unwrap(),
            Batch::new(&xv, &yv).unwrap(),
            &cfg,
        )
        .unwrap();
        assert_eq!(model.width_history.len(), 4 * 3);
        assert_eq!(model.warmup_steps, 0);
        let mean = model.width_history.iter().sum::<f64>() / 12.0;
        assert_eq!(model.one_sided_width, mean);
        assert_eq!(model.averaged_width(), model.one_sided_width);
    }

    #[test]
    fn history_has_one_entry_per_step() {
        let (x, y) = linear_data(21, 0.0);
        let (xv, yv) = linear_data(7, 0.5);
        let cfg = small_cfg(5, 2);
        let model = crc_aware_train(
            Batch::new(&x, &y).unwrap(),
            Batch::new(&xv, &yv).unwrap(),
            &cfg,
        )
        .unwrap();
        assert_eq!(model.width_history.len(), 5 * 3);
        assert_eq!(model.warmup_steps, 2 * 3);
        assert!(model.width_history.iter().all(|w| *w >= 0.0));
        assert_eq!(model.one_sided_width, model.averaged_width());
    }

    #[test]
    fn fixed_width_intervals() {
        let (x, y) = linear_data(10, 0.0);
        let model = TrainedIntervalModel {
            params: mlp::train(Batch::new(&x, &y).unwrap(), &small_cfg(2, 0).base).unwrap(),
            one_sided_width: 1.5,
            method: IntervalMethod::TrainingAwareCrc,
            width_history: vec![1.5],
            warmup_steps: 0,
        };
        let ivs = predict_with_fixed_interval(&model, &x).unwrap();
        assert!(ivs.iter().all(|iv| iv.width() == 3.0 || (iv.width() - 3.0).abs() < 1e-12));
        let zero = TrainedIntervalModel {
            one_sided_width: 0.0,
            ..model.clone()
        };
        assert!(predict_with_fixed_interval(&zero, &x)
            .unwrap()
            .iter()
            .all(|iv| iv.low == iv.high));
        let wrong = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert!(matches!(
            predict_with_fixed_interval(&model, &wrong),
            Err(TrainingError::Mlp(MlpError::DimensionMismatch { .. }))
        ));
    }

    #[test]
    fn recalibration_uses_final_model() {
        let (x, y) = linear_data(20, 0.0);
        let (xv, yv) = linear_data(10, 0.5);
        let mut cfg = small_cfg(3, 0);
        cfg.recalibrate = true;
        let tb = Batch::new(&x, &y).unwrap();
        let vb = Batch::new(&xv, &yv).unwrap();
        let model = conformal_train(tb, vb, &cfg).unwrap();
        let preds = model.params.predict(&xv).unwrap();
        let expected = conformal::conformal_quantile(
            &conformal::nonconformity(&preds, &yv).unwrap(),
            cfg.spec.alpha,
        )
        .unwrap();
        assert_eq!(model.one_sided_width, expected);
    }
}
