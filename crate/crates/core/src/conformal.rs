//! Post-hoc conformal calibration.
//!
//! Split conformal prediction with absolute-residual scores, conformalized
//! quantile regression, and conformal risk control under the clinical triage
//! loss (a plan whose interval lies entirely above the safety threshold while
//! its true pass rate is below it).
//!
//! The split-conformal width is the `k`-th smallest score with
//! `k = ceil((n + 1)(1 - alpha))`, clamped to `n`. The `+1` is the
//! finite-sample correction that makes marginal coverage hold exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConformalError {
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("length mismatch: {left} predictions vs {right} labels")]
    LengthMismatch { left: usize, right: usize },
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("interval half-width must be finite and non-negative, got {0}")]
    NegativeWidth(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid lambda grid: {0}")]
    InvalidGrid(String),
    #[error("invalid risk spec: {0}")]
    InvalidRiskSpec(String),
}

pub type Result<T> = std::result::Result<T, ConformalError>;

/// Tolerance on the rank `(n + 1)(1 - alpha)` so that products such as
/// `10 * 0.9` do not round up to the next integer.
const RANK_EPS: f64 = 1e-9;

/// Absolute calibration residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct NonconformityScores(Vec<f64>);

impl NonconformityScores {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(ConformalError::Empty("nonconformity scores"));
        }
        if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(ConformalError::NonFinite("nonconformity scores"));
        }
        Ok(Self(scores))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval {
    pub low: f64,
    pub high: f64,
}

impl PredictionInterval {
    /// Fails unless `low <= high` and both ends are finite.
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !low.is_finite() || !high.is_finite() {
            return Err(ConformalError::NonFinite("interval bound"));
        }
        if low > high {
            return Err(ConformalError::NegativeWidth(high - low));
        }
        Ok(Self { low, high })
    }

    pub fn point(value: f64) -> Self {
        Self {
            low: value,
            high: value,
        }
    }

    pub fn width(&self) -> f64 {
        self.high - self.low
    }

    pub fn contains(&self, y: f64) -> bool {
        self.low <= y && y <= self.high
    }

    pub fn contains_interval(&self, other: &PredictionInterval) -> bool {
        self.low <= other.low && other.high <= self.high
    }
}

/// Decision contract: safety threshold, risk level and loss bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskSpec {
    pub safety_threshold: f64,
    pub alpha: f64,
    pub loss_bound: f64,
}

impl Default for RiskSpec {
    fn default() -> Self {
        Self {
            safety_threshold: 95.0,
            alpha: 0.1,
            loss_bound: 1.0,
        }
    }
}

impl RiskSpec {
    pub fn new(safety_threshold: f64, alpha: f64) -> Result<Self> {
        let spec = Self {
            safety_threshold,
            alpha,
            ..Self::default()
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if !self.safety_threshold.is_finite() {
            return Err(ConformalError::InvalidRiskSpec(
                "safety threshold must be finite".into(),
            ));
        }
        if !(self.loss_bound >= 1.0) {
            return Err(ConformalError::InvalidRiskSpec(format!(
                "loss bound {} is below the loss supremum 1",
                self.loss_bound
            )));
        }
        Ok(())
    }

    /// `true` when the label counts as a failing plan.
    pub fn is_unsafe(&self, y: f64) -> bool {
        y < self.safety_threshold
    }
}

/// Result of a risk-control calibration: `lambda` scales `err`, the largest
/// calibration residual.
#[derive(Debug, Clone, PartialEq)]
pub struct CrcCalibration {
    pub lambda: f64,
    pub err: f64,
    pub grid: Vec<f64>,
}

impl CrcCalibration {
    pub fn half_width(&self) -> f64 {
        self.lambda * self.err
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(ConformalError::InvalidAlpha(alpha))
    }
}

fn check_pairs(predictions: &[f64], labels: &[f64]) -> Result<()> {
    if predictions.len() != labels.len() {
        return Err(ConformalError::LengthMismatch {
            left: predictions.len(),
            right: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(ConformalError::Empty("calibration set"));
    }
    Ok(())
}

/// Elementwise `|prediction - label|`.
pub fn nonconformity(predictions: &[f64], labels: &[f64]) -> Result<NonconformityScores> {
    check_pairs(predictions, labels)?;
    NonconformityScores::new(
        predictions
            .iter()
            .zip(labels)
            .map(|(p, y)| (p - y).abs())
            .collect(),
    )
}

/// Rank `k` (1-based) of the finite-sample corrected quantile.
pub fn conformal_rank(n: usize, alpha: f64) -> Result<usize> {
    check_alpha(alpha)?;
    if n == 0 {
        return Err(ConformalError::Empty("nonconformity scores"));
    }
    let raw = (n as f64 + 1.0) * (1.0 - alpha);
    let k = (raw - RANK_EPS).ceil().max(1.0) as usize;
    Ok(k.min(n))
}

/// One-sided split-conformal width: the `k`-th smallest score.
pub fn conformal_quantile(scores: &NonconformityScores, alpha: f64) -> Result<f64> {
    let k = conformal_rank(scores.len(), alpha)?;
    let mut sorted = scores.as_slice().to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[k - 1])
}

/// `[prediction - width, prediction + width]`.
pub fn split_cp_interval(prediction: f64, width: f64) -> Result<PredictionInterval> {
    if !(width >= 0.0) || !width.is_finite() {
        return Err(ConformalError::NegativeWidth(width));
    }
    PredictionInterval::new(prediction - width, prediction + width)
}

/// Quantile-regression interval; `crossed` marks a collapsed interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CqrInterval {
    pub interval: PredictionInterval,
    pub crossed: bool,
}

/// `[pred_low - width_low, pred_high + width_high]`. When the ends cross the
/// interval collapses to the midpoint and is flagged.
pub fn cqr_interval(
    pred_low: f64,
    pred_high: f64,
    width_low: f64,
    width_high: f64,
) -> Result<CqrInterval> {
    for w in [width_low, width_high] {
        if !(w >= 0.0) || !w.is_finite() {
            return Err(ConformalError::NegativeWidth(w));
        }
    }
    let low = pred_low - width_low;
    let high = pred_high + width_high;
    if low > high {
        let mid = 0.5 * (low + high);
        return Ok(CqrInterval {
            interval: PredictionInterval::point(mid),
            crossed: true,
        });
    }
    Ok(CqrInterval {
        interval: PredictionInterval::new(low, high)?,
        crossed: false,
    })
}

/// Calibrated CQR widths, one per quantile head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CqrCalibration {
    pub width_low: f64,
    pub width_high: f64,
}

/// Computes the two CQR widths from separate score sets of each head.
pub fn cqr_calibrate(
    val_low: &[f64],
    val_high: &[f64],
    labels: &[f64],
    alpha: f64,
) -> Result<CqrCalibration> {
    Ok(CqrCalibration {
        width_low: conformal_quantile(&nonconformity(val_low, labels)?, alpha)?,
        width_high: conformal_quantile(&nonconformity(val_high, labels)?, alpha)?,
    })
}

/// 1 when the whole interval sits above the threshold but the plan fails.
pub fn risk_loss(interval: &PredictionInterval, y: f64, spec: &RiskSpec) -> f64 {
    if interval.low > spec.safety_threshold && y < spec.safety_threshold {
        1.0
    } else {
        0.0
    }
}

/// Mean triage loss over a calibration set.
pub fn empirical_risk(
    intervals: &[PredictionInterval],
    labels: &[f64],
    spec: &RiskSpec,
) -> Result<f64> {
    if intervals.len() != labels.len() {
        return Err(ConformalError::LengthMismatch {
            left: intervals.len(),
            right: labels.len(),
        });
    }
    if intervals.is_empty() {
        return Err(ConformalError::Empty("calibration set"));
    }
    let losses: f64 = intervals
        .iter()
        .zip(labels)
        .map(|(iv, &y)| risk_loss(iv, y, spec))
        .sum();
    Ok(losses / labels.len() as f64)
}

/// `count` losses out of `n` as an empirical risk.
fn risk_from_count(count: usize, n: usize) -> f64 {
    count as f64 / n as f64
}

/// Finite-sample inflated risk `n/(n+1) r + 1/(n+1)`.
pub fn inflated_risk(risk: f64, n: usize) -> f64 {
    let n = n as f64;
    (n / (n + 1.0)) * risk + 1.0 / (n + 1.0)
}

/// Evenly spaced grid `[0, max]` with `points` entries.
pub fn lambda_grid(max: f64, points: usize) -> Result<Vec<f64>> {
    if points < 1 || !(max >= 0.0) || !max.is_finite() {
        return Err(ConformalError::InvalidGrid(format!(
            "need at least one point on a non-negative range, got {points} points up to {max}"
        )));
    }
    if points == 1 {
        return Ok(vec![0.0]);
    }
    let step = max / (points - 1) as f64;
    Ok((0..points)
        .map(|i| if i + 1 == points { max } else { i as f64 * step })
        .collect())
}

/// 201 points on `[0, 2]`.
pub fn default_lambda_grid() -> Vec<f64> {
    lambda_grid(2.0, 201).expect("static grid is valid")
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(ConformalError::InvalidGrid("grid is empty".into()));
    }
    if grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return Err(ConformalError::InvalidGrid(
            "grid values must be finite and non-negative".into(),
        ));
    }
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(ConformalError::InvalidGrid("grid must be ascending".into()));
    }
    Ok(())
}

/// Number of calibration losses at a given `lambda`. Only failing plans can
/// contribute, so `unsafe_preds` holds just their predictions.
fn loss_count(unsafe_preds: &[f64], half_width_scale: f64, lambda: f64, threshold: f64) -> usize {
    let half = lambda * half_width_scale;
    unsafe_preds
        .iter()
        .filter(|&&p| p - half > threshold)
        .count()
}

/// Empirical risk `r(lambda)` along the grid for the symmetric intervals
/// `[p - lambda * err, p + lambda * err]`.
pub fn risk_curve(
    predictions: &[f64],
    labels: &[f64],
    spec: &RiskSpec,
    grid: &[f64],
) -> Result<Vec<f64>> {
    check_pairs(predictions, labels)?;
    check_grid(grid)?;
    let err = nonconformity(predictions, labels)?.max();
    let unsafe_preds = failing_predictions(predictions, labels, spec);
    let n = labels.len();
    Ok(grid
        .iter()
        .map(|&l| risk_from_count(loss_count(&unsafe_preds, err, l, spec.safety_threshold), n))
        .collect())
}

fn failing_predictions(predictions: &[f64], labels: &[f64], spec: &RiskSpec) -> Vec<f64> {
    predictions
        .iter()
        .zip(labels)
        .filter(|(_, &y)| spec.is_unsafe(y))
        .map(|(&p, _)| p)
        .collect()
}

/// Smallest grid `lambda` whose inflated risk is at most `alpha`, or the
/// largest grid value when none qualifies.
///
/// The risk is non-increasing in `lambda`, so the qualifying set is a suffix
/// of the grid and is located by bisection.
pub fn crc_select_lambda(
    val_predictions: &[f64],
    val_labels: &[f64],
    spec: &RiskSpec,
    grid: &[f64],
) -> Result<CrcCalibration> {
    spec.validate()?;
    check_grid(grid)?;
    let err = nonconformity(val_predictions, val_labels)?.max();
    let n = val_labels.len();
    let unsafe_preds = failing_predictions(val_predictions, val_labels, spec);
    // n/(n+1) * (count/n) + B/(n+1), folded into one division so that the
    // comparison with alpha is exact at rational boundaries.
    let qualifies = |lambda: f64| {
        let count = loss_count(&unsafe_preds, err, lambda, spec.safety_threshold);
        (count as f64 + spec.loss_bound) / (n as f64 + 1.0) <= spec.alpha
    };
    let first = grid.partition_point(|&l| !qualifies(l));
    let lambda = grid.get(first).copied().unwrap_or(grid[grid.len() - 1]);
    Ok(CrcCalibration {
        lambda,
        err,
        grid: grid.to_vec(),
    })
}

/// `[prediction - lambda * err, prediction + lambda * err]`.
pub fn crc_interval(prediction: f64, calib: &CrcCalibration) -> PredictionInterval {
    let half = calib.half_width();
    PredictionInterval {
        low: prediction - half,
        high: prediction + half,
    }
}

/// Conservative hull of ensemble member intervals.
pub fn ensemble_aggregate(members: &[PredictionInterval]) -> Result<PredictionInterval> {
    let first = members
        .first()
        .ok_or(ConformalError::Empty("ensemble members"))?;
    Ok(members[1..].iter().fold(*first, |acc, m| PredictionInterval {
        low: acc.low.min(m.low),
        high: acc.high.max(m.high),
    }))
}
