//! Triage decisions and the clinical metrics computed from them.
//!
//! A plan is triaged safe (measurement skipped) only when the lower bound of
//! its interval is strictly above the decision threshold. Classes are always
//! defined by the true pass rate against the safety threshold of the
//! [`RiskSpec`]; the decision threshold may differ (retrospective analysis).

use crate::conformal::{PredictionInterval, RiskSpec};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("length mismatch: {left} intervals vs {right} labels")]
    LengthMismatch { left: usize, right: usize },
    #[error("labels contain a single class ({unsafe_count} failing, {safe_count} passing)")]
    SingleClass {
        unsafe_count: usize,
        safe_count: usize,
    },
    #[error("reports disagree on {0}")]
    Incompatible(&'static str),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriageDecision {
    SafeSkipMeasurement,
    NeedsMeasurement,
}

pub fn triage(interval: &PredictionInterval, threshold: f64) -> TriageDecision {
    if interval.low > threshold {
        TriageDecision::SafeSkipMeasurement
    } else {
        TriageDecision::NeedsMeasurement
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub sensitivity: f64,
    pub specificity: f64,
    pub reduction_in_measurement: f64,
    /// `None` for point predictors.
    pub coverage: Option<f64>,
    pub mean_interval_width: Option<f64>,
    pub n_test: usize,
    pub n_unsafe: usize,
    pub n_safe: usize,
    pub threshold_used: f64,
    /// No failing plans: sensitivity reported as 1.
    pub sensitivity_undefined: bool,
    /// No passing plans: specificity reported as 1.
    pub specificity_undefined: bool,
}

#[derive(Debug, Clone, Copy, Default)]
struct Counts {
    unsafe_total: usize,
    safe_total: usize,
    true_unsafe: usize,
    true_safe: usize,
    predicted_safe: usize,
}

fn counts(intervals: &[PredictionInterval], labels: &[f64], threshold: f64, spec: &RiskSpec) -> Counts {
    let mut c = Counts::default();
    for (iv, &y) in intervals.iter().zip(labels) {
        let safe_pred = triage(iv, threshold) == TriageDecision::SafeSkipMeasurement;
        if spec.is_unsafe(y) {
            c.unsafe_total += 1;
            if !safe_pred {
                c.true_unsafe += 1;
            }
        } else {
            c.safe_total += 1;
            if safe_pred {
                c.true_safe += 1;
            }
        }
        if safe_pred {
            c.predicted_safe += 1;
        }
    }
    c
}

fn ratio_or_one(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

fn check_inputs(intervals: &[PredictionInterval], labels: &[f64]) -> Result<()> {
    if intervals.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            left: intervals.len(),
            right: labels.len(),
        });
    }
    if intervals.is_empty() {
        return Err(EvalError::Empty("test set"));
    }
    Ok(())
}

/// Sensitivity, specificity, reduction in measurement, coverage and mean width.
pub fn compute_metrics(
    intervals: &[PredictionInterval],
    labels: &[f64],
    threshold: f64,
    spec: &RiskSpec,
) -> Result<MetricsReport> {
    check_inputs(intervals, labels)?;
    let c = counts(intervals, labels, threshold, spec);
    let n = labels.len();
    let covered = intervals
        .iter()
        .zip(labels)
        .filter(|(iv, &y)| iv.contains(y))
        .count();
    let width = intervals.iter().map(|iv| iv.width()).sum::<f64>() / n as f64;
    Ok(MetricsReport {
        sensitivity: ratio_or_one(c.true_unsafe, c.unsafe_total),
        specificity: ratio_or_one(c.true_safe, c.safe_total),
        reduction_in_measurement: c.predicted_safe as f64 / n as f64,
        coverage: Some(covered as f64 / n as f64),
        mean_interval_width: Some(width),
        n_test: n,
        n_unsafe: c.unsafe_total,
        n_safe: c.safe_total,
        threshold_used: threshold,
        sensitivity_undefined: c.unsafe_total == 0,
        specificity_undefined: c.safe_total == 0,
    })
}

/// Metrics for a point predictor: coverage and width are not applicable.
pub fn compute_point_metrics(
    predictions: &[f64],
    labels: &[f64],
    threshold: f64,
    spec: &RiskSpec,
) -> Result<MetricsReport> {
    let points: Vec<PredictionInterval> = predictions.iter().map(|&p| PredictionInterval::point(p)).collect();
    let mut report = compute_metrics(&points, labels, threshold, spec)?;
    report.coverage = None;
    report.mean_interval_width = None;
    Ok(report)
}

/// Threshold with the highest specificity among those reaching the highest
/// attainable sensitivity; ties go to the smallest threshold. Candidates are
/// the observed lower bounds plus the safety threshold.
pub fn retrospective_threshold(
    intervals: &[PredictionInterval],
    labels: &[f64],
    spec: &RiskSpec,
) -> Result<f64> {
    check_inputs(intervals, labels)?;
    let unsafe_count = labels.iter().filter(|&&y| spec.is_unsafe(y)).count();
    if unsafe_count == 0 || unsafe_count == labels.len() {
        return Err(EvalError::SingleClass {
            unsafe_count,
            safe_count: labels.len() - unsafe_count,
        });
    }
    let mut candidates: Vec<f64> = intervals.iter().map(|iv| iv.low).collect();
    candidates.push(spec.safety_threshold);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let mut best: Option<(usize, usize, f64)> = None;
    for t in candidates {
        let c = counts(intervals, labels, t, spec);
        let better = match best {
            None => true,
            Some((tp, tn, _)) => c.true_unsafe > tp || (c.true_unsafe == tp && c.true_safe > tn),
        };
        if better {
            best = Some((c.true_unsafe, c.true_safe, t));
        }
    }
    Ok(best.expect("candidate set is non-empty").2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub mean: f64,
    /// Sample standard deviation; `None` for a single run.
    pub std: Option<f64>,
}

impl MetricSummary {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() >= 2).then(|| {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        });
        Self { mean, std }
    }

    pub fn cell(&self) -> String {
        match self.std {
            Some(s) => format!("{:.2} ± {:.2}", self.mean, s),
            None => format!("{:.2} ± NA", self.mean),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReport {
    pub runs: usize,
    pub sensitivity: MetricSummary,
    pub specificity: MetricSummary,
    pub reduction_in_measurement: MetricSummary,
    pub coverage: Option<MetricSummary>,
    pub mean_interval_width: Option<MetricSummary>,
}

/// Mean and sample standard deviation of every metric across runs.
pub fn aggregate(reports: &[MetricsReport]) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(EvalError::Empty("reports"));
    }
    let has_intervals = reports[0].coverage.is_some();
    if reports.iter().any(|r| r.coverage.is_some() != has_intervals) {
        return Err(EvalError::Incompatible("interval availability"));
    }
    let summarize = |f: &dyn Fn(&MetricsReport) -> f64| {
        MetricSummary::from_values(&reports.iter().map(f).collect::<Vec<_>>())
    };
    Ok(AggregateReport {
        runs: reports.len(),
        sensitivity: summarize(&|r| r.sensitivity),
        specificity: summarize(&|r| r.specificity),
        reduction_in_measurement: summarize(&|r| r.reduction_in_measurement),
        coverage: has_intervals.then(|| summarize(&|r| r.coverage.unwrap_or(0.0))),
        mean_interval_width: has_intervals.then(|| summarize(&|r| r.mean_interval_width.unwrap_or(0.0))),
    })
}

/// Column headers of the comparison table.
pub const TABLE_COLUMNS: [&str; 6] = [
    "Method",
    "Sensitivity",
    "Specificity",
    "Reduction in Measurement",
    "Coverage",
    "Interval Width",
];

/// Plain-text comparison table, one row per labelled aggregate.
pub fn format_table(title: &str, rows: &[(String, AggregateReport)]) -> String {
    let cells: Vec<[String; 6]> = rows
        .iter()
        .map(|(label, a)| {
            [
                label.clone(),
                a.sensitivity.cell(),
                a.specificity.cell(),
                a.reduction_in_measurement.cell(),
                a.coverage.map_or_else(|| "NA".to_string(), |s| s.cell()),
                a.mean_interval_width.map_or_else(|| "NA".to_string(), |s| s.cell()),
            ]
        })
        .collect();
    let mut widths = TABLE_COLUMNS.map(|h| h.chars().count());
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |out: &mut String, row: &[String]| {
        let padded: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        let _ = writeln!(out, "| {} |", padded.join(" | "));
    };
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    line(&mut out, &TABLE_COLUMNS.map(String::from));
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    let _ = writeln!(out, "|-{}-|", rule.join("-|-"));
    for row in &cells {
        line(&mut out, row);
    }
    out
}
