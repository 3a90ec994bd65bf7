//! Interval prediction and risk-controlled triage for treatment-plan
//! pass rates.
//!
//! - [`mlp`]: the two-layer regression network and its objectives.
//! - [`conformal`]: split conformal prediction, CQR, conformal risk control
//!   and ensemble aggregation.
//! - [`training_aware`]: conformal training and training-aware risk control.
//! - [`data`]: CSV ingestion, splitting, balancing, standardization, Welch
//!   feature selection and a synthetic generator.
//! - [`evaluation`]: triage metrics, threshold selection and tables.
//! - [`experiment`]: the end-to-end comparison, guarantee checks and reports.

// `!(x >= 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conformal;
pub mod data;
pub mod evaluation;
pub mod experiment;
pub mod mlp;
pub mod training_aware;
