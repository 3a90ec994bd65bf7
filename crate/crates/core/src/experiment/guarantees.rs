//! Empirical checks of the finite-sample guarantees on synthetic data.
//!
//! A small network is trained once on a synthetic population. Each trial then
//! draws a fresh calibration set and a fresh test set from the same generator,
//! calibrates, and records the test coverage (CP) or triage risk (CRC).

use super::{ExperimentError, Result};
use crate::conformal::{
    conformal_quantile, crc_interval, crc_select_lambda, default_lambda_grid, empirical_risk,
    nonconformity, risk_curve, RiskSpec,
};
use crate::data::{synth_model, SynthConfig, SynthModel};
use crate::mlp::{self, Batch, MlpParams, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt::Write as _;

pub const MIN_TRIALS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuaranteeMethod {
    Cp,
    Crc,
}

impl GuaranteeMethod {
    pub fn key(self) -> &'static str {
        match self {
            GuaranteeMethod::Cp => "cp",
            GuaranteeMethod::Crc => "crc",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuaranteeConfig {
    pub method: GuaranteeMethod,
    pub trials: usize,
    pub n_cal: usize,
    pub n_test: usize,
    pub alpha: f64,
    pub safety_threshold: f64,
    /// Population used to train the fixed model; `seed` also drives trials.
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub lambda_grid: Vec<f64>,
}

impl Default for GuaranteeConfig {
    fn default() -> Self {
        Self {
            method: GuaranteeMethod::Cp,
            trials: 500,
            n_cal: 100,
            n_test: 500,
            alpha: 0.1,
            safety_threshold: 95.0,
            synth: SynthConfig::default(),
            train: TrainConfig {
                hidden: 16,
                epochs: 30,
                ..TrainConfig::default()
            },
            lambda_grid: default_lambda_grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuaranteeSummary {
    pub method: GuaranteeMethod,
    pub trials: usize,
    pub alpha: f64,
    pub n_cal: usize,
    pub n_test: usize,
    /// Mean coverage (CP) or mean test risk (CRC).
    pub mean: f64,
    pub std_error: f64,
    /// Acceptance band for `mean`.
    pub lower: f64,
    pub upper: f64,
    /// Trials whose calibration risk curve increased somewhere (CRC only).
    pub monotonicity_violations: usize,
    pub pass: bool,
    pub per_trial: Vec<f64>,
}

impl GuaranteeSummary {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let quantity = match self.method {
            GuaranteeMethod::Cp => "coverage",
            GuaranteeMethod::Crc => "risk",
        };
        let _ = writeln!(s, "method={}", self.method.key());
        let _ = writeln!(s, "trials={}", self.trials);
        let _ = writeln!(s, "alpha={}", self.alpha);
        let _ = writeln!(s, "n_cal={}", self.n_cal);
        let _ = writeln!(s, "n_test={}", self.n_test);
        let _ = writeln!(s, "mean_{quantity}={:.6}", self.mean);
        let _ = writeln!(s, "std_error={:.6}", self.std_error);
        let _ = writeln!(s, "band=[{:.6}, {:.6}]", self.lower, self.upper);
        if self.method == GuaranteeMethod::Crc {
            let _ = writeln!(s, "monotonicity_violations={}", self.monotonicity_violations);
        }
        let _ = writeln!(s, "result={}", if self.pass { "PASS" } else { "FAIL" });
        s
    }
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (trial as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn fixed_model(cfg: &GuaranteeConfig) -> Result<(SynthModel, MlpParams)> {
    let (generator, data) = synth_model(&cfg.synth)?;
    let x = data.features();
    let y = data.labels();
    let params = mlp::train(Batch::new(&x, &y)?, &cfg.train)?;
    Ok((generator, params))
}

/// Runs the trials and applies the acceptance band.
///
/// CP passes when mean coverage lies within three standard errors of
/// `[1 - alpha, 1 - alpha + 2/(n_cal + 1)]`. CRC passes when mean risk is at
/// most `alpha` plus three standard errors and every risk curve is monotone.
pub fn check_guarantees(cfg: &GuaranteeConfig) -> Result<GuaranteeSummary> {
    if cfg.trials < MIN_TRIALS {
        return Err(ExperimentError::Precondition(format!(
            "at least {MIN_TRIALS} trials are required, got {}",
            cfg.trials
        )));
    }
    if cfg.n_cal == 0 || cfg.n_test == 0 {
        return Err(ExperimentError::Precondition(
            "calibration and test sizes must be positive".into(),
        ));
    }
    let spec = RiskSpec::new(cfg.safety_threshold, cfg.alpha)?;
    let (generator, params) = fixed_model(cfg)?;

    let outcomes: Vec<(f64, bool)> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| -> Result<(f64, bool)> {
            let mut rng = trial_rng(cfg.synth.seed, t);
            let cal = generator.sample(cfg.n_cal, cfg.synth.feature_shift, &mut rng);
            let test = generator.sample(cfg.n_test, cfg.synth.feature_shift, &mut rng);
            let cal_pred = params.predict(&cal.features())?;
            let cal_y = cal.labels();
            let test_pred = params.predict(&test.features())?;
            let test_y = test.labels();
            match cfg.method {
                GuaranteeMethod::Cp => {
                    let w = conformal_quantile(&nonconformity(&cal_pred, &cal_y)?, cfg.alpha)?;
                    let covered = test_pred
                        .iter()
                        .zip(&test_y)
                        .filter(|(p, y)| (*p - *y).abs() <= w)
                        .count();
                    Ok((covered as f64 / cfg.n_test as f64, true))
                }
                GuaranteeMethod::Crc => {
                    let curve = risk_curve(&cal_pred, &cal_y, &spec, &cfg.lambda_grid)?;
                    let monotone = curve.windows(2).all(|w| w[1] <= w[0]);
                    let calib = crc_select_lambda(&cal_pred, &cal_y, &spec, &cfg.lambda_grid)?;
                    let ivs: Vec<_> = test_pred.iter().map(|&p| crc_interval(p, &calib)).collect();
                    Ok((empirical_risk(&ivs, &test_y, &spec)?, monotone))
                }
            }
        })
        .collect::<Result<_>>()?;

    let per_trial: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
    let n = per_trial.len() as f64;
    let mean = per_trial.iter().sum::<f64>() / n;
    let var = per_trial.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    let violations = outcomes.iter().filter(|o| !o.1).count();
    let (lower, upper) = match cfg.method {
        GuaranteeMethod::Cp => (
            1.0 - cfg.alpha - 3.0 * se,
            1.0 - cfg.alpha + 2.0 / (cfg.n_cal as f64 + 1.0) + 3.0 * se,
        ),
        GuaranteeMethod::Crc => (0.0, cfg.alpha + 3.0 * se),
    };
    let pass = mean >= lower && mean <= upper && violations == 0;
    Ok(GuaranteeSummary {
        method: cfg.method,
        trials: cfg.trials,
        alpha: cfg.alpha,
        n_cal: cfg.n_cal,
        n_test: cfg.n_test,
        mean,
        std_error: se,
        lower,
        upper,
        monotonicity_violations: violations,
        pass,
        per_trial,
    })
}
