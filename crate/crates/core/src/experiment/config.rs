use super::{ExperimentError, Result};
use crate::conformal::{self, RiskSpec};
use crate::data::{SplitSpec, SynthConfig};
use crate::mlp::{Activation, Objective, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Base,
    Cp,
    Cqr,
    Crc,
    Ct,
    TaCrc,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Base,
        Method::Cp,
        Method::Cqr,
        Method::Crc,
        Method::Ct,
        Method::TaCrc,
    ];

    /// Identifier used in file names and configs.
    pub fn key(self) -> &'static str {
        match self {
            Method::Base => "base",
            Method::Cp => "cp",
            Method::Cqr => "cqr",
            Method::Crc => "crc",
            Method::Ct => "ct",
            Method::TaCrc => "ta_crc",
        }
    }

    /// Row label in comparison tables.
    pub fn label(self) -> &'static str {
        match self {
            Method::Base => "Base model",
            Method::Cp => "CP",
            Method::Cqr => "CQR",
            Method::Crc => "CRC",
            Method::Ct => "CT",
            Method::TaCrc => "TA-CRC",
        }
    }

    pub fn from_key(key: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.key() == key)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionScope {
    /// Run the t-tests on each repeat's training split.
    Train,
    /// Run them once on the whole dataset before splitting.
    Pooled,
}

/// Every knob of an experiment run. Network defaults: 100 sigmoid hidden
/// units, 1500 epochs, learning rate 0.01; alpha 0.1, CQR percentiles 5/95,
/// safety threshold 95.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub alpha: f64,
    pub safety_threshold: f64,
    pub methods: Vec<Method>,
    pub ensemble_size: usize,
    pub repeats: usize,
    pub master_seed: u64,

    pub hidden: usize,
    pub activation: Activation,
    pub epochs: usize,
    pub learning_rate: f64,
    pub minibatch_size: usize,
    pub init_scale: Option<f64>,

    pub cqr_low_percentile: f64,
    pub cqr_high_percentile: f64,
    pub lambda_max: f64,
    pub lambda_points: usize,
    pub warmup_fraction: f64,
    pub recalibrate: bool,

    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub balance_training: bool,
    pub feature_selection: bool,
    pub feature_p_threshold: f64,
    pub feature_selection_scope: SelectionScope,
    /// Grid-search the network hyperparameters on the first repeat.
    pub tune: bool,

    /// Plan CSV; synthetic data is generated when absent.
    pub data_csv: Option<PathBuf>,
    /// Separate test population (distribution-shift mode).
    pub test_csv: Option<PathBuf>,
    pub synth_n: usize,
    pub synth_unsafe_rate: f64,
    pub synth_noise_sd: f64,
    pub synth_seed: u64,
    pub synth_dim: usize,
    /// Draw the test set from a second synthetic population.
    pub shift_test: bool,
    pub shift_test_n: usize,
    pub shift_feature_mean: f64,

    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            safety_threshold: 95.0,
            methods: Method::ALL.to_vec(),
            ensemble_size: 5,
            repeats: 3,
            master_seed: 0,
            hidden: 100,
            activation: Activation::Sigmoid,
            epochs: 1500,
            learning_rate: 0.01,
            minibatch_size: 32,
            init_scale: None,
            cqr_low_percentile: 5.0,
            cqr_high_percentile: 95.0,
            lambda_max: 2.0,
            lambda_points: 201,
            warmup_fraction: 0.1,
            recalibrate: false,
            train_frac: 0.6,
            val_frac: 0.2,
            test_frac: 0.2,
            balance_training: true,
            feature_selection: false,
            feature_p_threshold: 0.05,
            feature_selection_scope: SelectionScope::Train,
            tune: false,
            data_csv: None,
            test_csv: None,
            synth_n: 2000,
            synth_unsafe_rate: 0.05,
            synth_noise_sd: 1.0,
            synth_seed: 0,
            synth_dim: 12,
            shift_test: false,
            shift_test_n: 1000,
            shift_feature_mean: 0.5,
            output_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Loads `path` (or the defaults) and applies `key=value` overrides.
    pub fn load_with_overrides(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let base = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| ExperimentError::io(p, e))?,
            None => Self::default().to_toml()?,
        };
        let mut table: toml::Table = base
            .parse()
            .map_err(|e: toml::de::Error| ExperimentError::Config(e.to_string()))?;
        for kv in overrides {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| ExperimentError::Config(format!("override `{kv}` is not key=value")))?;
            let key = key.trim();
            let value = value.trim();
            let parsed: toml::Value = format!("v = {value}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(value.to_string()));
            table.insert(key.to_string(), parsed);
        }
        let text = toml::to_string(&table).map_err(|e| ExperimentError::Config(e.to_string()))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        self.risk_spec()?;
        if self.ensemble_size == 0 {
            return bad("ensemble_size must be at least 1".into());
        }
        if self.repeats == 0 {
            return bad("repeats must be at least 1".into());
        }
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        if !(self.cqr_low_percentile > 0.0 && self.cqr_low_percentile < 50.0)
            || (self.cqr_low_percentile + self.cqr_high_percentile - 100.0).abs() > 1e-9
        {
            return bad(format!(
                "CQR percentiles must be symmetric around 50, got ({}, {})",
                self.cqr_low_percentile, self.cqr_high_percentile
            ));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad(format!("warmup_fraction must lie in [0, 1), got {}", self.warmup_fraction));
        }
        if !(self.feature_p_threshold > 0.0 && self.feature_p_threshold < 1.0) {
            return bad(format!("feature_p_threshold must lie in (0, 1), got {}", self.feature_p_threshold));
        }
        if self.test_csv.is_some() && self.data_csv.is_none() {
            return bad("test_csv requires data_csv".into());
        }
        self.train_config(0).validate()?;
        self.split_spec(0).validate()?;
        self.lambda_grid()?;
        if self.data_csv.is_none() {
            self.synth_config().validate()?;
        }
        Ok(())
    }

    pub fn risk_spec(&self) -> Result<RiskSpec> {
        Ok(RiskSpec::new(self.safety_threshold, self.alpha)?)
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            hidden: self.hidden,
            activation: self.activation,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            minibatch_size: self.minibatch_size,
            seed,
            objective: Objective::Mse,
            init_scale: self.init_scale,
        }
    }

    /// Miscoverage implied by the CQR percentile pair.
    pub fn cqr_alpha(&self) -> f64 {
        2.0 * self.cqr_low_percentile / 100.0
    }

    pub fn lambda_grid(&self) -> Result<Vec<f64>> {
        Ok(conformal::lambda_grid(self.lambda_max, self.lambda_points)?)
    }

    pub fn warmup_epochs(&self) -> usize {
        (self.epochs as f64 * self.warmup_fraction).floor() as usize
    }

    pub fn split_spec(&self, seed: u64) -> SplitSpec {
        SplitSpec {
            train_frac: self.train_frac,
            val_frac: self.val_frac,
            test_frac: self.test_frac,
            seed,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            n: self.synth_n,
            unsafe_rate: self.synth_unsafe_rate,
            noise_sd: self.synth_noise_sd,
            seed: self.synth_seed,
            dim: self.synth_dim,
            feature_shift: 0.0,
        }
    }

    pub fn repeat_seed(&self, repeat: usize) -> u64 {
        self.master_seed.wrapping_mul(1000).wrapping_add(repeat as u64)
    }

    pub fn member_seed(&self, member: usize) -> u64 {
        self.master_seed.wrapping_add(member as u64)
    }

    pub fn shift_mode(&self) -> bool {
        self.test_csv.is_some() || (self.data_csv.is_none() && self.shift_test)
    }
}
