//! Plan datasets: ingestion, splitting, class balancing and standardization.

mod csv_io;
pub mod synth;
pub mod ttest;

use crate::mlp::Matrix;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use csv_io::{load_csv, read_csv, write_csv, write_csv_to};
pub use synth::{synth_generate, synth_model, SynthConfig, SynthMeta, SynthModel};
pub use ttest::{select_features, welch_t_test, WelchResult};

/// Feature columns of the canonical plan-complexity schema, in schema order.
pub const CANONICAL_FEATURES: [&str; 12] = [
    "PAAJA",
    "PEM",
    "Pgantryvel",
    "PI",
    "PmaxAP_v",
    "PMAXJ",
    "PmaxnRegs",
    "PMCS",
    "PminAP_va",
    "PMSAS2",
    "PMUCP",
    "PuniaccMLC",
];

/// Label column name.
pub const LABEL_COLUMN: &str = "gpr";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("record has {actual} features, schema has {expected}")]
    Schema { expected: usize, actual: usize },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("dataset has a single class at threshold {threshold}: {unsafe_count} failing, {safe_count} passing")]
    SingleClass {
        threshold: f64,
        unsafe_count: usize,
        safe_count: usize,
    },
    #[error("degenerate variance: both samples are constant")]
    DegenerateVariance,
    #[error("sample too small: need at least {needed}, got {actual}")]
    SampleTooSmall { needed: usize, actual: usize },
    #[error("invalid synthetic config: {0}")]
    InvalidSynth(String),
    #[error("bias search did not reach unsafe rate {target} after {iterations} iterations (last {last})")]
    BisectionFailed {
        target: f64,
        last: f64,
        iterations: usize,
    },
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("empty dataset")]
    Empty,
}

pub type Result<T> = std::result::Result<T, DataError>;

/// One treatment plan.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanRecord {
    pub features: Vec<f64>,
    /// Gamma passing rate in `[0, 100]`.
    pub gpr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Csv,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub records: Vec<PlanRecord>,
    pub provenance: Provenance,
    /// Generator parameters when `provenance` is synthetic.
    pub synth_meta: Option<SynthMeta>,
}

impl Dataset {
    pub fn new(
        feature_names: Vec<String>,
        records: Vec<PlanRecord>,
        provenance: Provenance,
    ) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            if r.features.len() != feature_names.len() {
                return Err(DataError::Schema {
                    expected: feature_names.len(),
                    actual: r.features.len(),
                });
            }
            if !(0.0..=100.0).contains(&r.gpr) {
                return Err(DataError::Row {
                    row: i + 1,
                    message: format!("gpr {} outside [0, 100]", r.gpr),
                });
            }
            if r.features.iter().any(|v| !v.is_finite()) {
                return Err(DataError::Row {
                    row: i + 1,
                    message: "non-finite feature".into(),
                });
            }
        }
        Ok(Self {
            feature_names,
            records,
            provenance,
            synth_meta: None,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.gpr).collect()
    }

    pub fn features(&self) -> Matrix {
        let mut values = Vec::with_capacity(self.len() * self.dim());
        for r in &self.records {
            values.extend_from_slice(&r.features);
        }
        Matrix::new(self.len(), self.dim(), values).expect("records validated on construction")
    }

    /// Values of one feature column.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.features[j]).collect()
    }

    fn with_records(&self, records: Vec<PlanRecord>) -> Self {
        Self {
            feature_names: self.feature_names.clone(),
            records,
            provenance: self.provenance,
            synth_meta: self.synth_meta.clone(),
        }
    }

    /// Keeps only the named columns, in the given order.
    pub fn project(&self, names: &[String]) -> Result<Self> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.feature_names
                    .iter()
                    .position(|f| f == n)
                    .ok_or_else(|| DataError::UnknownFeature(n.clone()))
            })
            .collect::<Result<_>>()?;
        let records = self
            .records
            .iter()
            .map(|r| PlanRecord {
                features: idx.iter().map(|&j| r.features[j]).collect(),
                gpr: r.gpr,
            })
            .collect();
        Ok(Self {
            feature_names: names.to_vec(),
            ..self.with_records(records)
        })
    }

    /// `(failing, passing)` counts at `threshold`.
    pub fn class_counts(&self, threshold: f64) -> (usize, usize) {
        let unsafe_count = self.records.iter().filter(|r| r.gpr < threshold).count();
        (unsafe_count, self.len() - unsafe_count)
    }

    pub fn concat(&self, other: &Dataset) -> Result<Self> {
        if self.feature_names != other.feature_names {
            return Err(DataError::Schema {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        let mut records = self.records.clone();
        records.extend(other.records.iter().cloned());
        Ok(self.with_records(records))
    }
}

/// Train / validation / test fractions and the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.6,
            val_frac: 0.2,
            test_frac: 0.2,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_frac, self.val_frac, self.test_frac];
        if fr.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
            return Err(DataError::InvalidSplit(format!(
                "fractions must be positive, got {fr:?}"
            )));
        }
        let sum: f64 = fr.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DataError::InvalidSplit(format!(
                "fractions must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }

    /// Partition sizes for `n` records. Train and validation sizes are rounded,
    /// test takes the remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let n_train = ((n as f64) * self.train_frac).round() as usize;
        let n_val = (((n as f64) * self.val_frac).round() as usize).min(n - n_train.min(n));
        let n_train = n_train.min(n);
        (n_train, n_val, n - n_train - n_val)
    }
}

/// Seeded shuffle followed by a partition by fractions.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    spec.validate()?;
    let (n_train, n_val, n_test) = spec.sizes(dataset.len());
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(DataError::InvalidSplit(format!(
            "{} records give an empty partition ({n_train}/{n_val}/{n_test})",
            dataset.len()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let take = |idx: &[usize]| dataset.with_records(idx.iter().map(|&i| dataset.records[i].clone()).collect());
    Ok((
        take(&order[..n_train]),
        take(&order[n_train..n_train + n_val]),
        take(&order[n_train + n_val..]),
    ))
}

/// Two-way split used when the test set comes from another population.
pub fn split_train_val(dataset: &Dataset, train_share: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_share > 0.0 && train_share < 1.0) {
        return Err(DataError::InvalidSplit(format!(
            "train share must lie in (0, 1), got {train_share}"
        )));
    }
    let n_train = ((dataset.len() as f64) * train_share).round() as usize;
    if n_train == 0 || n_train >= dataset.len() {
        return Err(DataError::InvalidSplit(format!(
            "{} records give an empty partition",
            dataset.len()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |idx: &[usize]| dataset.with_records(idx.iter().map(|&i| dataset.records[i].clone()).collect());
    Ok((take(&order[..n_train]), take(&order[n_train..])))
}

/// Oversamples the minority class with replacement until both classes
/// (failing: `gpr < safety_threshold`) have equal counts. Only ever applied
/// to training data.
pub fn balance_training(train: &Dataset, safety_threshold: f64, seed: u64) -> Result<Dataset> {
    let (unsafe_recs, safe_recs): (Vec<&PlanRecord>, Vec<&PlanRecord>) =
        train.records.iter().partition(|r| r.gpr < safety_threshold);
    if unsafe_recs.is_empty() || safe_recs.is_empty() {
        return Err(DataError::SingleClass {
            threshold: safety_threshold,
            unsafe_count: unsafe_recs.len(),
            safe_count: safe_recs.len(),
        });
    }
    let (minority, deficit) = if unsafe_recs.len() < safe_recs.len() {
        (&unsafe_recs, safe_recs.len() - unsafe_recs.len())
    } else {
        (&safe_recs, unsafe_recs.len() - safe_recs.len())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = train.records.clone();
    for _ in 0..deficit {
        let pick = minority.choose(&mut rng).expect("minority class is non-empty");
        records.push((*pick).clone());
    }
    Ok(train.with_records(records))
}

/// Per-feature location and scale fitted on the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub feature_names: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Zero-variance features removed from the output.
    pub dropped: Vec<String>,
    /// Input column index of every retained feature.
    retained: Vec<usize>,
}

impl Standardizer {
    /// Fits on `train`; constant columns are dropped and reported.
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(DataError::Empty);
        }
        let n = train.len() as f64;
        let mut s = Standardizer {
            feature_names: Vec::new(),
            means: Vec::new(),
            stds: Vec::new(),
            dropped: Vec::new(),
            retained: Vec::new(),
        };
        for (j, name) in train.feature_names.iter().enumerate() {
            let col = train.column(j);
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd > 0.0 && sd.is_finite() {
                s.feature_names.push(name.clone());
                s.means.push(mean);
                s.stds.push(sd);
                s.retained.push(j);
            } else {
                log_warning(&format!("dropping zero-variance feature `{name}`"));
                s.dropped.push(name.clone());
            }
        }
        Ok(s)
    }

    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset> {
        self.map(dataset, |v, m, s| (v - m) / s)
    }

    /// Maps standardized features back to the original scale.
    pub fn inverse(&self, dataset: &Dataset) -> Result<Dataset> {
        if dataset.feature_names != self.feature_names {
            return Err(DataError::Schema {
                expected: self.feature_names.len(),
                actual: dataset.dim(),
            });
        }
        let records = dataset
            .records
            .iter()
            .map(|r| PlanRecord {
                features: r
                    .features
                    .iter()
                    .zip(self.means.iter().zip(&self.stds))
                    .map(|(v, (m, s))| v * s + m)
                    .collect(),
                gpr: r.gpr,
            })
            .collect();
        Ok(dataset.with_records(records))
    }

    fn map(&self, dataset: &Dataset, f: impl Fn(f64, f64, f64) -> f64) -> Result<Dataset> {
        for &j in &self.retained {
            if j >= dataset.dim() {
                return Err(DataError::Schema {
                    expected: self.retained.len() + self.dropped.len(),
                    actual: dataset.dim(),
                });
            }
        }
        let records = dataset
            .records
            .iter()
            .map(|r| PlanRecord {
                features: self
                    .retained
                    .iter()
                    .enumerate()
                    .map(|(k, &j)| f(r.features[j], self.means[k], self.stds[k]))
                    .collect(),
                gpr: r.gpr,
            })
            .collect();
        Ok(Dataset {
            feature_names: self.feature_names.clone(),
            ..dataset.with_records(records)
        })
    }
}

pub fn fit_standardizer(train: &Dataset) -> Result<Standardizer> {
    Standardizer::fit(train)
}

pub fn apply(standardizer: &Standardizer, dataset: &Dataset) -> Result<Dataset> {
    standardizer.apply(dataset)
}

fn log_warning(msg: &str) {
    eprintln!("warning: {msg}");
}
