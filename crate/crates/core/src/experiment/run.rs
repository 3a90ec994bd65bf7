//! The comparison pipeline behind `run`.
//!
//! For each repeat: split, optional feature selection, standardization,
//! training-set balancing, then an ensemble of independently seeded members.
//! Each member produces test intervals for every requested method; member
//! intervals are merged with [`ensemble_aggregate`] and scored at the
//! prospective and retrospective thresholds.

use super::config::{ExperimentConfig, Method, SelectionScope};
use super::{ExperimentError, Result};
use crate::conformal::{
    self, crc_interval, crc_select_lambda, cqr_calibrate, cqr_interval, ensemble_aggregate,
    PredictionInterval, RiskSpec,
};
use crate::data::{
    balance_training, fit_standardizer, load_csv, select_features, split, split_train_val,
    synth_generate, synth_model, Dataset,
};
use crate::evaluation::{
    aggregate, compute_metrics, compute_point_metrics, format_table, retrospective_threshold,
    AggregateReport, EvalError, MetricsReport,
};
use crate::mlp::{self, Activation, Batch, Matrix, Objective, TrainConfig};
use crate::training_aware::{self, LoopConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

#[derive(Debug, Clone, PartialEq)]
pub struct StageTiming {
    pub repeat: usize,
    pub stage: String,
    pub seconds: f64,
}

/// Per-member calibration details.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MemberDiagnostics {
    pub member: usize,
    pub seed: u64,
    pub cp_width: Option<f64>,
    pub crc_lambda: Option<f64>,
    pub crc_err: Option<f64>,
    pub cqr_width_low: Option<f64>,
    pub cqr_width_high: Option<f64>,
    pub cqr_crossings: usize,
    pub ct_width: Option<f64>,
    pub ta_crc_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutcome {
    pub method: Method,
    /// Ensemble test intervals (point intervals for the base model).
    pub intervals: Vec<PredictionInterval>,
    pub prospective: MetricsReport,
    /// `None` when the test split holds a single class.
    pub retrospective: Option<MetricsReport>,
    pub retrospective_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepeatOutcome {
    pub repeat: usize,
    pub seed: u64,
    pub member_seeds: Vec<u64>,
    pub features: Vec<String>,
    pub test_labels: Vec<f64>,
    pub methods: Vec<MethodOutcome>,
    pub members: Vec<MemberDiagnostics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepeatFailure {
    pub repeat: usize,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct RunArtifact {
    /// Effective configuration (after optional tuning).
    pub config: ExperimentConfig,
    pub repeats: Vec<RepeatOutcome>,
    pub failures: Vec<RepeatFailure>,
    pub timings: Vec<StageTiming>,
}

impl RunArtifact {
    pub fn methods(&self) -> Vec<Method> {
        requested_methods(&self.config)
    }

    pub fn outcomes(&self, method: Method) -> impl Iterator<Item = &MethodOutcome> {
        self.repeats
            .iter()
            .flat_map(move |r| r.methods.iter().filter(move |m| m.method == method))
    }

    pub fn prospective_reports(&self, method: Method) -> Vec<MetricsReport> {
        self.outcomes(method).map(|o| o.prospective.clone()).collect()
    }

    pub fn retrospective_reports(&self, method: Method) -> Vec<MetricsReport> {
        self.outcomes(method).filter_map(|o| o.retrospective.clone()).collect()
    }

    pub fn prospective_table(&self) -> Result<String> {
        let rows = self
            .methods()
            .into_iter()
            .map(|m| (m, self.prospective_reports(m)))
            .collect::<Vec<_>>();
        prospective_table_text(self.config.safety_threshold, &label_rows(&rows, None)?)
    }

    pub fn retrospective_table(&self) -> Result<String> {
        let rows = self
            .methods()
            .into_iter()
            .map(|m| (m, self.retrospective_reports(m)))
            .collect::<Vec<_>>();
        retrospective_table_text(&label_rows(&rows, None)?)
    }
}

pub(crate) fn label_rows(
    rows: &[(Method, Vec<MetricsReport>)],
    suffix: Option<&str>,
) -> Result<Vec<(String, AggregateReport)>> {
    rows.iter()
        .filter(|(_, reports)| !reports.is_empty())
        .map(|(m, reports)| {
            let label = match suffix {
                Some(s) => format!("{} [{s}]", m.label()),
                None => m.label().to_string(),
            };
            Ok((label, aggregate(reports)?))
        })
        .collect()
}

pub(crate) fn prospective_table_text(threshold: f64, rows: &[(String, AggregateReport)]) -> Result<String> {
    Ok(format_table(&format!("Prospective threshold ({threshold})"), rows))
}

pub(crate) fn retrospective_table_text(rows: &[(String, AggregateReport)]) -> Result<String> {
    Ok(format_table("Retrospective threshold", rows))
}

/// Methods in canonical order, without duplicates.
fn requested_methods(cfg: &ExperimentConfig) -> Vec<Method> {
    Method::ALL
        .into_iter()
        .filter(|m| cfg.methods.contains(m))
        .collect()
}

enum Source {
    Pooled(Dataset),
    Shifted { pool: Dataset, test: Dataset },
}

impl Source {
    fn selection_base(&self) -> &Dataset {
        match self {
            Source::Pooled(d) => d,
            Source::Shifted { pool, .. } => pool,
        }
    }
}

fn load_source(cfg: &ExperimentConfig) -> Result<Source> {
    match (&cfg.data_csv, &cfg.test_csv) {
        (Some(train), Some(test)) => {
            let pool = load_csv(train)?;
            let test = load_csv(test)?.project(&pool.feature_names)?;
            Ok(Source::Shifted { pool, test })
        }
        (Some(path), None) => Ok(Source::Pooled(load_csv(path)?)),
        (None, _) if cfg.shift_test => {
            let (model, pool) = synth_model(&cfg.synth_config())?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.synth_seed.wrapping_add(1));
            let test = model.sample(cfg.shift_test_n, cfg.shift_feature_mean, &mut rng);
            Ok(Source::Shifted { pool, test })
        }
        (None, _) => Ok(Source::Pooled(synth_generate(&cfg.synth_config())?)),
    }
}

struct Owned {
    features: Matrix,
    labels: Vec<f64>,
}

impl Owned {
    fn from_dataset(d: &Dataset) -> Self {
        Self {
            features: d.features(),
            labels: d.labels(),
        }
    }

    fn batch(&self) -> Batch<'_> {
        Batch {
            features: &self.features,
            labels: &self.labels,
        }
    }
}

struct Prepared {
    train: Owned,
    val: Owned,
    test: Owned,
    feature_names: Vec<String>,
}

fn prepare(
    cfg: &ExperimentConfig,
    source: &Source,
    pooled_selection: Option<&[String]>,
    seed: u64,
) -> Result<Prepared> {
    let (mut train, mut val, mut test) = match source {
        Source::Pooled(d) => split(d, &cfg.split_spec(seed))?,
        Source::Shifted { pool, test } => {
            let share = cfg.train_frac / (cfg.train_frac + cfg.val_frac);
            let (tr, va) = split_train_val(pool, share, seed)?;
            (tr, va, test.clone())
        }
    };
    if cfg.feature_selection {
        let names = match pooled_selection {
            Some(names) => names.to_vec(),
            None => select_features(&train, cfg.feature_p_threshold, cfg.safety_threshold)?,
        };
        if names.is_empty() {
            return Err(ExperimentError::Precondition(
                "feature selection retained no features".into(),
            ));
        }
        train = train.project(&names)?;
        val = val.project(&names)?;
        test = test.project(&names)?;
    }
    let standardizer = fit_standardizer(&train)?;
    if standardizer.feature_names.is_empty() {
        return Err(ExperimentError::Precondition(
            "every feature is constant on the training split".into(),
        ));
    }
    let mut train = standardizer.apply(&train)?;
    let val = standardizer.apply(&val)?;
    let test = standardizer.apply(&test)?;
    if cfg.balance_training {
        train = balance_training(&train, cfg.safety_threshold, seed)?;
    }
    Ok(Prepared {
        feature_names: train.feature_names.clone(),
        train: Owned::from_dataset(&train),
        val: Owned::from_dataset(&val),
        test: Owned::from_dataset(&test),
    })
}

/// Test-set output of one ensemble member.
struct MemberOutput {
    base_predictions: Option<Vec<f64>>,
    intervals: BTreeMap<Method, Vec<PredictionInterval>>,
    diagnostics: MemberDiagnostics,
    timings: Vec<(String, f64)>,
}

fn timed<T>(timings: &mut Vec<(String, f64)>, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f()?;
    timings.push((stage.to_string(), start.elapsed().as_secs_f64()));
    Ok(out)
}

fn symmetric(preds: &[f64], half: f64) -> Vec<PredictionInterval> {
    preds
        .iter()
        .map(|&p| PredictionInterval {
            low: p - half,
            high: p + half,
        })
        .collect()
}

fn run_member(
    cfg: &ExperimentConfig,
    data: &Prepared,
    methods: &[Method],
    member: usize,
) -> Result<MemberOutput> {
    let seed = cfg.member_seed(member);
    let spec = cfg.risk_spec()?;
    let grid = cfg.lambda_grid()?;
    let train_cfg = cfg.train_config(seed);
    let mut timings = Vec::new();
    let mut diag = MemberDiagnostics {
        member,
        seed,
        ..MemberDiagnostics::default()
    };
    let mut intervals = BTreeMap::new();
    let mut base_predictions = None;
    let wants = |m: Method| methods.contains(&m);

    if wants(Method::Base) || wants(Method::Cp) || wants(Method::Crc) {
        let params = timed(&mut timings, "train_base", || {
            Ok(mlp::train(data.train.batch(), &train_cfg)?)
        })?;
        let val_pred = params.predict(&data.val.features)?;
        let test_pred = params.predict(&data.test.features)?;
        if wants(Method::Cp) {
            let scores = conformal::nonconformity(&val_pred, &data.val.labels)?;
            let width = conformal::conformal_quantile(&scores, spec.alpha)?;
            diag.cp_width = Some(width);
            intervals.insert(Method::Cp, symmetric(&test_pred, width));
        }
        if wants(Method::Crc) {
            let calib = crc_select_lambda(&val_pred, &data.val.labels, &spec, &grid)?;
            diag.crc_lambda = Some(calib.lambda);
            diag.crc_err = Some(calib.err);
            intervals.insert(
                Method::Crc,
                test_pred.iter().map(|&p| crc_interval(p, &calib)).collect(),
            );
        }
        if wants(Method::Base) {
            base_predictions = Some(test_pred);
        }
    }

    if wants(Method::Cqr) {
        let (low, high) = timed(&mut timings, "train_cqr", || {
            Ok(mlp::train_quantile_pair(data.train.batch(), &train_cfg, cfg.cqr_alpha())?)
        })?;
        let cal = cqr_calibrate(
            &low.predict(&data.val.features)?,
            &high.predict(&data.val.features)?,
            &data.val.labels,
            spec.alpha,
        )?;
        diag.cqr_width_low = Some(cal.width_low);
        diag.cqr_width_high = Some(cal.width_high);
        let test_low = low.predict(&data.test.features)?;
        let test_high = high.predict(&data.test.features)?;
        let mut ivs = Vec::with_capacity(test_low.len());
        for (&lo, &hi) in test_low.iter().zip(&test_high) {
            let c = cqr_interval(lo, hi, cal.width_low, cal.width_high)?;
            diag.cqr_crossings += usize::from(c.crossed);
            ivs.push(c.interval);
        }
        intervals.insert(Method::Cqr, ivs);
    }

    let loop_cfg = LoopConfig {
        base: train_cfg.clone(),
        spec,
        lambda_grid: grid.clone(),
        warmup_epochs: cfg.warmup_epochs(),
        recalibrate: cfg.recalibrate,
    };
    if wants(Method::Ct) {
        let model = timed(&mut timings, "train_ct", || {
            Ok(training_aware::conformal_train(data.train.batch(), data.val.batch(), &loop_cfg)?)
        })?;
        diag.ct_width = Some(model.one_sided_width);
        intervals.insert(
            Method::Ct,
            training_aware::predict_with_fixed_interval(&model, &data.test.features)?,
        );
    }
    if wants(Method::TaCrc) {
        let model = timed(&mut timings, "train_ta_crc", || {
            Ok(training_aware::crc_aware_train(data.train.batch(), data.val.batch(), &loop_cfg)?)
        })?;
        diag.ta_crc_width = Some(model.one_sided_width);
        intervals.insert(
            Method::TaCrc,
            training_aware::predict_with_fixed_interval(&model, &data.test.features)?,
        );
    }

    Ok(MemberOutput {
        base_predictions,
        intervals,
        diagnostics: diag,
        timings,
    })
}

fn score(
    method: Method,
    intervals: Vec<PredictionInterval>,
    labels: &[f64],
    spec: &RiskSpec,
) -> Result<MethodOutcome> {
    let metrics = |t: f64| -> Result<MetricsReport> {
        Ok(if method == Method::Base {
            let preds: Vec<f64> = intervals.iter().map(|iv| iv.low).collect();
            compute_point_metrics(&preds, labels, t, spec)?
        } else {
            compute_metrics(&intervals, labels, t, spec)?
        })
    };
    let prospective = metrics(spec.safety_threshold)?;
    let (retrospective, retrospective_threshold) = match retrospective_threshold(&intervals, labels, spec) {
        Ok(t) => (Some(metrics(t)?), Some(t)),
        Err(EvalError::SingleClass { .. }) => (None, None),
        Err(e) => return Err(e.into()),
    };
    Ok(MethodOutcome {
        method,
        intervals,
        prospective,
        retrospective,
        retrospective_threshold,
    })
}

fn run_repeat(
    cfg: &ExperimentConfig,
    source: &Source,
    pooled_selection: Option<&[String]>,
    repeat: usize,
) -> Result<(RepeatOutcome, Vec<StageTiming>)> {
    let seed = cfg.repeat_seed(repeat);
    let spec = cfg.risk_spec()?;
    let methods = requested_methods(cfg);
    let start = Instant::now();
    let data = prepare(cfg, source, pooled_selection, seed)?;
    let mut timings = vec![StageTiming {
        repeat,
        stage: "prepare".into(),
        seconds: start.elapsed().as_secs_f64(),
    }];

    let members: Vec<MemberOutput> = (0..cfg.ensemble_size)
        .into_par_iter()
        .map(|m| run_member(cfg, &data, &methods, m))
        .collect::<Result<_>>()?;

    let mut stage_totals: BTreeMap<String, f64> = BTreeMap::new();
    for m in &members {
        for (stage, secs) in &m.timings {
            *stage_totals.entry(stage.clone()).or_default() += secs;
        }
    }
    timings.extend(stage_totals.into_iter().map(|(stage, seconds)| StageTiming {
        repeat,
        stage,
        seconds,
    }));

    let n_test = data.test.labels.len();
    let mut outcomes = Vec::with_capacity(methods.len());
    for &method in &methods {
        let merged: Vec<PredictionInterval> = if method == Method::Base {
            (0..n_test)
                .map(|i| {
                    let sum: f64 = members
                        .iter()
                        .map(|m| m.base_predictions.as_ref().expect("base trained")[i])
                        .sum();
                    PredictionInterval::point(sum / members.len() as f64)
                })
                .collect()
        } else {
            (0..n_test)
                .map(|i| {
                    let per_member: Vec<PredictionInterval> =
                        members.iter().map(|m| m.intervals[&method][i]).collect();
                    ensemble_aggregate(&per_member)
                })
                .collect::<std::result::Result<_, _>>()?
        };
        outcomes.push(score(method, merged, &data.test.labels, &spec)?);
    }

    Ok((
        RepeatOutcome {
            repeat,
            seed,
            member_seeds: (0..cfg.ensemble_size).map(|m| cfg.member_seed(m)).collect(),
            features: data.feature_names.clone(),
            test_labels: data.test.labels.clone(),
            methods: outcomes,
            members: members.into_iter().map(|m| m.diagnostics).collect(),
        },
        timings,
    ))
}

/// Hyperparameter grid for the optional tuner.
#[derive(Debug, Clone, PartialEq)]
pub struct TuningGrid {
    pub hidden: Vec<usize>,
    pub activation: Vec<Activation>,
    pub epochs: Vec<usize>,
    pub learning_rate: Vec<f64>,
}

impl Default for TuningGrid {
    fn default() -> Self {
        Self {
            hidden: vec![50, 100, 200],
            activation: vec![Activation::Relu, Activation::Sigmoid],
            epochs: vec![500, 1000, 1500],
            learning_rate: vec![0.1, 0.01, 0.001],
        }
    }
}

/// Exhaustive grid search minimising validation MSE. Diverging candidates
/// are skipped; ties keep the earlier candidate.
pub fn tune_hyperparameters(
    train: Batch<'_>,
    val: Batch<'_>,
    base: &TrainConfig,
    grid: &TuningGrid,
) -> Result<TrainConfig> {
    let mut candidates = Vec::new();
    for &hidden in &grid.hidden {
        for &activation in &grid.activation {
            for &epochs in &grid.epochs {
                for &learning_rate in &grid.learning_rate {
                    candidates.push(TrainConfig {
                        hidden,
                        activation,
                        epochs,
                        learning_rate,
                        objective: Objective::Mse,
                        ..base.clone()
                    });
                }
            }
        }
    }
    let scored: Vec<Option<f64>> = candidates
        .par_iter()
        .map(|c| {
            let params = mlp::train(train, c).ok()?;
            let mse = mlp::loss_value(&params, val, Objective::Mse).ok()?;
            mse.is_finite().then_some(mse)
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scored.into_iter().enumerate() {
        if let Some(mse) = s {
            if best.is_none_or(|(_, b)| mse < b) {
                best = Some((i, mse));
            }
        }
    }
    best.map(|(i, _)| candidates[i].clone()).ok_or_else(|| {
        ExperimentError::Precondition("every tuning candidate diverged".into())
    })
}

/// Runs every repeat. A failing repeat is recorded and the others continue.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunArtifact> {
    config.validate()?;
    let source = load_source(config)?;
    let pooled_selection = match (config.feature_selection, config.feature_selection_scope) {
        (true, SelectionScope::Pooled) => Some(select_features(
            source.selection_base(),
            config.feature_p_threshold,
            config.safety_threshold,
        )?),
        _ => None,
    };
    let mut cfg = config.clone();
    if cfg.tune {
        let data = prepare(&cfg, &source, pooled_selection.as_deref(), cfg.repeat_seed(0))?;
        let tuned = tune_hyperparameters(
            data.train.batch(),
            data.val.batch(),
            &cfg.train_config(cfg.member_seed(0)),
            &TuningGrid::default(),
        )?;
        cfg.hidden = tuned.hidden;
        cfg.activation = tuned.activation;
        cfg.epochs = tuned.epochs;
        cfg.learning_rate = tuned.learning_rate;
        cfg.tune = false;
    }

    let results: Vec<Result<(RepeatOutcome, Vec<StageTiming>)>> = (0..cfg.repeats)
        .into_par_iter()
        .map(|r| run_repeat(&cfg, &source, pooled_selection.as_deref(), r))
        .collect();
    let mut artifact = RunArtifact {
        config: cfg,
        repeats: Vec::new(),
        failures: Vec::new(),
        timings: Vec::new(),
    };
    for (repeat, res) in results.into_iter().enumerate() {
        match res {
            Ok((outcome, timings)) => {
                artifact.repeats.push(outcome);
                artifact.timings.extend(timings);
            }
            Err(e) => artifact.failures.push(RepeatFailure {
                repeat,
                kind: e.kind().to_string(),
                message: e.to_string(),
            }),
        }
    }
    Ok(artifact)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

pub(crate) const METRICS_HEADER: [&str; 14] = [
    "repeat",
    "seed",
    "threshold_kind",
    "threshold",
    "n_test",
    "n_unsafe",
    "n_safe",
    "sensitivity",
    "specificity",
    "reduction_in_measurement",
    "coverage",
    "interval_width",
    "sensitivity_undefined",
    "specificity_undefined",
];

fn metrics_row(repeat: usize, seed: u64, kind: &str, r: &MetricsReport) -> Vec<String> {
    vec![
        repeat.to_string(),
        seed.to_string(),
        kind.to_string(),
        r.threshold_used.to_string(),
        r.n_test.to_string(),
        r.n_unsafe.to_string(),
        r.n_safe.to_string(),
        r.sensitivity.to_string(),
        r.specificity.to_string(),
        r.reduction_in_measurement.to_string(),
        opt(r.coverage),
        opt(r.mean_interval_width),
        r.sensitivity_undefined.to_string(),
        r.specificity_undefined.to_string(),
    ]
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let csv_err = |e: csv::Error| ExperimentError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| ExperimentError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| ExperimentError::io(path, e))
}

/// Writes config snapshot, per-method metrics and intervals, tables,
/// diagnostics and timings into `dir`.
pub fn write_artifact(artifact: &RunArtifact, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
    write_text(&dir.join("config.toml"), &artifact.config.to_toml()?)?;
    for method in artifact.methods() {
        let mut rows = Vec::new();
        let mut interval_rows = Vec::new();
        for rep in &artifact.repeats {
            for o in rep.methods.iter().filter(|o| o.method == method) {
                rows.push(metrics_row(rep.repeat, rep.seed, "prospective", &o.prospective));
                if let Some(r) = &o.retrospective {
                    rows.push(metrics_row(rep.repeat, rep.seed, "retrospective", r));
                }
                for (i, (iv, y)) in o.intervals.iter().zip(&rep.test_labels).enumerate() {
                    interval_rows.push(vec![
                        rep.repeat.to_string(),
                        i.to_string(),
                        iv.low.to_string(),
                        iv.high.to_string(),
                        y.to_string(),
                    ]);
                }
            }
        }
        write_rows(&dir.join(format!("metrics_{}.csv", method.key())), &METRICS_HEADER, rows)?;
        write_rows(
            &dir.join(format!("intervals_{}.csv", method.key())),
            &["repeat", "index", "low", "high", "gpr"],
            interval_rows,
        )?;
    }
    write_text(&dir.join("table_prospective.txt"), &artifact.prospective_table()?)?;
    write_text(&dir.join("table_retrospective.txt"), &artifact.retrospective_table()?)?;

    let diag_rows = artifact.repeats.iter().flat_map(|rep| {
        rep.members.iter().map(move |d| {
            vec![
                rep.repeat.to_string(),
                d.member.to_string(),
                d.seed.to_string(),
                opt(d.cp_width),
                opt(d.crc_lambda),
                opt(d.crc_err),
                opt(d.cqr_width_low),
                opt(d.cqr_width_high),
                d.cqr_crossings.to_string(),
                opt(d.ct_width),
                opt(d.ta_crc_width),
            ]
        })
    });
    write_rows(
        &dir.join("diagnostics.csv"),
        &[
            "repeat",
            "member",
            "seed",
            "cp_width",
            "crc_lambda",
            "crc_err",
            "cqr_width_low",
            "cqr_width_high",
            "cqr_crossings",
            "ct_width",
            "ta_crc_width",
        ],
        diag_rows,
    )?;
    write_rows(
        &dir.join("timing.csv"),
        &["repeat", "stage", "seconds"],
        artifact
            .timings
            .iter()
            .map(|t| vec![t.repeat.to_string(), t.stage.clone(), format!("{:.6}", t.seconds)]),
    )?;
    let errors_path = dir.join("errors.txt");
    if artifact.failures.is_empty() {
        if errors_path.exists() {
            std::fs::remove_file(&errors_path).map_err(|e| ExperimentError::io(&errors_path, e))?;
        }
    } else {
        let mut text = String::new();
        for f in &artifact.failures {
            let _ = writeln!(text, "repeat={} kind={} message={:?}", f.repeat, f.kind, f.message);
        }
        write_text(&errors_path, &text)?;
    }
    Ok(())
}
