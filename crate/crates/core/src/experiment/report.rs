//! Rebuilds comparison tables from run directories written by
//! [`write_artifact`](super::write_artifact).

use super::config::{ExperimentConfig, Method};
use super::run::{label_rows, prospective_table_text, retrospective_table_text, METRICS_HEADER};
use super::{ExperimentError, Result};
use crate::evaluation::MetricsReport;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactSummary {
    pub path: PathBuf,
    pub config: ExperimentConfig,
    /// Per method, in canonical order: prospective and retrospective reports.
    pub methods: Vec<(Method, Vec<MetricsReport>, Vec<MetricsReport>)>,
}

fn artifact_err(path: &Path, message: impl Into<String>) -> ExperimentError {
    ExperimentError::Artifact {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn parse_opt(path: &Path, s: &str) -> Result<Option<f64>> {
    if s == "NA" {
        Ok(None)
    } else {
        parse(path, s).map(Some)
    }
}

fn parse<T: std::str::FromStr>(path: &Path, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| artifact_err(path, format!("cannot parse `{s}`")))
}

fn read_metrics(path: &Path) -> Result<(Vec<MetricsReport>, Vec<MetricsReport>)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| artifact_err(path, e.to_string()))?;
    let header = reader
        .headers()
        .map_err(|e| artifact_err(path, e.to_string()))?
        .clone();
    if header.iter().ne(METRICS_HEADER.iter().copied()) {
        return Err(artifact_err(path, "unexpected metrics header"));
    }
    let mut prospective = Vec::new();
    let mut retrospective = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| artifact_err(path, e.to_string()))?;
        let f = |i: usize| &row[i];
        let report = MetricsReport {
            threshold_used: parse(path, f(3))?,
            n_test: parse(path, f(4))?,
            n_unsafe: parse(path, f(5))?,
            n_safe: parse(path, f(6))?,
            sensitivity: parse(path, f(7))?,
            specificity: parse(path, f(8))?,
            reduction_in_measurement: parse(path, f(9))?,
            coverage: parse_opt(path, f(10))?,
            mean_interval_width: parse_opt(path, f(11))?,
            sensitivity_undefined: parse(path, f(12))?,
            specificity_undefined: parse(path, f(13))?,
        };
        match f(2) {
            "prospective" => prospective.push(report),
            "retrospective" => retrospective.push(report),
            other => return Err(artifact_err(path, format!("unknown threshold kind `{other}`"))),
        }
    }
    Ok((prospective, retrospective))
}

/// Loads the config snapshot and every `metrics_<method>.csv` in `dir`.
pub fn read_artifact(dir: impl AsRef<Path>) -> Result<ArtifactSummary> {
    let dir = dir.as_ref();
    let config_path = dir.join("config.toml");
    if !config_path.exists() {
        return Err(artifact_err(dir, "missing config.toml"));
    }
    let config = ExperimentConfig::load(&config_path)?;
    let mut methods = Vec::new();
    for m in Method::ALL {
        let path = dir.join(format!("metrics_{}.csv", m.key()));
        if path.exists() {
            let (p, r) = read_metrics(&path)?;
            methods.push((m, p, r));
        }
    }
    if methods.is_empty() {
        return Err(artifact_err(dir, "no metrics files"));
    }
    Ok(ArtifactSummary {
        path: dir.to_path_buf(),
        config,
        methods,
    })
}

fn display_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Prospective and retrospective tables over one or more artifacts.
///
/// All artifacts must share `alpha` and the safety threshold. With a single
/// artifact the output matches the tables written by the run itself; with
/// several, rows are grouped by method and tagged with the directory name.
pub fn merge_reports(artifacts: &[ArtifactSummary]) -> Result<(String, String)> {
    let first = artifacts
        .first()
        .ok_or_else(|| ExperimentError::Incompatible("no artifacts given".into()))?;
    for a in &artifacts[1..] {
        if a.config.alpha != first.config.alpha {
            return Err(ExperimentError::Incompatible(format!(
                "alpha {} in {} differs from {} in {}",
                a.config.alpha,
                a.path.display(),
                first.config.alpha,
                first.path.display()
            )));
        }
        if a.config.safety_threshold != first.config.safety_threshold {
            return Err(ExperimentError::Incompatible(format!(
                "safety threshold {} in {} differs from {} in {}",
                a.config.safety_threshold,
                a.path.display(),
                first.config.safety_threshold,
                first.path.display()
            )));
        }
    }
    let tagged = artifacts.len() > 1;
    let mut prospective = Vec::new();
    let mut retrospective = Vec::new();
    for m in Method::ALL {
        for a in artifacts {
            let Some((_, p, r)) = a.methods.iter().find(|(k, _, _)| *k == m) else {
                continue;
            };
            let name = tagged.then(|| display_name(&a.path));
            prospective.extend(label_rows(&[(m, p.clone())], name.as_deref())?);
            retrospective.extend(label_rows(&[(m, r.clone())], name.as_deref())?);
        }
    }
    Ok((
        prospective_table_text(first.config.safety_threshold, &prospective)?,
        retrospective_table_text(&retrospective)?,
    ))
}
