//! Welch's two-sample t-test and class-difference feature selection.

use super::{DataError, Dataset, Result};
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchResult {
    pub t: f64,
    /// Welch–Satterthwaite degrees of freedom.
    pub df: f64,
    /// Two-sided p-value.
    pub p: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sided Welch test of equal means.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    for s in [a, b] {
        if s.len() < 2 {
            return Err(DataError::SampleTooSmall {
                needed: 2,
                actual: s.len(),
            });
        }
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if !(se2 > 0.0) {
        return Err(DataError::DegenerateVariance);
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|_| DataError::DegenerateVariance)?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(WelchResult { t, df, p })
}

/// Features whose class-conditional distributions differ at `p < threshold`,
/// in dataset column order. Classes split at `safety_threshold`.
pub fn select_features(
    dataset: &Dataset,
    threshold: f64,
    safety_threshold: f64,
) -> Result<Vec<String>> {
    let (unsafe_count, safe_count) = dataset.class_counts(safety_threshold);
    if unsafe_count == 0 || safe_count == 0 {
        return Err(DataError::SingleClass {
            threshold: safety_threshold,
            unsafe_count,
            safe_count,
        });
    }
    let mut selected = Vec::new();
    for (j, name) in dataset.feature_names.iter().enumerate() {
        let (fail, pass): (Vec<_>, Vec<_>) = dataset
            .records
            .iter()
            .partition(|r| r.gpr < safety_threshold);
        let fail: Vec<f64> = fail.iter().map(|r| r.features[j]).collect();
        let pass: Vec<f64> = pass.iter().map(|r| r.features[j]).collect();
        let p = match welch_t_test(&fail, &pass) {
            Ok(res) => res.p,
            Err(DataError::DegenerateVariance) => {
                if mean_var(&fail).0 == mean_var(&pass).0 {
                    1.0
                } else {
                    0.0
                }
            }
            Err(e) => return Err(e),
        };
        if p < threshold {
            selected.push(name.clone());
        }
    }
    Ok(selected)
}
