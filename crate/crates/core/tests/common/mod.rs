//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use gpr_triage::conformal::PredictionInterval;
use gpr_triage::mlp::{Activation, MlpParams, Objective};

/// Smallest score `s` with `#{scores <= s} * q >= (n + 1) * (q - p)`, i.e. the
/// conformal quantile at miscoverage `p / q`, in integer arithmetic. Falls
/// back to the largest score when no score qualifies.
pub fn brute_conformal_quantile(scores: &[f64], p: u64, q: u64) -> f64 {
    let n = scores.len() as u64;
    let need = (n + 1) * (q - p);
    let mut best: Option<f64> = None;
    for &s in scores {
        let at_most = scores.iter().filter(|&&v| v <= s).count() as u64;
        if at_most * q >= need && best.is_none_or(|b| s < b) {
            best = Some(s);
        }
    }
    best.unwrap_or_else(|| scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
}

/// Linear scan of the risk-control rule at `alpha = p / q` with unit loss bound.
pub fn brute_crc_lambda(
    preds: &[f64],
    labels: &[f64],
    threshold: f64,
    p: u64,
    q: u64,
    grid: &[f64],
) -> f64 {
    let n = preds.len() as u64;
    let err = preds
        .iter()
        .zip(labels)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    for &lambda in grid {
        let losses = preds
            .iter()
            .zip(labels)
            .filter(|(&pred, &y)| {
                let iv = PredictionInterval {
                    low: pred - lambda * err,
                    high: pred + lambda * err,
                };
                iv.low > threshold && y < threshold
            })
            .count() as u64;
        // (n/(n+1)) * losses/n + 1/(n+1) <= p/q
        if (losses + 1) * q <= p * (n + 1) {
            return lambda;
        }
    }
    *grid.last().unwrap()
}

/// Tanh-sinh quadrature of `f` on `[0, b]`, with the abscissae near each end
/// computed from distances to that end.
fn tanh_sinh(f: impl Fn(f64) -> f64, b: f64) -> f64 {
    let h = 1.0 / 128.0;
    let half = b / 2.0;
    let mut total = 0.0;
    let steps = (4.5 / h) as i64;
    for k in -steps..=steps {
        let t = k as f64 * h;
        let s = std::f64::consts::FRAC_PI_2 * t.sinh();
        let w = std::f64::consts::FRAC_PI_2 * t.cosh() / s.cosh().powi(2);
        let x = if t < 0.0 {
            half * (2.0 / (1.0 + (-2.0 * s).exp()))
        } else {
            b - half * (2.0 / (1.0 + (2.0 * s).exp()))
        };
        if x <= 0.0 || x >= b {
            continue;
        }
        let v = f(x);
        if v.is_finite() {
            total += w * v;
        }
    }
    total * half * h
}

/// Two-sided Student-t tail probability via
/// `P(|T| > |t|) = ∫_0^U sin^(ν-1) / ∫_0^(π/2) sin^(ν-1)` with
/// `U = π/2 - atan(|t| / √ν)`.
pub fn student_t_two_sided(t: f64, nu: f64) -> f64 {
    let f = |u: f64| u.sin().powf(nu - 1.0);
    let upper = std::f64::consts::FRAC_PI_2 - (t.abs() / nu.sqrt()).atan();
    if upper <= 0.0 {
        return 0.0;
    }
    tanh_sinh(f, upper) / tanh_sinh(f, std::f64::consts::FRAC_PI_2)
}

/// Welch statistic and Satterthwaite degrees of freedom from first principles.
pub fn welch_reference(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        (n, m, v)
    };
    let (na, ma, va) = stats(a);
    let (nb, mb, vb) = stats(b);
    let sa = va / na;
    let sb = vb / nb;
    let t = (ma - mb) / (sa + sb).sqrt();
    let df = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    (t, df, student_t_two_sided(t, df))
}

/// Plain scalar forward pass, returning hidden pre-activations too.
pub fn reference_forward(params: &MlpParams, x: &[f64]) -> (f64, Vec<f64>) {
    let h = params.b1.len();
    let d = x.len();
    let w1 = params.w1.values();
    let w2 = params.w2.values();
    let mut pre = Vec::with_capacity(h);
    let mut out = params.b2;
    for j in 0..h {
        let z: f64 = (0..d).map(|i| w1[j * d + i] * x[i]).sum::<f64>() + params.b1[j];
        pre.push(z);
        let a = match params.activation {
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Relu => z.max(0.0),
        };
        out += w2[j] * a;
    }
    (out, pre)
}

pub fn reference_loss(params: &MlpParams, xs: &[Vec<f64>], ys: &[f64], objective: Objective) -> f64 {
    let total: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, &y)| {
            let (p, _) = reference_forward(params, x);
            match objective {
                Objective::Mse => (p - y).powi(2),
                Objective::Pinball { tau } => {
                    let u = y - p;
                    u * (tau - if u < 0.0 { 1.0 } else { 0.0 })
                }
                Objective::LowerPenalty { width } => (p - y).powi(2) + (p - width - y).max(0.0),
            }
        })
        .sum();
    total / ys.len() as f64
}

/// Signs of every non-differentiable point the loss passes through.
pub fn kink_pattern(params: &MlpParams, xs: &[Vec<f64>], ys: &[f64], objective: Objective) -> Vec<bool> {
    let mut pattern = Vec::new();
    for (x, &y) in xs.iter().zip(ys) {
        let (p, pre) = reference_forward(params, x);
        if params.activation == Activation::Relu {
            pattern.extend(pre.iter().map(|&z| z > 0.0));
        }
        match objective {
            Objective::Mse => {}
            Objective::Pinball { .. } => pattern.push(y - p > 0.0),
            Objective::LowerPenalty { width } => pattern.push(p - width - y > 0.0),
        }
    }
    pattern
}

/// Triage metrics at `threshold`: (sensitivity, specificity), each 1 when
/// its class is empty.
pub fn reference_sens_spec(intervals: &[PredictionInterval], labels: &[f64], threshold: f64) -> (f64, f64) {
    let mut tp = 0;
    let mut pos = 0;
    let mut tn = 0;
    let mut neg = 0;
    for (iv, &y) in intervals.iter().zip(labels) {
        let flagged = iv.low <= threshold;
        if y < 95.0 {
            pos += 1;
            tp += usize::from(flagged);
        } else {
            neg += 1;
            tn += usize::from(!flagged);
        }
    }
    let r = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    (r(tp, pos), r(tn, neg))
}

/// Best (sensitivity, specificity) over `points` evenly spaced thresholds
/// spanning the interval lower bounds, lexicographically.
pub fn dense_sweep(intervals: &[PredictionInterval], labels: &[f64], points: usize) -> (f64, f64) {
    let lo = intervals.iter().map(|iv| iv.low).fold(f64::INFINITY, f64::min) - 1.0;
    let hi = intervals.iter().map(|iv| iv.low).fold(f64::NEG_INFINITY, f64::max) + 1.0;
    let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for k in 0..points {
        let t = lo + (hi - lo) * k as f64 / (points - 1) as f64;
        let m = reference_sens_spec(intervals, labels, t);
        if m.0 > best.0 || (m.0 == best.0 && m.1 > best.1) {
            best = m;
        }
    }
    best
}
