//! Synthetic plan populations with a tunable failing-plan rate.
//!
//! Features are i.i.d. standard normal (optionally mean-shifted). The label is
//! `clamp(100 - softplus(w·x + b) + N(0, noise_sd), 0, 100)`, which is bounded,
//! piles up near 100 and has a long lower tail. The bias `b` is found by
//! bisection so that the realised rate of `gpr < 95` matches the requested
//! rate within 20% (relative).

use super::{DataError, Dataset, PlanRecord, Provenance, Result, CANONICAL_FEATURES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use std::fmt::Write as _;
use std::path::Path;

const UNSAFE_LEVEL: f64 = 95.0;
const RATE_TOLERANCE: f64 = 0.2;
const MAX_BISECTION: usize = 100;
const BIAS_RANGE: (f64, f64) = (-100.0, 100.0);

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub unsafe_rate: f64,
    pub noise_sd: f64,
    pub seed: u64,
    pub dim: usize,
    /// Added to every feature of the generated population.
    pub feature_shift: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            unsafe_rate: 0.05,
            noise_sd: 1.0,
            seed: 0,
            dim: 12,
            feature_shift: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(DataError::InvalidSynth("n must be at least 1".into()));
        }
        if !(self.unsafe_rate > 0.0 && self.unsafe_rate < 1.0) {
            return Err(DataError::InvalidSynth(format!(
                "unsafe rate must lie in (0, 1), got {}",
                self.unsafe_rate
            )));
        }
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return Err(DataError::InvalidSynth(format!(
                "noise sd must be positive, got {}",
                self.noise_sd
            )));
        }
        if self.dim == 0 {
            return Err(DataError::InvalidSynth("dim must be at least 1".into()));
        }
        if !self.feature_shift.is_finite() {
            return Err(DataError::InvalidSynth("feature shift must be finite".into()));
        }
        Ok(())
    }
}

/// Generator parameters carried alongside a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthMeta {
    pub seed: u64,
    pub n: usize,
    pub dim: usize,
    pub target_unsafe_rate: f64,
    pub realised_unsafe_rate: f64,
    pub noise_sd: f64,
    pub feature_shift: f64,
    pub bias: f64,
    pub weights: Vec<f64>,
}

impl SynthMeta {
    /// `key=value` lines, one per parameter.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "generator=softplus_clamped");
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "n={}", self.n);
        let _ = writeln!(s, "dim={}", self.dim);
        let _ = writeln!(s, "target_unsafe_rate={}", self.target_unsafe_rate);
        let _ = writeln!(s, "realised_unsafe_rate={}", self.realised_unsafe_rate);
        let _ = writeln!(s, "noise_sd={}", self.noise_sd);
        let _ = writeln!(s, "feature_shift={}", self.feature_shift);
        let _ = writeln!(s, "bias={}", self.bias);
        let w: Vec<String> = self.weights.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "weights={}", w.join(","));
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_kv()).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

/// Fixed generator: weights, bias and noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub noise_sd: f64,
}

impl SynthModel {
    /// Noise-free pass rate before clamping.
    pub fn mean_gpr(&self, x: &[f64]) -> f64 {
        let z = self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias;
        100.0 - softplus(z)
    }

    pub fn label(&self, x: &[f64], noise: f64) -> f64 {
        (self.mean_gpr(x) + noise).clamp(0.0, 100.0)
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    fn draw_inputs<R: Rng>(&self, n: usize, shift: f64, rng: &mut R) -> (Vec<Vec<f64>>, Vec<f64>) {
        let noise = Normal::new(0.0, self.noise_sd).expect("noise sd validated");
        let mut xs = Vec::with_capacity(n);
        let mut eps = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (0..self.dim())
                .map(|_| {
                    let v: f64 = StandardNormal.sample(rng);
                    v + shift
                })
                .collect();
            xs.push(x);
            eps.push(noise.sample(rng));
        }
        (xs, eps)
    }

    /// I.i.d. draw of `n` plans.
    pub fn sample<R: Rng>(&self, n: usize, feature_shift: f64, rng: &mut R) -> Dataset {
        let (xs, eps) = self.draw_inputs(n, feature_shift, rng);
        let records = xs
            .into_iter()
            .zip(eps)
            .map(|(x, e)| {
                let gpr = self.label(&x, e);
                PlanRecord { features: x, gpr }
            })
            .collect();
        Dataset {
            feature_names: feature_names(self.dim()),
            records,
            provenance: Provenance::Synthetic,
            synth_meta: None,
        }
    }
}

/// Canonical names for 12 features, `f0..` otherwise.
pub fn feature_names(dim: usize) -> Vec<String> {
    if dim == CANONICAL_FEATURES.len() {
        CANONICAL_FEATURES.iter().map(|s| s.to_string()).collect()
    } else {
        (0..dim).map(|j| format!("f{j}")).collect()
    }
}

fn unsafe_rate(model: &SynthModel, xs: &[Vec<f64>], eps: &[f64]) -> f64 {
    let count = xs
        .iter()
        .zip(eps)
        .filter(|(x, &e)| model.label(x, e) < UNSAFE_LEVEL)
        .count();
    count as f64 / xs.len() as f64
}

/// Generates a dataset and the generator that produced it.
pub fn synth_model(cfg: &SynthConfig) -> Result<(SynthModel, Dataset)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scale = 2.0 / (cfg.dim as f64).sqrt();
    let weights: Vec<f64> = (0..cfg.dim)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v * scale
        })
        .collect();
    let mut model = SynthModel {
        weights,
        bias: 0.0,
        noise_sd: cfg.noise_sd,
    };
    let (xs, eps) = model.draw_inputs(cfg.n, cfg.feature_shift, &mut rng);

    let target = cfg.unsafe_rate;
    let within = |r: f64| (r - target).abs() <= RATE_TOLERANCE * target;
    let (mut lo, mut hi) = BIAS_RANGE;
    let mut last = f64::NAN;
    let mut found = None;
    for _ in 0..MAX_BISECTION {
        let mid = 0.5 * (lo + hi);
        model.bias = mid;
        let rate = unsafe_rate(&model, &xs, &eps);
        last = rate;
        if within(rate) {
            found = Some(mid);
            break;
        }
        if rate < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let bias = found.ok_or(DataError::BisectionFailed {
        target,
        last,
        iterations: MAX_BISECTION,
    })?;
    model.bias = bias;

    let records: Vec<PlanRecord> = xs
        .into_iter()
        .zip(eps)
        .map(|(x, e)| {
            let gpr = model.label(&x, e);
            PlanRecord { features: x, gpr }
        })
        .collect();
    let realised = records.iter().filter(|r| r.gpr < UNSAFE_LEVEL).count() as f64 / cfg.n as f64;
    let meta = SynthMeta {
        seed: cfg.seed,
        n: cfg.n,
        dim: cfg.dim,
        target_unsafe_rate: target,
        realised_unsafe_rate: realised,
        noise_sd: cfg.noise_sd,
        feature_shift: cfg.feature_shift,
        bias,
        weights: model.weights.clone(),
    };
    let dataset = Dataset {
        feature_names: feature_names(cfg.dim),
        records,
        provenance: Provenance::Synthetic,
        synth_meta: Some(meta),
    };
    Ok((model, dataset))
}

/// Seeded synthetic dataset; `synth_meta` records the generator.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset> {
    synth_model(cfg).map(|(_, d)| d)
}
