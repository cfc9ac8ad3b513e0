//! Semi-synthetic benchmarks with known potential outcomes.
//!
//! Covariates come first as `n_features − n_binary` standard-normal columns
//! followed by `n_binary` Bernoulli columns. Treatment follows a logistic
//! selection model on the standardized covariates, so
//! `selection_bias_strength = 0` gives a randomized trial.

use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{CausalDataset, DataError, FeatureKind};
use crate::autodiff::{sigmoid, Tensor};

/// Continuous columns of the 25-covariate layout.
pub const IHDP_CONTINUOUS: [&str; 6] = ["bw", "b_head", "preterm", "birth_o", "momage", "work_dur"];

/// Binary columns of the 25-covariate layout.
pub const IHDP_BINARY: [&str; 19] = [
    "sex", "twin", "b_marr", "mom_lths", "mom_hs", "mom_scoll", "cig", "first", "booze", "drugs", "prenatal",
    "nnhealth", "ark", "ein", "har", "mia", "pen", "tex", "was",
];

/// Privacy-related columns corrupted in the IHDP-like experiments.
pub const IHDP_TARGETS: [&str; 7] = ["momage", "sex", "twin", "b_marr", "cig", "drugs", "work_dur"];

const IHDP_EFFECT: f64 = 4.0;
const ACIC_ACTIVE: usize = 20;
const ACIC_PAIRS: usize = 10;
const MIN_ARM: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseSurface {
    IhdpLike,
    AcicLike,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub response_surface: ResponseSurface,
    pub n_samples: usize,
    pub n_features: usize,
    pub n_binary: usize,
    pub seed: u64,
    pub selection_bias_strength: f64,
    /// Standard deviation of the outcome noise.
    pub noise_std: f64,
}

impl GeneratorConfig {
    pub fn ihdp_like(seed: u64) -> Self {
        GeneratorConfig {
            response_surface: ResponseSurface::IhdpLike,
            n_samples: 747,
            n_features: 25,
            n_binary: 19,
            seed,
            selection_bias_strength: 1.0,
            noise_std: 1.0,
        }
    }

    pub fn acic_like(seed: u64) -> Self {
        GeneratorConfig {
            response_surface: ResponseSurface::AcicLike,
            n_samples: 1000,
            n_features: 200,
            n_binary: 40,
            seed,
            selection_bias_strength: 1.0,
            noise_std: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_binary > self.n_features {
            return Err(DataError::Config(format!(
                "n_binary {} exceeds n_features {}",
                self.n_binary, self.n_features
            )));
        }
        if self.n_samples < 20 {
            return Err(DataError::Config(format!("n_samples must be at least 20, got {}", self.n_samples)));
        }
        if self.n_features == 0 {
            return Err(DataError::Config("n_features must be positive".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) || !self.selection_bias_strength.is_finite() {
            return Err(DataError::Config("noise_std and selection_bias_strength must be finite".into()));
        }
        if self.response_surface == ResponseSurface::AcicLike && self.n_features < ACIC_ACTIVE {
            return Err(DataError::Config(format!(
                "acic_like needs at least {ACIC_ACTIVE} features"
            )));
        }
        Ok(())
    }
}

pub fn generate(cfg: &GeneratorConfig) -> Result<CausalDataset, DataError> {
    match cfg.response_surface {
        ResponseSurface::IhdpLike => gen_ihdp_like(cfg),
        ResponseSurface::AcicLike => gen_acic_like(cfg),
    }
}

struct Covariates {
    x: Vec<Vec<f64>>,
    kinds: Vec<FeatureKind>,
    names: Vec<String>,
}

fn sample_covariates(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Covariates {
    let n_cont = cfg.n_features - cfg.n_binary;
    let probs: Vec<f64> = (0..cfg.n_binary).map(|_| rng.random_range(0.2..0.8)).collect();
    let coins: Vec<Bernoulli> = probs.iter().map(|&p| Bernoulli::new(p).expect("p in [0.2, 0.8]")).collect();
    let x = (0..cfg.n_samples)
        .map(|_| {
            let mut row: Vec<f64> = (0..n_cont).map(|_| rng.sample(StandardNormal)).collect();
            row.extend(coins.iter().map(|c| if c.sample(rng) { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    let mut kinds = vec![FeatureKind::Continuous; n_cont];
    kinds.extend(std::iter::repeat_n(FeatureKind::Binary, cfg.n_binary));
    let ihdp_layout = cfg.response_surface == ResponseSurface::IhdpLike
        && n_cont == IHDP_CONTINUOUS.len()
        && cfg.n_binary == IHDP_BINARY.len();
    let names = if ihdp_layout {
        IHDP_CONTINUOUS.iter().chain(IHDP_BINARY.iter()).map(|s| s.to_string()).collect()
    } else {
        (1..=cfg.n_features).map(|j| format!("x{j}")).collect()
    };
    Covariates { x, kinds, names }
}

/// Logistic selection on z-scored covariates: `t ~ Bernoulli(σ(s·Zγ/√d))`
/// with `γ ~ N(0, I)`. Redraws γ (and the coins) up to ten times when an arm
/// ends up with fewer than five rows.
fn assign_treatment(x: &[Vec<f64>], strength: f64, rng: &mut ChaCha8Rng) -> Result<Vec<u8>, DataError> {
    let n = x.len();
    let d = x[0].len();
    let mut mean = vec![0.0; d];
    for row in x {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n as f64;
        }
    }
    let mut sd = vec![0.0; d];
    for row in x {
        for j in 0..d {
            sd[j] += (row[j] - mean[j]).powi(2) / n as f64;
        }
    }
    let sd: Vec<f64> = sd.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
    for _ in 0..10 {
        let gamma: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let t: Vec<u8> = x
            .iter()
            .map(|row| {
                let score: f64 = (0..d).map(|j| (row[j] - mean[j]) / sd[j] * gamma[j]).sum::<f64>() / (d as f64).sqrt();
                u8::from(rng.random::<f64>() < sigmoid(strength * score))
            })
            .collect();
        let treated = t.iter().filter(|&&v| v == 1).count();
        if treated >= MIN_ARM && n - treated >= MIN_ARM {
            return Ok(t);
        }
    }
    Err(DataError::Degenerate(format!(
        "an arm kept fewer than {MIN_ARM} rows after 10 selection draws"
    )))
}

fn assemble(
    cov: Covariates,
    t: Vec<u8>,
    mu0: Vec<f64>,
    mu1: Vec<f64>,
    noise_std: f64,
    rng: &mut ChaCha8Rng,
) -> Result<CausalDataset, DataError> {
    let noise = Normal::new(0.0, noise_std).map_err(|e| DataError::Config(e.to_string()))?;
    let y = t
        .iter()
        .zip(mu0.iter().zip(&mu1))
        .map(|(&ti, (&m0, &m1))| if ti == 1 { m1 } else { m0 } + noise.sample(rng))
        .collect();
    let x = Tensor::from_rows(&cov.x).map_err(|e| DataError::Invariant(e.to_string()))?;
    let ds = CausalDataset {
        x,
        t,
        y,
        mu0: Some(mu0),
        mu1: Some(mu1),
        feature_kinds: cov.kinds,
        feature_names: cov.names,
    };
    ds.validate()?;
    Ok(ds)
}

/// Exponential/linear response surface in the style of Hill's "surface B":
/// `μ0 = exp((x + 0.5)·β)`, `μ1 = x·β − ω`, with sparse β and ω calibrated
/// so that the sample mean of `μ1 − μ0` is exactly 4.
pub fn gen_ihdp_like(cfg: &GeneratorConfig) -> Result<CausalDataset, DataError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cov = sample_covariates(cfg, &mut rng);
    const LEVELS: [f64; 5] = [0.0, 0.1, 0.2, 0.3, 0.4];
    let beta: Vec<f64> = (0..cfg.n_features)
        .map(|_| {
            let u: f64 = rng.random();
            if u < 0.6 {
                0.0
            } else {
                LEVELS[1 + (((u - 0.6) / 0.1) as usize).min(3)]
            }
        })
        .collect();
    let t = assign_treatment(&cov.x, cfg.selection_bias_strength, &mut rng)?;

    let dot = |row: &[f64], shift: f64| row.iter().zip(&beta).map(|(x, b)| (x + shift) * b).sum::<f64>();
    let mu0: Vec<f64> = cov.x.iter().map(|r| dot(r, 0.5).exp()).collect();
    let lin: Vec<f64> = cov.x.iter().map(|r| dot(r, 0.0)).collect();
    let n = cfg.n_samples as f64;
    let omega = lin.iter().sum::<f64>() / n - mu0.iter().sum::<f64>() / n - IHDP_EFFECT;
    let mu1: Vec<f64> = lin.iter().map(|l| l - omega).collect();
    assemble(cov, t, mu0, mu1, cfg.noise_std, &mut rng)
}

/// High-dimensional sparse surface: 20 active covariates drive a linear plus
/// pairwise-interaction baseline, and the effect `0.3 + 0.2·sin(x_A·κ)` is
/// heterogeneous but confined to `[0.1, 0.5]`.
pub fn gen_acic_like(cfg: &GeneratorConfig) -> Result<CausalDataset, DataError> {
    use rand::seq::index::sample;

    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cov = sample_covariates(cfg, &mut rng);
    let active: Vec<usize> = sample(&mut rng, cfg.n_features, ACIC_ACTIVE).into_vec();
    let linear: Vec<f64> = active.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
    let pairs: Vec<(usize, usize, f64)> = (0..ACIC_PAIRS)
        .map(|_| {
            let p = sample(&mut rng, ACIC_ACTIVE, 2).into_vec();
            (active[p[0]], active[p[1]], rng.random_range(-0.5..0.5))
        })
        .collect();
    let kappa: Vec<f64> = active
        .iter()
        .map(|_| rng.sample::<f64, _>(StandardNormal) / (ACIC_ACTIVE as f64).sqrt())
        .collect();
    let t = assign_treatment(&cov.x, cfg.selection_bias_strength, &mut rng)?;

    let mut mu0 = Vec::with_capacity(cfg.n_samples);
    let mut mu1 = Vec::with_capacity(cfg.n_samples);
    for row in &cov.x {
        let base: f64 = active.iter().zip(&linear).map(|(&j, a)| a * row[j]).sum::<f64>()
            + pairs.iter().map(|&(j, k, b)| b * row[j] * row[k]).sum::<f64>();
        let phase: f64 = active.iter().zip(&kappa).map(|(&j, k)| k * row[j]).sum();
        mu0.push(base);
        mu1.push(base + 0.3 + 0.2 * phase.sin());
    }
    assemble(cov, t, mu0, mu1, cfg.noise_std, &mut rng)
}
