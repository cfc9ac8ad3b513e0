//! Effect-estimation metrics and latent distribution distances.
//!
//! `eps_cate` is the absolute error of the estimated average effect,
//! `|mean(τ̂) − mean(τ)|`. MMD uses a Gaussian kernel and the unbiased
//! U-statistic, which can dip slightly below zero for similar samples.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("in-sample error must be positive, got {0}")]
    NonPositiveBaseline(f64),
    #[error("MMD needs at least two rows per sample, got {0} and {1}")]
    TooFewRows(usize, usize),
    #[error("column mismatch: {0} vs {1}")]
    Columns(usize, usize),
    #[error("bandwidth must be positive, got {0}")]
    Bandwidth(f64),
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<(), MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::Length(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

/// Root of the mean squared error between estimated and true individual effects.
pub fn pehe(tau_hat: &[f64], tau: &[f64]) -> Result<f64, MetricsError> {
    check_pair(tau_hat, tau)?;
    let mse = tau_hat.iter().zip(tau).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / tau.len() as f64;
    Ok(mse.sqrt())
}

pub fn eps_cate(tau_hat: &[f64], tau: &[f64]) -> Result<f64, MetricsError> {
    check_pair(tau_hat, tau)?;
    let n = tau.len() as f64;
    Ok((tau_hat.iter().sum::<f64>() / n - tau.iter().sum::<f64>() / n).abs())
}

/// Relative change between in-sample and corrupted error, in percent.
pub fn volatility(e_in: f64, e_corr: f64) -> Result<f64, MetricsError> {
    if !(e_in > 0.0) {
        return Err(MetricsError::NonPositiveBaseline(e_in));
    }
    Ok(100.0 * (e_in - e_corr).abs() / e_in)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Median pairwise Euclidean distance over the pooled sample.
    Median,
    Fixed(f64),
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Median heuristic bandwidth over distinct pairs of `a ∪ b`; 1 if degenerate.
pub fn median_bandwidth(a: &Tensor, b: &Tensor) -> f64 {
    let rows: Vec<&[f64]> = (0..a.rows()).map(|i| a.row(i)).chain((0..b.rows()).map(|i| b.row(i))).collect();
    let mut d = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(sq_dist(rows[i], rows[j]));
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    let med = m.sqrt();
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

fn resolve_bandwidth(a: &Tensor, b: &Tensor, bw: Bandwidth) -> Result<f64, MetricsError> {
    match bw {
        Bandwidth::Median => Ok(median_bandwidth(a, b)),
        Bandwidth::Fixed(s) if s > 0.0 && s.is_finite() => Ok(s),
        Bandwidth::Fixed(s) => Err(MetricsError::Bandwidth(s)),
    }
}

fn check_samples(a: &Tensor, b: &Tensor) -> Result<(), MetricsError> {
    if a.rows() < 2 || b.rows() < 2 {
        return Err(MetricsError::TooFewRows(a.rows(), b.rows()));
    }
    if a.cols() != b.cols() {
        return Err(MetricsError::Columns(a.cols(), b.cols()));
    }
    Ok(())
}

/// Kernel block sums: (Σ_{i≠j} k(a_i,a_j), Σ_{i≠j} k(b_i,b_j), Σ_{i,j} k(a_i,b_j)).
fn kernel_sums(a: &Tensor, b: &Tensor, sigma: f64) -> (f64, f64, f64) {
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let k = |x: &[f64], y: &[f64]| (-gamma * sq_dist(x, y)).exp();
    let within = |t: &Tensor| {
        let mut s = 0.0;
        for i in 0..t.rows() {
            for j in i + 1..t.rows() {
                s += k(t.row(i), t.row(j));
            }
        }
        2.0 * s
    };
    let mut cross = 0.0;
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            cross += k(a.row(i), b.row(j));
        }
    }
    (within(a), within(b), cross)
}

/// Unbiased estimate of squared MMD between the row samples `a` and `b`.
pub fn mmd_rbf(a: &Tensor, b: &Tensor, bandwidth: Bandwidth) -> Result<f64, MetricsError> {
    check_samples(a, b)?;
    let sigma = resolve_bandwidth(a, b, bandwidth)?;
    let (m, n) = (a.rows() as f64, b.rows() as f64);
    let (kaa, kbb, kab) = kernel_sums(a, b, sigma);
    Ok(kaa / (m * (m - 1.0)) + kbb / (n * (n - 1.0)) - 2.0 * kab / (m * n))
}

/// Biased (V-statistic) estimate of squared MMD; zero for identical samples.
pub fn mmd_rbf_biased(a: &Tensor, b: &Tensor, bandwidth: Bandwidth) -> Result<f64, MetricsError> {
    check_samples(a, b)?;
    let sigma = resolve_bandwidth(a, b, bandwidth)?;
    let (m, n) = (a.rows() as f64, b.rows() as f64);
    let (kaa, kbb, kab) = kernel_sums(a, b, sigma);
    Ok((kaa + m) / (m * m) + (kbb + n) / (n * n) - 2.0 * kab / (m * n))
}

/// Upper `quantile` of the unbiased MMD over random relabelings of the pooled
/// sample, with the bandwidth fixed to the one used on the original split.
pub fn mmd_permutation_null(
    a: &Tensor,
    b: &Tensor,
    bandwidth: Bandwidth,
    permutations: usize,
    quantile: f64,
    seed: u64,
) -> Result<f64, MetricsError> {
    check_samples(a, b)?;
    let sigma = resolve_bandwidth(a, b, bandwidth)?;
    let pooled: Vec<Vec<f64>> = (0..a.rows())
        .map(|i| a.row(i).to_vec())
        .chain((0..b.rows()).map(|i| b.row(i).to_vec()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    let mut stats = Vec::with_capacity(permutations);
    for _ in 0..permutations.max(1) {
        order.shuffle(&mut rng);
        let pick = |idx: &[usize]| {
            let rows: Vec<Vec<f64>> = idx.iter().map(|&i| pooled[i].clone()).collect();
            Tensor::from_rows(&rows).expect("finite rows")
        };
        let (pa, pb) = (pick(&order[..a.rows()]), pick(&order[a.rows()..]));
        stats.push(mmd_rbf(&pa, &pb, Bandwidth::Fixed(sigma))?);
    }
    stats.sort_by(f64::total_cmp);
    let pos = ((stats.len() - 1) as f64 * quantile.clamp(0.0, 1.0)).round() as usize;
    Ok(stats[pos])
}

/// Mean and standard error (sample sd / √n) over replications.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Some(Summary { mean, stderr, n })
    }
}

/// Metrics of one model evaluated on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sqrt_pehe: f64,
    pub eps_cate: f64,
    pub volatility_pct: Option<f64>,
    /// Treated vs control latent MMD, floored at 0.
    pub mmd_treated_control: f64,
    /// Training vs runtime latent MMD, floored at 0.
    pub mmd_train_runtime: Option<f64>,
    pub n_eval: usize,
    pub seed: u64,
}
