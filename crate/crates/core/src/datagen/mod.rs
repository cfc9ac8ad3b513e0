//! Causal datasets: synthetic generators with known potential outcomes,
//! zero-reserving preprocessing, train/test splitting and CSV I/O.

mod csv_io;
mod generators;
mod preprocess;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;

pub use csv_io::{load_csv, read_csv, write_csv, CsvSchema};
pub use generators::{
    gen_acic_like, gen_ihdp_like, generate, GeneratorConfig, ResponseSurface, IHDP_BINARY, IHDP_CONTINUOUS,
    IHDP_TARGETS,
};
pub use preprocess::{preprocess, ColumnMapping, PreprocSpec, Preprocessor, ZERO_NUDGE};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("degenerate treatment assignment: {0}")]
    Degenerate(String),
    #[error("{0}")]
    Parse(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("unknown feature kind `{0}`")]
    UnknownKind(String),
    #[error("dataset invariant violated: {0}")]
    Invariant(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    Binary,
}

impl std::str::FromStr for FeatureKind {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "continuous" => Ok(FeatureKind::Continuous),
            "binary" => Ok(FeatureKind::Binary),
            other => Err(DataError::UnknownKind(other.to_string())),
        }
    }
}

/// Covariates, binary treatment and factual outcome, plus the noiseless
/// potential-outcome means when they are known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalDataset {
    pub x: Tensor,
    pub t: Vec<u8>,
    pub y: Vec<f64>,
    pub mu0: Option<Vec<f64>>,
    pub mu1: Option<Vec<f64>>,
    pub feature_kinds: Vec<FeatureKind>,
    pub feature_names: Vec<String>,
}

impl CausalDataset {
    /// Checks shapes, treatment coding and that both arms are populated.
    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.x.rows();
        let d = self.x.cols();
        if self.x.shape().len() != 2 {
            return Err(DataError::Invariant("covariates must be a matrix".into()));
        }
        if self.t.len() != n || self.y.len() != n {
            return Err(DataError::Invariant(format!(
                "{} rows of covariates but {} treatments and {} outcomes",
                n,
                self.t.len(),
                self.y.len()
            )));
        }
        if self.feature_kinds.len() != d || self.feature_names.len() != d {
            return Err(DataError::Invariant("feature metadata does not match column count".into()));
        }
        for mu in [&self.mu0, &self.mu1].into_iter().flatten() {
            if mu.len() != n {
                return Err(DataError::Invariant("potential outcome length mismatch".into()));
            }
        }
        if self.t.iter().any(|&t| t > 1) {
            return Err(DataError::Invariant("treatment must be 0 or 1".into()));
        }
        let treated = self.n_treated();
        if treated == 0 || treated == n {
            return Err(DataError::Degenerate(format!("{treated} of {n} rows treated")));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.x.rows()
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }

    pub fn n_treated(&self) -> usize {
        self.t.iter().filter(|&&t| t == 1).count()
    }

    pub fn treated_fraction(&self) -> f64 {
        self.n_treated() as f64 / self.n_samples() as f64
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    /// True effect `μ1 − μ0` per row, when ground truth is present.
    pub fn true_ite(&self) -> Option<Vec<f64>> {
        let (mu0, mu1) = (self.mu0.as_ref()?, self.mu1.as_ref()?);
        Some(mu1.iter().zip(mu0).map(|(a, b)| a - b).collect())
    }

    /// Rows `idx` as a new dataset, keeping ground truth.
    pub fn subset(&self, idx: &[usize]) -> CausalDataset {
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        CausalDataset {
            x: self.x.select_rows(idx),
            t: idx.iter().map(|&i| self.t[i]).collect(),
            y: pick(&self.y),
            mu0: self.mu0.as_deref().map(pick),
            mu1: self.mu1.as_deref().map(pick),
            feature_kinds: self.feature_kinds.clone(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Same dataset with a replaced covariate matrix.
    pub fn with_covariates(&self, x: Tensor) -> CausalDataset {
        CausalDataset { x, ..self.clone() }
    }

    pub fn column_means(&self) -> Vec<f64> {
        let n = self.n_samples() as f64;
        (0..self.n_features())
            .map(|j| (0..self.n_samples()).map(|i| self.x.get(i, j)).sum::<f64>() / n)
            .collect()
    }
}

/// Train/test partition of row indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Uniform random permutation cut at `floor(n · ratio)`. Reshuffles up to ten
/// times if the training part would miss a treatment arm.
pub fn split(ds: &CausalDataset, ratio: f64, seed: u64) -> Result<(CausalDataset, CausalDataset, SplitIndices), DataError> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DataError::Config(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    let n = ds.n_samples();
    let n_train = (n as f64 * ratio).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(DataError::Config(format!("ratio {ratio} leaves an empty part of {n} rows")));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..10 {
        order.shuffle(&mut rng);
        let (train, test) = order.split_at(n_train);
        let treated = train.iter().filter(|&&i| ds.t[i] == 1).count();
        if treated > 0 && treated < train.len() {
            let idx = SplitIndices {
                train: train.to_vec(),
                test: test.to_vec(),
            };
            return Ok((ds.subset(&idx.train), ds.subset(&idx.test), idx));
        }
    }
    Err(DataError::Degenerate("every reshuffle left a treatment arm empty in train".into()))
}

#[cfg(test)]
mod tests;
