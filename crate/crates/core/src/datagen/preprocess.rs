use serde::{Deserialize, Serialize};

use super::{CausalDataset, DataError, FeatureKind};
use crate::autodiff::Tensor;

/// Exact zeros are reserved for missing values; a mapped value that lands on
/// zero is moved by this amount.
pub const ZERO_NUDGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocSpec {
    /// Continuous columns are min-max mapped onto `[lo, hi]`, `lo > 0`.
    pub lo: f64,
    pub hi: f64,
}

impl Default for PreprocSpec {
    fn default() -> Self {
        PreprocSpec { lo: 0.05, hi: 1.0 }
    }
}

impl PreprocSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.lo > 0.0 && self.hi > self.lo && self.hi.is_finite()) {
            return Err(DataError::Config(format!(
                "continuous range must satisfy 0 < lo < hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnMapping {
    Continuous { min: f64, max: f64 },
    /// Constant training column: every value maps to the range midpoint.
    Constant { value: f64 },
    /// Values at or above the midpoint of `low`/`high` map to +1, others to −1.
    Binary { low: f64, high: f64 },
}

/// Per-column mapping fitted on training data and reused unchanged on test
/// and runtime data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub spec: PreprocSpec,
    pub columns: Vec<ColumnMapping>,
}

impl Preprocessor {
    pub fn fit(ds: &CausalDataset, spec: PreprocSpec) -> Result<Self, DataError> {
        spec.validate()?;
        let mut columns = Vec::with_capacity(ds.n_features());
        for (j, kind) in ds.feature_kinds.iter().enumerate() {
            let values = ds.x.column_values(j);
            let (min, max) = values
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let mapping = match kind {
                FeatureKind::Continuous if max > min => ColumnMapping::Continuous { min, max },
                FeatureKind::Continuous => {
                    log::warn!(
                        "column `{}` is constant; mapping it to the range midpoint",
                        ds.feature_names[j]
                    );
                    ColumnMapping::Constant {
                        value: 0.5 * (spec.lo + spec.hi),
                    }
                }
                FeatureKind::Binary => {
                    let mut levels: Vec<f64> = values.clone();
                    levels.sort_by(f64::total_cmp);
                    levels.dedup();
                    if levels.len() > 2 {
                        return Err(DataError::Config(format!(
                            "binary column `{}` has {} distinct values",
                            ds.feature_names[j],
                            levels.len()
                        )));
                    }
                    ColumnMapping::Binary { low: min, high: max }
                }
            };
            columns.push(mapping);
        }
        Ok(Preprocessor { spec, columns })
    }

    pub fn map_value(&self, col: usize, v: f64) -> f64 {
        let PreprocSpec { lo, hi } = self.spec;
        let out = match self.columns[col] {
            ColumnMapping::Continuous { min, max } => lo + (v - min) / (max - min) * (hi - lo),
            ColumnMapping::Constant { value } => value,
            ColumnMapping::Binary { low, high } => {
                if v >= 0.5 * (low + high) {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        if out == 0.0 {
            ZERO_NUDGE
        } else {
            out
        }
    }

    pub fn apply_matrix(&self, x: &Tensor) -> Result<Tensor, DataError> {
        if x.cols() != self.columns.len() {
            return Err(DataError::Config(format!(
                "preprocessor fitted on {} columns, got {}",
                self.columns.len(),
                x.cols()
            )));
        }
        let c = x.cols();
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| self.map_value(i % c, v))
            .collect();
        Tensor::matrix(x.rows(), c, data).map_err(|e| DataError::Invariant(e.to_string()))
    }

    pub fn apply(&self, ds: &CausalDataset) -> Result<CausalDataset, DataError> {
        Ok(ds.with_covariates(self.apply_matrix(&ds.x)?))
    }
}

/// Fits a mapping on `raw` and applies it.
pub fn preprocess(raw: &CausalDataset, spec: PreprocSpec) -> Result<(CausalDataset, Preprocessor), DataError> {
    let p = Preprocessor::fit(raw, spec)?;
    Ok((p.apply(raw)?, p))
}
