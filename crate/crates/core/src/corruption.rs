//! Runtime domain corruption: covariate shift plus zero-padded missingness.
//!
//! Both steps visit every (row, target column) cell and fire independently
//! with probability `cl`. Shift perturbs a continuous cell by a draw from
//! `N(reference mean, noise_variance)` and negates a ±1 binary cell; drop sets
//! the cell to exactly 0. The two steps draw from separate ChaCha streams of
//! the same seed, so `corrupt` is literally `drop ∘ shift`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::datagen::{CausalDataset, FeatureKind, ZERO_NUDGE};

const SHIFT_STREAM: u64 = 1;
const DROP_STREAM: u64 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorruptionError {
    #[error("unknown target feature `{0}`")]
    UnknownFeature(String),
    #[error("invalid corruption spec: {0}")]
    InvalidSpec(String),
    #[error("every covariate is missing; nothing is left to predict from")]
    Wipeout,
}

/// Which columns to corrupt. `All` targets every covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Targets {
    Named(Vec<String>),
    All(AllTargets),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllTargets {
    All,
}

impl Targets {
    pub fn all() -> Self {
        Targets::All(AllTargets::All)
    }

    pub fn named<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        Targets::Named(names.into_iter().map(Into::into).collect())
    }

    /// Column indices in ascending order.
    pub fn resolve(&self, ds: &CausalDataset) -> Result<Vec<usize>, CorruptionError> {
        match self {
            Targets::All(_) => Ok((0..ds.n_features()).collect()),
            Targets::Named(names) => {
                let mut idx = names
                    .iter()
                    .map(|n| ds.column_index(n).ok_or_else(|| CorruptionError::UnknownFeature(n.clone())))
                    .collect::<Result<Vec<_>, _>>()?;
                idx.sort_unstable();
                idx.dedup();
                Ok(idx)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub targets: Targets,
    /// Per-cell probability for both the shift and the drop step.
    pub cl: f64,
    /// Variance (not standard deviation) of the additive shift noise.
    pub noise_variance: f64,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(targets: Targets, cl: f64, seed: u64) -> Self {
        CorruptionSpec {
            targets,
            cl,
            noise_variance: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), CorruptionError> {
        if !(0.0..=1.0).contains(&self.cl) {
            return Err(CorruptionError::InvalidSpec(format!("cl must lie in [0, 1], got {}", self.cl)));
        }
        if !(self.noise_variance > 0.0 && self.noise_variance.is_finite()) {
            return Err(CorruptionError::InvalidSpec(format!(
                "noise_variance must be positive, got {}",
                self.noise_variance
            )));
        }
        Ok(())
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Distribution shift. `reference_means[j]` is the training mean of column
/// `j`, used as the mean of the additive noise on continuous cells.
pub fn shift(ds: &CausalDataset, spec: &CorruptionSpec, reference_means: &[f64]) -> Result<CausalDataset, CorruptionError> {
    spec.validate()?;
    let cols = spec.targets.resolve(ds)?;
    if reference_means.len() != ds.n_features() {
        return Err(CorruptionError::InvalidSpec(format!(
            "{} reference means for {} columns",
            reference_means.len(),
            ds.n_features()
        )));
    }
    let mut rng = stream(spec.seed, SHIFT_STREAM);
    let sd = spec.noise_variance.sqrt();
    let d = ds.n_features();
    let mut data = ds.x.data().to_vec();
    for i in 0..ds.n_samples() {
        for &j in &cols {
            if rng.random::<f64>() >= spec.cl {
                continue;
            }
            let cell = &mut data[i * d + j];
            match ds.feature_kinds[j] {
                FeatureKind::Binary => *cell = -*cell,
                FeatureKind::Continuous => {
                    let noise = Normal::new(reference_means[j], sd).expect("sd > 0");
                    *cell += noise.sample(&mut rng);
                    if *cell == 0.0 {
                        *cell = ZERO_NUDGE;
                    }
                }
            }
        }
    }
    Ok(ds.with_covariates(Tensor::matrix(ds.n_samples(), d, data).expect("finite")))
}

/// Missingness: each target cell is zeroed with probability `cl`.
pub fn drop(ds: &CausalDataset, spec: &CorruptionSpec) -> Result<CausalDataset, CorruptionError> {
    spec.validate()?;
    let cols = spec.targets.resolve(ds)?;
    let mut rng = stream(spec.seed, DROP_STREAM);
    let d = ds.n_features();
    let mut data = ds.x.data().to_vec();
    for i in 0..ds.n_samples() {
        for &j in &cols {
            if rng.random::<f64>() < spec.cl {
                data[i * d + j] = 0.0;
            }
        }
    }
    Ok(ds.with_covariates(Tensor::matrix(ds.n_samples(), d, data).expect("finite")))
}

/// Shift, then drop, on independent streams.
pub fn corrupt(ds: &CausalDataset, spec: &CorruptionSpec, reference_means: &[f64]) -> Result<CausalDataset, CorruptionError> {
    let shifted = shift(ds, spec, reference_means)?;
    drop(&shifted, spec)
}

/// Refuses a covariate matrix in which every entry is missing.
pub fn check_not_wiped(x: &Tensor) -> Result<(), CorruptionError> {
    if x.numel() > 0 && x.data().iter().all(|&v| v == 0.0) {
        Err(CorruptionError::Wipeout)
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_ihdp_like, preprocess, GeneratorConfig, PreprocSpec, IHDP_TARGETS};

    fn ihdp(seed: u64) -> CausalDataset {
        let raw = gen_ihdp_like(&GeneratorConfig::ihdp_like(seed)).unwrap();
        preprocess(&raw, PreprocSpec::default()).unwrap().0
    }

    #[test]
    fn zero_level_changes_nothing() {
        let ds = ihdp(0);
        let means = ds.column_means();
        let spec = CorruptionSpec::new(Targets::all(), 0.0, 3);
        assert_eq!(shift(&ds, &spec, &means).unwrap(), ds);
        assert_eq!(drop(&ds, &spec).unwrap(), ds);
        assert_eq!(corrupt(&ds, &spec, &means).unwrap(), ds);
    }

    #[test]
    fn full_level_negates_binary_targets() {
        let ds = ihdp(0);
        let spec = CorruptionSpec::new(Targets::named(["sex", "twin"]), 1.0, 3);
        let out = shift(&ds, &spec, &ds.column_means()).unwrap();
        for name in ["sex", "twin"] {
            let j = ds.column_index(name).unwrap();
            for i in 0..ds.n_samples() {
                assert_eq!(out.x.get(i, j), -ds.x.get(i, j));
            }
        }
    }

    #[test]
    fn full_level_drop_zeroes_targets() {
        let ds = ihdp(1);
        let spec = CorruptionSpec::new(Targets::named(IHDP_TARGETS), 1.0, 3);
        let out = drop(&ds, &spec).unwrap();
        for name in IHDP_TARGETS {
            let j = ds.column_index(name).unwrap();
            assert!((0..ds.n_samples()).all(|i| out.x.get(i, j) == 0.0));
        }
        let all = corrupt(&ds, &CorruptionSpec::new(Targets::all(), 1.0, 4), &ds.column_means()).unwrap();
        assert!(all.x.data().iter().all(|&v| v == 0.0));
        assert_eq!(check_not_wiped(&all.x), Err(CorruptionError::Wipeout));
        assert!(check_not_wiped(&out.x).is_ok());
    }

    #[test]
    fn corrupt_is_drop_after_shift() {
        let ds = ihdp(2);
        let means = ds.column_means();
        let spec = CorruptionSpec::new(Targets::named(IHDP_TARGETS), 0.333, 17);
        let composed = drop(&shift(&ds, &spec, &means).unwrap(), &spec).unwrap();
        assert_eq!(corrupt(&ds, &spec, &means).unwrap(), composed);
    }

    #[test]
    fn untouched_columns_and_labels_are_bit_identical() {
        let ds = ihdp(3);
        let spec = CorruptionSpec::new(Targets::named(IHDP_TARGETS), 0.5, 5);
        let out = corrupt(&ds, &spec, &ds.column_means()).unwrap();
        let targets = spec.targets.resolve(&ds).unwrap();
        for j in (0..ds.n_features()).filter(|j| !targets.contains(j)) {
            for i in 0..ds.n_samples() {
                assert_eq!(out.x.get(i, j).to_bits(), ds.x.get(i, j).to_bits());
                assert_ne!(out.x.get(i, j), 0.0);
            }
        }
        assert_eq!((&out.t, &out.y, &out.mu0, &out.mu1), (&ds.t, &ds.y, &ds.mu0, &ds.mu1));
    }

    #[test]
    fn zeros_after_drop_only_where_dropped() {
        let ds = ihdp(4);
        let means = ds.column_means();
        let spec = CorruptionSpec::new(Targets::named(IHDP_TARGETS), 0.4, 6);
        let shifted = shift(&ds, &spec, &means).unwrap();
        let out = drop(&shifted, &spec).unwrap();
        for (a, b) in out.x.data().iter().zip(shifted.x.data()) {
            assert!(*a == 0.0 || a == b);
        }
    }

    #[test]
    fn errors() {
        let ds = ihdp(0);
        let means = ds.column_means();
        let unknown = CorruptionSpec::new(Targets::named(["nope"]), 0.1, 0);
        assert_eq!(drop(&ds, &unknown), Err(CorruptionError::UnknownFeature("nope".into())));
        let bad_cl = CorruptionSpec::new(Targets::all(), 1.5, 0);
        assert!(shift(&ds, &bad_cl, &means).is_err());
        let bad_var = CorruptionSpec {
            noise_variance: 0.0,
            ..CorruptionSpec::new(Targets::all(), 0.1, 0)
        };
        assert!(corrupt(&ds, &bad_var, &means).is_err());
    }

    #[test]
    fn distinct_seeds_give_distinct_masks() {
        let ds = ihdp(5);
        let masks: Vec<Vec<bool>> = (0..100)
            .map(|s| {
                let spec = CorruptionSpec::new(Targets::named(IHDP_TARGETS), 0.2, s);
                drop(&ds, &spec).unwrap().x.data().iter().map(|&v| v == 0.0).collect()
            })
            .collect();
        for a in 0..masks.len() {
            for b in a + 1..masks.len() {
                assert_ne!(masks[a], masks[b], "seeds {a} and {b} collide");
            }
        }
    }

    #[test]
    fn targets_parse_from_config() {
        #[derive(Deserialize)]
        struct Wrap {
            targets: Targets,
        }
        let w: Wrap = toml::from_str("targets = \"all\"").unwrap();
        assert_eq!(w.targets, Targets::all());
        let w: Wrap = toml::from_str("targets = [\"sex\", \"cig\"]").unwrap();
        assert_eq!(w.targets, Targets::named(["sex", "cig"]));
    }
}
