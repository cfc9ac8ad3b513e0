//! VEGAN and TARNet architectures and their losses, built on [`crate::autodiff`].
//!
//! Outcomes are modelled on a standardized scale; each model carries the
//! [`OutcomeScale`] fitted on its training outcomes and undoes it in
//! `predict_ite`.

mod losses;
mod tarnet;
mod vegan;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Activation, AutodiffError, CheckpointEntry, Tensor};
use crate::corruption::CorruptionError;

pub use losses::{bce, log_prob, loss_d_beta, loss_d_delta, loss_reconstruction, reconstruction_loss, PROB_CLAMP};
pub use tarnet::{loss_tarnet, tarnet_terms, TarnetModel};
pub use vegan::{generator_terms, loss_generator, EncodedVars, GeneratorTerms, LatentSample, VeganModel};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Corruption(#[from] CorruptionError),
    #[error("{0}")]
    Shape(String),
    #[error("batch has no {0} rows")]
    EmptyGroup(&'static str),
    #[error("checkpoint holds a {found:?} model, expected {expected:?}")]
    WrongModel { expected: ModelKind, found: ModelKind },
}

/// Layer widths shared by both model families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub latent_dim: usize,
    /// Widths of the shared extractor; the last entry is the representation width.
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub activation: Activation,
    pub sigma_floor: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            latent_dim: 20,
            encoder_hidden: vec![100, 100, 100],
            decoder_hidden: vec![200, 200],
            discriminator_hidden: vec![100, 100],
            activation: Activation::Elu,
            sigma_floor: 1e-4,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<(), NetworkError> {
        let bad = |msg: &str| Err(NetworkError::Shape(msg.to_string()));
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive");
        }
        if self.encoder_hidden.is_empty() {
            return bad("encoder_hidden needs at least one layer");
        }
        if [&self.encoder_hidden, &self.decoder_hidden, &self.discriminator_hidden]
            .iter()
            .any(|v| v.contains(&0))
        {
            return bad("layer widths must be positive");
        }
        if !(self.sigma_floor > 0.0) {
            return bad("sigma_floor must be positive");
        }
        Ok(())
    }

    pub fn representation_width(&self) -> usize {
        *self.encoder_hidden.last().expect("validated")
    }
}

/// Affine map between the raw outcome scale and the scale the decoders fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeScale {
    pub mean: f64,
    pub std: f64,
}

impl Default for OutcomeScale {
    fn default() -> Self {
        OutcomeScale { mean: 0.0, std: 1.0 }
    }
}

impl OutcomeScale {
    /// Mean and population standard deviation; a zero spread falls back to 1.
    pub fn fit(y: &[f64]) -> Self {
        if y.is_empty() {
            return Self::default();
        }
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        OutcomeScale { mean, std }
    }

    pub fn standardize(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| (v - self.mean) / self.std).collect()
    }

    pub fn restore(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

/// Potential-outcome predictions on the raw outcome scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub tau: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Vegan,
    VeganI,
    Tarnet,
    TarnetPlus,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Vegan, ModelKind::VeganI, ModelKind::Tarnet, ModelKind::TarnetPlus];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Vegan => "vegan",
            ModelKind::VeganI => "vegan_i",
            ModelKind::Tarnet => "tarnet",
            ModelKind::TarnetPlus => "tarnet_plus",
        }
    }

    /// Whether training consumes the runtime covariates.
    pub fn uses_runtime(self) -> bool {
        matches!(self, ModelKind::Vegan | ModelKind::TarnetPlus)
    }

    pub fn is_vegan(self) -> bool {
        matches!(self, ModelKind::Vegan | ModelKind::VeganI)
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown model `{s}` (expected vegan, vegan_i, tarnet or tarnet_plus)"))
    }
}

/// Everything needed to rebuild a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub kind: ModelKind,
    pub arch: ArchConfig,
    pub input_dim: usize,
    pub outcome_scale: OutcomeScale,
    pub params: Vec<CheckpointEntry>,
}

/// Either model family behind one interface, as used by evaluation.
#[derive(Debug, Clone)]
pub enum TrainedModel {
    Vegan(VeganModel),
    Tarnet(TarnetModel),
}

impl TrainedModel {
    pub fn predict_ite(&self, x: &Tensor) -> Result<Prediction, NetworkError> {
        match self {
            TrainedModel::Vegan(m) => m.predict_ite(x),
            TrainedModel::Tarnet(m) => m.predict_ite(x),
        }
    }

    /// Representation used by the distribution diagnostics: sampled latents
    /// with a fixed noise seed for VEGAN, extractor features for TARNet.
    pub fn representation(&self, x: &Tensor, seed: u64) -> Result<Tensor, NetworkError> {
        match self {
            TrainedModel::Vegan(m) => m.sampled_latents(x, seed),
            TrainedModel::Tarnet(m) => m.features(x),
        }
    }

    pub fn checkpoint(&self, kind: ModelKind) -> ModelCheckpoint {
        match self {
            TrainedModel::Vegan(m) => m.checkpoint(kind),
            TrainedModel::Tarnet(m) => m.checkpoint(kind),
        }
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self, NetworkError> {
        if ck.kind.is_vegan() {
            Ok(TrainedModel::Vegan(VeganModel::from_checkpoint(ck)?))
        } else {
            Ok(TrainedModel::Tarnet(TarnetModel::from_checkpoint(ck)?))
        }
    }
}
