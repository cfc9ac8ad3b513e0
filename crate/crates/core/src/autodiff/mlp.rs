use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AutodiffError, Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Elu,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    #[default]
    Identity,
    Sigmoid,
    Softplus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub output_activation: OutputActivation,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation, output_activation: OutputActivation) -> Self {
        MlpSpec {
            layer_sizes,
            activation,
            output_activation,
        }
    }

    pub fn validate(&self) -> Result<(), AutodiffError> {
        if self.layer_sizes.len() < 2 {
            return Err(AutodiffError::InvalidSpec(format!(
                "an MLP needs at least input and output widths, got {:?}",
                self.layer_sizes
            )));
        }
        if self.layer_sizes.contains(&0) {
            return Err(AutodiffError::InvalidSpec(format!(
                "zero-width layer in {:?}",
                self.layer_sizes
            )));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_sizes.last().unwrap_or(&0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Fully connected network whose parameters live in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Linear>,
}

/// Registers a new MLP under `prefix` in `store`.
///
/// Weights are `fan_in × fan_out`, drawn uniformly from
/// `±sqrt(6 / (fan_in + fan_out))`; biases start at zero. The draw order is
/// fixed, so a given seed always yields the same parameters.
pub fn build_mlp(store: &mut ParamStore, prefix: &str, spec: &MlpSpec, seed: u64) -> Result<Mlp, AutodiffError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(spec.layer_sizes.len() - 1);
    for (i, pair) in spec.layer_sizes.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let weight = store.insert(format!("{prefix}.{i}.weight"), Tensor::matrix(fan_in, fan_out, w)?);
        let bias = store.insert(format!("{prefix}.{i}.bias"), Tensor::zeros(&[1, fan_out]));
        layers.push(Linear { weight, bias });
    }
    Ok(Mlp {
        spec: spec.clone(),
        layers,
    })
}

impl Mlp {
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, AutodiffError> {
        self.forward_with(g, store, x, false)
    }

    /// Forward pass with parameters loaded as constants, so no gradient
    /// reaches them (the input may still carry one).
    pub fn forward_frozen(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, AutodiffError> {
        self.forward_with(g, store, x, true)
    }

    fn forward_with(&self, g: &mut Graph, store: &ParamStore, x: Var, frozen: bool) -> Result<Var, AutodiffError> {
        let width = g.value(x).cols();
        if width != self.spec.input_width() {
            return Err(AutodiffError::Shape(format!(
                "MLP expects {} input columns, got {}",
                self.spec.input_width(),
                width
            )));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let (w, b) = if frozen {
                (g.frozen_param(store, layer.weight), g.frozen_param(store, layer.bias))
            } else {
                (g.param(store, layer.weight), g.param(store, layer.bias))
            };
            let xw = g.matmul(h, w)?;
            h = g.add(xw, b)?;
            h = if i < last {
                match self.spec.activation {
                    Activation::Elu => g.elu(h)?,
                    Activation::Relu => g.relu(h)?,
                }
            } else {
                match self.spec.output_activation {
                    OutputActivation::Identity => h,
                    OutputActivation::Sigmoid => g.sigmoid(h)?,
                    OutputActivation::Softplus => g.softplus(h)?,
                }
            };
        }
        Ok(h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }

    /// Copies every parameter value from `other` (same architecture).
    pub fn copy_from(&self, other: &Mlp, store: &mut ParamStore) -> Result<(), AutodiffError> {
        if self.spec.layer_sizes != other.spec.layer_sizes {
            return Err(AutodiffError::Shape("copy between different MLP shapes".into()));
        }
        for (dst, src) in self.params().into_iter().zip(other.params()) {
            let value = store.get(src).clone();
            store.set(dst, value)?;
        }
        Ok(())
    }
}
