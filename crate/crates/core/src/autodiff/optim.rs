use serde::{Deserialize, Serialize};

use super::{AutodiffError, Gradients, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64, weight_decay: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate,
            weight_decay,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AutodiffError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(AutodiffError::InvalidSpec(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(AutodiffError::InvalidSpec("negative weight decay".into()));
        }
        Ok(())
    }
}

/// First-order optimizer over a fixed subset of a [`ParamStore`].
///
/// SGD: `p ← p − α(g + wd·p)`.
/// Adam: bias-corrected moments with decoupled decay,
/// `p ← p − α·wd·p − α·m̂/(√v̂ + ε)`.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    params: Vec<ParamId>,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, params: Vec<ParamId>, store: &ParamStore) -> Result<Self, AutodiffError> {
        cfg.validate()?;
        let sizes: Vec<usize> = params.iter().map(|&p| store.get(p).numel()).collect();
        let zeros = |sizes: &[usize]| sizes.iter().map(|&n| vec![0.0; n]).collect();
        Ok(Optimizer {
            cfg,
            first: zeros(&sizes),
            second: zeros(&sizes),
            params,
            step: 0,
        })
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Every managed parameter needs a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<(), AutodiffError> {
        for &p in &self.params {
            match grads.param(p) {
                Some(g) if g.shape() == store.get(p).shape() => {}
                Some(g) => {
                    return Err(AutodiffError::Shape(format!(
                        "gradient for {} has shape {:?}",
                        store.name(p),
                        g.shape()
                    )))
                }
                None => return Err(AutodiffError::MissingGradient(store.name(p).to_string())),
            }
        }
        self.step += 1;
        let OptimizerConfig {
            kind,
            learning_rate: lr,
            weight_decay: wd,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));

        for (k, &p) in self.params.iter().enumerate() {
            let g = grads.param(p).expect("checked above").data();
            let values = store.get_mut(p).data_mut();
            match kind {
                OptimizerKind::Sgd => {
                    for (v, gi) in values.iter_mut().zip(g) {
                        *v -= lr * (gi + wd * *v);
                    }
                }
                OptimizerKind::Adam => {
                    let (m, s) = (&mut self.first[k], &mut self.second[k]);
                    for i in 0..values.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        s[i] = beta2 * s[i] + (1.0 - beta2) * g[i] * g[i];
                        let update = (m[i] / c1) / ((s[i] / c2).sqrt() + eps);
                        values[i] -= lr * wd * values[i] + lr * update;
                    }
                }
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(AutodiffError::NonFinite(format!("update of {}", store.name(p))));
            }
        }
        Ok(())
    }
}
