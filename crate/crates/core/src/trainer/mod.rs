//! Alternating adversarial optimisation for the VEGAN family and the
//! matching loops for TARNet and TARNet+.
//!
//! Each step encodes one balanced batch, updates the prior discriminator on
//! the detached latents, updates the domain discriminator when runtime
//! covariates are available, and finally takes a generator step through the
//! same encoder graph with both discriminators frozen at their new values.
//! The extractor and the decoders have separate optimizers but share that
//! single backward pass.
//!
//! Trainers only ever see runtime *covariates*; outcomes and treatments of
//! the runtime data cannot be passed in.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, Optimizer, OptimizerConfig, OptimizerKind, ParamId, Tensor};
use crate::datagen::CausalDataset;
use crate::metrics::{mmd_rbf, Bandwidth};
use crate::networks::{
    generator_terms, loss_d_beta, loss_d_delta, ArchConfig, ModelCheckpoint, ModelKind, NetworkError, OutcomeScale,
    TarnetModel, TrainedModel, VeganModel,
};
use crate::seed::derive;

const MODEL_STREAM: u64 = 0;
const BATCH_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const RUNTIME_STREAM: u64 = 3;
const PROBE_STREAM: u64 = 4;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training data: {0}")]
    Data(String),
    #[error("non-finite value in {detail} at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize, detail: String },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Even; half treated, half control.
    pub batch_size: usize,
    /// Defaults to `max(1, floor(n_train / batch_size))`.
    pub batches_per_epoch: Option<usize>,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Lets VEGAN / TARNet+ use the runtime covariates when they are given.
    pub use_runtime_da: bool,
    pub d_steps_per_g_step: usize,
    /// Fit the decoders on z-scored outcomes (undone at prediction time).
    pub standardize_outcome: bool,
    /// Record treated/control MMD of the training representation per epoch.
    pub track_mmd: bool,
    pub checkpoint_every: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
    pub arch: ArchConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 64,
            batches_per_epoch: None,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            weight_decay: 1e-2,
            seed: 0,
            use_runtime_da: true,
            d_steps_per_g_step: 1,
            standardize_outcome: true,
            track_mmd: false,
            checkpoint_every: None,
            checkpoint_dir: None,
            arch: ArchConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size < 4 || self.batch_size % 2 != 0 {
            return bad(format!("batch_size must be even and at least 4, got {}", self.batch_size));
        }
        if self.batches_per_epoch == Some(0) {
            return bad("batches_per_epoch must be positive".into());
        }
        if self.d_steps_per_g_step == 0 {
            return bad("d_steps_per_g_step must be positive".into());
        }
        if self.checkpoint_every == Some(0) {
            return bad("checkpoint_every must be positive".into());
        }
        self.optimizer_config().validate().map_err(|e| TrainError::Config(e.to_string()))?;
        self.arch.validate().map_err(|e| TrainError::Config(e.to_string()))
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.optimizer,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..OptimizerConfig::default()
        }
    }

    fn batches(&self, n: usize) -> usize {
        self.batches_per_epoch.unwrap_or((n / self.batch_size).max(1))
    }
}

/// Per-epoch means over batches. Discriminator losses are reported per term
/// (half the two-term cross-entropy), so chance level is ln 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub reconstruction: f64,
    pub d_delta_bce: Option<f64>,
    pub d_beta_bce: Option<f64>,
    pub generator: f64,
    pub mmd_treated_control: Option<f64>,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Treated/control MMD before the first update, when tracked.
    pub initial_mmd_treated_control: Option<f64>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn total_wall_time_ms(&self) -> f64 {
        self.epochs.iter().map(|e| e.wall_time_ms).sum()
    }

    /// `epoch,reconstruction,d_delta_bce,d_beta_bce,generator,mmd_treated_control,wall_time_ms`;
    /// absent values are empty cells.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            "epoch",
            "reconstruction",
            "d_delta_bce",
            "d_beta_bce",
            "generator",
            "mmd_treated_control",
            "wall_time_ms",
        ])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.reconstruction.to_string(),
                opt(e.d_delta_bce),
                opt(e.d_beta_bce),
                e.generator.to_string(),
                opt(e.mmd_treated_control),
                format!("{:.3}", e.wall_time_ms),
            ])?;
        }
        w.flush()
    }
}

/// A balanced minibatch: the first half treated rows, the second half control.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub rows: Vec<usize>,
    pub x: Tensor,
    pub y: Vec<f64>,
    pub t: Vec<u8>,
    /// Standard-normal draws, one row per batch row, for the prior discriminator.
    pub noise: Tensor,
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect()).expect("finite")
}

/// Draws `m/2` treated and `m/2` control rows uniformly with replacement,
/// plus `m` noise rows of width `latent_dim`.
pub fn sample_balanced_batch(
    train: &CausalDataset,
    m: usize,
    latent_dim: usize,
    rng: &mut impl Rng,
) -> Result<Batch, TrainError> {
    if m < 2 || m % 2 != 0 {
        return Err(TrainError::Config(format!("batch size must be even, got {m}")));
    }
    let treated: Vec<usize> = (0..train.n_samples()).filter(|&i| train.t[i] == 1).collect();
    let control: Vec<usize> = (0..train.n_samples()).filter(|&i| train.t[i] == 0).collect();
    if treated.is_empty() || control.is_empty() {
        return Err(TrainError::Data("both treatment groups need at least one row".into()));
    }
    let half = m / 2;
    let mut rows = Vec::with_capacity(m);
    rows.extend((0..half).map(|_| treated[rng.random_range(0..treated.len())]));
    rows.extend((0..half).map(|_| control[rng.random_range(0..control.len())]));
    Ok(Batch {
        x: train.x.select_rows(&rows),
        y: rows.iter().map(|&i| train.y[i]).collect(),
        t: rows.iter().map(|&i| train.t[i]).collect(),
        noise: normal_matrix(m, latent_dim, rng),
        rows,
    })
}

struct Streams {
    batch: ChaCha8Rng,
    noise: ChaCha8Rng,
    runtime: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let rng = |k| ChaCha8Rng::seed_from_u64(derive(seed, &[k]));
        Streams {
            batch: rng(BATCH_STREAM),
            noise: rng(NOISE_STREAM),
            runtime: rng(RUNTIME_STREAM),
        }
    }

    fn runtime_rows(&mut self, x: &Tensor, m: usize) -> Tensor {
        let idx: Vec<usize> = (0..m).map(|_| self.runtime.random_range(0..x.rows())).collect();
        x.select_rows(&idx)
    }
}

fn check_inputs(train: &CausalDataset, runtime: Option<&Tensor>, cfg: &TrainConfig) -> Result<(), TrainError> {
    cfg.validate()?;
    train.validate().map_err(|e| TrainError::Data(e.to_string()))?;
    if let Some(xr) = runtime {
        if xr.cols() != train.n_features() {
            return Err(TrainError::Data(format!(
                "runtime covariates have {} columns, training data {}",
                xr.cols(),
                train.n_features()
            )));
        }
        if xr.rows() == 0 {
            return Err(TrainError::Data("runtime covariates are empty".into()));
        }
    }
    Ok(())
}

/// Tags numeric blow-ups with their position in the run.
fn at(epoch: usize, batch: usize) -> impl Fn(NetworkError) -> TrainError {
    move |e| match e {
        NetworkError::Autodiff(AutodiffError::NonFinite(op)) => TrainError::NonFinite {
            epoch,
            batch,
            detail: op,
        },
        other => TrainError::Network(other),
    }
}

fn finite(v: f64, what: &str, epoch: usize, batch: usize) -> Result<f64, TrainError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(TrainError::NonFinite {
            epoch,
            batch,
            detail: what.to_string(),
        })
    }
}

fn optimizer(cfg: &TrainConfig, params: Vec<ParamId>, store: &crate::autodiff::ParamStore) -> Result<Optimizer, TrainError> {
    Optimizer::new(cfg.optimizer_config(), params, store).map_err(|e| TrainError::Config(e.to_string()))
}

fn treated_control_mmd(rep: &Tensor, t: &[u8]) -> Option<f64> {
    let ti: Vec<usize> = (0..t.len()).filter(|&i| t[i] == 1).collect();
    let ci: Vec<usize> = (0..t.len()).filter(|&i| t[i] == 0).collect();
    mmd_rbf(&rep.select_rows(&ti), &rep.select_rows(&ci), Bandwidth::Median).ok()
}

fn save_checkpoint(cfg: &TrainConfig, epoch: usize, ck: impl FnOnce() -> ModelCheckpoint) -> Result<(), TrainError> {
    if let (Some(every), Some(dir)) = (cfg.checkpoint_every, &cfg.checkpoint_dir) {
        if epoch % every == 0 || epoch == cfg.epochs {
            std::fs::create_dir_all(dir)?;
            let json = serde_json::to_vec(&ck()).expect("checkpoint serializes");
            std::fs::write(dir.join(format!("epoch_{epoch:04}.json")), json)?;
        }
    }
    Ok(())
}

#[derive(Default)]
struct Running {
    n: usize,
    recon: f64,
    d_delta: f64,
    d_beta: f64,
    d_beta_n: usize,
    gen: f64,
}

impl Running {
    fn record(&self, epoch: usize, with_delta: bool, mmd: Option<f64>, start: Instant) -> EpochRecord {
        let n = self.n as f64;
        EpochRecord {
            epoch,
            reconstruction: self.recon / n,
            d_delta_bce: with_delta.then(|| self.d_delta / n),
            d_beta_bce: (self.d_beta_n > 0).then(|| self.d_beta / self.d_beta_n as f64),
            generator: self.gen / n,
            mmd_treated_control: mmd,
            wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        }
    }
}

/// Algorithm of the full model. Runtime covariates, if given and enabled,
/// drive the second-stage domain discriminator.
pub fn train_vegan(
    train: &CausalDataset,
    runtime_x: Option<&Tensor>,
    cfg: &TrainConfig,
) -> Result<(VeganModel, TrainLog), TrainError> {
    train_vegan_as(train, runtime_x, cfg, ModelKind::Vegan)
}

/// The ablation without second-stage adaptation: `D_β` is never trained.
pub fn train_vegan_i(train: &CausalDataset, cfg: &TrainConfig) -> Result<(VeganModel, TrainLog), TrainError> {
    train_vegan_as(train, None, cfg, ModelKind::VeganI)
}

fn train_vegan_as(
    train: &CausalDataset,
    runtime_x: Option<&Tensor>,
    cfg: &TrainConfig,
    kind: ModelKind,
) -> Result<(VeganModel, TrainLog), TrainError> {
    check_inputs(train, runtime_x, cfg)?;
    let runtime_x = runtime_x.filter(|_| cfg.use_runtime_da);
    let mut model = VeganModel::new(train.n_features(), &cfg.arch, derive(cfg.seed, &[MODEL_STREAM]))?;
    let scale = if cfg.standardize_outcome { OutcomeScale::fit(&train.y) } else { OutcomeScale::default() };
    model.outcome_scale = scale;
    let ys = scale.standardize(&train.y);

    let mut opt_phi = optimizer(cfg, model.phi_params(), &model.store)?;
    let mut opt_psi = optimizer(cfg, model.psi_params(), &model.store)?;
    let mut opt_dd = optimizer(cfg, model.d_delta_params(), &model.store)?;
    let mut opt_db = optimizer(cfg, model.d_beta_params(), &model.store)?;
    let mut rng = Streams::new(cfg.seed);
    let (m, l) = (cfg.batch_size, cfg.arch.latent_dim);
    let probe_seed = derive(cfg.seed, &[PROBE_STREAM]);
    let probe = |model: &VeganModel| -> Result<Option<f64>, TrainError> {
        if !cfg.track_mmd {
            return Ok(None);
        }
        Ok(treated_control_mmd(&model.sampled_latents(&train.x, probe_seed)?, &train.t))
    };

    let mut log = TrainLog {
        initial_mmd_treated_control: probe(&model)?,
        epochs: Vec::with_capacity(cfg.epochs),
    };
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut acc = Running::default();
        for b in 0..cfg.batches(train.n_samples()) {
            let err = at(epoch, b);
            let batch = sample_balanced_batch(train, m, l, &mut rng.batch)?;
            let y: Vec<f64> = batch.rows.iter().map(|&i| ys[i]).collect();
            let eps_sr = normal_matrix(m, l, &mut rng.noise);
            let rt = runtime_x.map(|xr| (rng.runtime_rows(xr, m), normal_matrix(m, l, &mut rng.noise)));

            let mut g = Graph::new();
            let xv = g.constant(batch.x.clone());
            let ev = g.constant(eps_sr);
            let z_sr = model.encode_vars(&mut g, xv, Some(ev)).map_err(&err)?.z;
            let z_tr = match &rt {
                Some((xr, er)) => {
                    let xv = g.constant(xr.clone());
                    let ev = g.constant(er.clone());
                    Some(model.encode_vars(&mut g, xv, Some(ev)).map_err(&err)?.z)
                }
                None => None,
            };
            let zs_val = g.value(z_sr).clone();

            let mut dd_loss = 0.0;
            for k in 0..cfg.d_steps_per_g_step {
                let noise = if k == 0 { batch.noise.clone() } else { normal_matrix(m, l, &mut rng.noise) };
                let mut gd = Graph::new();
                let (nv, zv) = (gd.constant(noise), gd.constant(zs_val.clone()));
                let loss = loss_d_delta(&mut gd, &model.d_delta, &model.store, nv, zv).map_err(&err)?;
                dd_loss = finite(gd.value(loss).item().map_err(NetworkError::from)?, "D_delta loss", epoch, b)?;
                let grads = gd.backward(loss).map_err(NetworkError::from)?;
                opt_dd.step(&mut model.store, &grads).map_err(NetworkError::from)?;
            }
            acc.d_delta += dd_loss / 2.0;

            if let Some(z_tr) = z_tr {
                let zt_val = g.value(z_tr).clone();
                let mut db_loss = 0.0;
                for _ in 0..cfg.d_steps_per_g_step {
                    let mut gd = Graph::new();
                    let (a, c) = (gd.constant(zs_val.clone()), gd.constant(zt_val.clone()));
                    let loss = loss_d_beta(&mut gd, &model.d_beta, &model.store, a, c).map_err(&err)?;
                    db_loss = finite(gd.value(loss).item().map_err(NetworkError::from)?, "D_beta loss", epoch, b)?;
                    let grads = gd.backward(loss).map_err(NetworkError::from)?;
                    opt_db.step(&mut model.store, &grads).map_err(NetworkError::from)?;
                }
                acc.d_beta += db_loss / 2.0;
                acc.d_beta_n += 1;
            }

            let terms = generator_terms(&mut g, &model, z_sr, &y, &batch.t, z_tr).map_err(&err)?;
            acc.recon += finite(g.value(terms.reconstruction).item().map_err(NetworkError::from)?, "reconstruction", epoch, b)?;
            acc.gen += finite(g.value(terms.total).item().map_err(NetworkError::from)?, "generator loss", epoch, b)?;
            let grads = g.backward(terms.total).map_err(NetworkError::from)?;
            opt_phi.step(&mut model.store, &grads).map_err(NetworkError::from)?;
            opt_psi.step(&mut model.store, &grads).map_err(NetworkError::from)?;
            acc.n += 1;
        }
        let mmd = probe(&model)?;
        log.epochs.push(acc.record(epoch, true, mmd, start));
        save_checkpoint(cfg, epoch, || model.checkpoint(kind))?;
    }
    Ok((model, log))
}

/// Plain TARNet: factual reconstruction only.
pub fn train_tarnet(train: &CausalDataset, cfg: &TrainConfig) -> Result<(TarnetModel, TrainLog), TrainError> {
    train_tarnet_as(train, None, cfg, ModelKind::Tarnet)
}

/// TARNet with the adversarial domain plug-in on its extractor features.
pub fn train_tarnet_plus(
    train: &CausalDataset,
    runtime_x: Option<&Tensor>,
    cfg: &TrainConfig,
) -> Result<(TarnetModel, TrainLog), TrainError> {
    train_tarnet_as(train, runtime_x, cfg, ModelKind::TarnetPlus)
}

fn train_tarnet_as(
    train: &CausalDataset,
    runtime_x: Option<&Tensor>,
    cfg: &TrainConfig,
    kind: ModelKind,
) -> Result<(TarnetModel, TrainLog), TrainError> {
    check_inputs(train, runtime_x, cfg)?;
    let runtime_x = runtime_x.filter(|_| cfg.use_runtime_da);
    let mut model = TarnetModel::new(train.n_features(), &cfg.arch, derive(cfg.seed, &[MODEL_STREAM]))?;
    let scale = if cfg.standardize_outcome { OutcomeScale::fit(&train.y) } else { OutcomeScale::default() };
    model.outcome_scale = scale;
    let ys = scale.standardize(&train.y);

    let mut opt_ext = optimizer(cfg, model.extractor_params(), &model.store)?;
    let mut opt_psi = optimizer(cfg, model.psi_params(), &model.store)?;
    let mut opt_db = optimizer(cfg, model.d_beta_params(), &model.store)?;
    let mut rng = Streams::new(cfg.seed);
    let (m, l) = (cfg.batch_size, cfg.arch.latent_dim);
    let probe = |model: &TarnetModel| -> Result<Option<f64>, TrainError> {
        if !cfg.track_mmd {
            return Ok(None);
        }
        Ok(treated_control_mmd(&model.features(&train.x)?, &train.t))
    };

    let mut log = TrainLog {
        initial_mmd_treated_control: probe(&model)?,
        epochs: Vec::with_capacity(cfg.epochs),
    };
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut acc = Running::default();
        for b in 0..cfg.batches(train.n_samples()) {
            let err = at(epoch, b);
            // Noise rows are drawn but unused so the batch stream matches VEGAN's.
            let batch = sample_balanced_batch(train, m, l, &mut rng.batch)?;
            let y: Vec<f64> = batch.rows.iter().map(|&i| ys[i]).collect();
            let xr = runtime_x.map(|xr| rng.runtime_rows(xr, m));

            let mut g = Graph::new();
            let xv = g.constant(batch.x.clone());
            let f_sr = model.feature_vars(&mut g, xv).map_err(&err)?;
            let f_tr = match &xr {
                Some(xr) => {
                    let xv = g.constant(xr.clone());
                    Some(model.feature_vars(&mut g, xv).map_err(&err)?)
                }
                None => None,
            };

            if let Some(f_tr) = f_tr {
                let (fs, ft) = (g.value(f_sr).clone(), g.value(f_tr).clone());
                let mut db_loss = 0.0;
                for _ in 0..cfg.d_steps_per_g_step {
                    let mut gd = Graph::new();
                    let (a, c) = (gd.constant(fs.clone()), gd.constant(ft.clone()));
                    let loss = loss_d_beta(&mut gd, &model.d_beta, &model.store, a, c).map_err(&err)?;
                    db_loss = finite(gd.value(loss).item().map_err(NetworkError::from)?, "D_beta loss", epoch, b)?;
                    let grads = gd.backward(loss).map_err(NetworkError::from)?;
                    opt_db.step(&mut model.store, &grads).map_err(NetworkError::from)?;
                }
                acc.d_beta += db_loss / 2.0;
                acc.d_beta_n += 1;
            }

            let (total, recon) =
                crate::networks::tarnet_terms(&mut g, &model, f_sr, &y, &batch.t, f_tr).map_err(&err)?;
            acc.recon += finite(g.value(recon).item().map_err(NetworkError::from)?, "reconstruction", epoch, b)?;
            acc.gen += finite(g.value(total).item().map_err(NetworkError::from)?, "total loss", epoch, b)?;
            let grads = g.backward(total).map_err(NetworkError::from)?;
            opt_ext.step(&mut model.store, &grads).map_err(NetworkError::from)?;
            opt_psi.step(&mut model.store, &grads).map_err(NetworkError::from)?;
            acc.n += 1;
        }
        let mmd = probe(&model)?;
        log.epochs.push(acc.record(epoch, false, mmd, start));
        save_checkpoint(cfg, epoch, || model.checkpoint(kind))?;
    }
    Ok((model, log))
}

/// Dispatches on the model kind. Runtime covariates are ignored by the
/// variants that do not adapt to them.
pub fn train_model(
    kind: ModelKind,
    train: &CausalDataset,
    runtime_x: Option<&Tensor>,
    cfg: &TrainConfig,
) -> Result<(TrainedModel, TrainLog), TrainError> {
    Ok(match kind {
        ModelKind::Vegan => {
            let (m, l) = train_vegan(train, runtime_x, cfg)?;
            (TrainedModel::Vegan(m), l)
        }
        ModelKind::VeganI => {
            let (m, l) = train_vegan_i(train, cfg)?;
            (TrainedModel::Vegan(m), l)
        }
        ModelKind::Tarnet => {
            let (m, l) = train_tarnet(train, cfg)?;
            (TrainedModel::Tarnet(m), l)
        }
        ModelKind::TarnetPlus => {
            let (m, l) = train_tarnet_plus(train, runtime_x, cfg)?;
            (TrainedModel::Tarnet(m), l)
        }
    })
}

#[cfg(test)]
mod tests;
