//! Experiment orchestration: the (model × corruption level × seed) grid,
//! per-cell aggregation and report emission.
//!
//! Each seed draws (or loads) one dataset, splits it 3:1, fits the
//! preprocessing on the training part and corrupts the held-out part once per
//! level. Models that adapt to runtime data are trained once per level with
//! that level's corrupted covariates; the others are trained once per seed
//! and evaluated at every level. Runs are independent and may execute in
//! parallel; results are collected in a fixed order, so the report does not
//! depend on the thread count.

mod config;
mod report;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::corruption::{corrupt, CorruptionSpec};
use crate::datagen::{generate, load_csv, split, CausalDataset, Preprocessor};
use crate::metrics::{eps_cate, mmd_rbf, pehe, volatility, Bandwidth, MetricsReport, Summary};
use crate::networks::{ModelKind, TrainedModel};
use crate::seed::derive;
use crate::trainer::{train_model, TrainConfig, TrainLog};

pub use config::{CorruptionGrid, DatasetSpec, ExperimentConfig};
pub use report::{emit_report, render_markdown, write_timing, ReportFormat};

const SPLIT_TAG: u64 = 0;
const CORRUPTION_TAG: u64 = 1;
const PROBE_TAG: u64 = 2;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("data preparation failed for seed {seed}: {reason}")]
    Data { seed: u64, reason: String },
    #[error("report: {0}")]
    Report(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// One model evaluated at one corruption level for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub model: ModelKind,
    pub seed: u64,
    pub cl: f64,
    /// On the (uncorrupted) training split.
    pub in_sample: Option<MetricsReport>,
    /// On the held-out split corrupted at `cl`; carries the volatility
    /// relative to `in_sample`.
    pub out_of_sample: Option<MetricsReport>,
    pub final_reconstruction: Option<f64>,
    pub final_d_delta_bce: Option<f64>,
    pub final_d_beta_bce: Option<f64>,
    pub failure: Option<String>,
}

/// Aggregate over seeds of one (model, cl) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub model: ModelKind,
    pub cl: f64,
    pub sqrt_pehe: Option<Summary>,
    pub eps_cate: Option<Summary>,
    pub in_sample_sqrt_pehe: Option<Summary>,
    /// Relative change between the mean in-sample and mean out-of-sample
    /// √PEHE of the models in this cell, in percent.
    pub volatility_pct: Option<f64>,
    pub mmd_treated_control: Option<Summary>,
    pub mmd_train_runtime: Option<Summary>,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InSampleRow {
    pub model: ModelKind,
    pub sqrt_pehe: Option<Summary>,
    pub eps_cate: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHash {
    pub seed: u64,
    pub sha256: String,
}

/// Everything `emit_report` writes. Contains no wall-clock values, so two runs
/// of the same config compare equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub config_sha256: String,
    pub dataset_hashes: Vec<DatasetHash>,
    /// One cell per configured (model, cl).
    pub cells: Vec<Cell>,
    /// Uncorrupted held-out evaluation (`cl = 0`) when it was not already
    /// part of the grid.
    pub clean: Vec<Cell>,
    /// Training-split metrics of the models trained at the lowest level.
    pub in_sample: Vec<InSampleRow>,
    pub runs: Vec<RunRecord>,
}

impl ExperimentReport {
    pub fn cell(&self, model: ModelKind, cl: f64) -> Option<&Cell> {
        self.cells.iter().chain(&self.clean).find(|c| c.model == model && c.cl == cl)
    }

    pub fn runs_for(&self, model: ModelKind, cl: f64) -> impl Iterator<Item = &RunRecord> {
        self.runs.iter().filter(move |r| r.model == model && r.cl == cl)
    }

    pub fn failed_runs(&self) -> usize {
        self.runs.iter().filter(|r| r.failure.is_some()).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Report(e.to_string()))
    }
}

/// Wall time of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub model: ModelKind,
    pub seed: u64,
    /// Level of the runtime data the model adapted to, if any.
    pub train_cl: Option<f64>,
    pub epochs: usize,
    pub total_ms: f64,
    pub mean_epoch_ms: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub timings: Vec<TimingRecord>,
    pub wall_time_ms: f64,
}

/// One seed's data: preprocessed training split and the held-out split at
/// every level.
struct Prepared {
    seed: u64,
    train: CausalDataset,
    tests: Vec<(f64, CausalDataset)>,
    hash: String,
}

struct Task {
    model: ModelKind,
    seed_idx: usize,
    /// Index into the levels for adapting models; `None` trains once.
    level: Option<usize>,
}

struct TaskOutcome {
    runs: Vec<RunRecord>,
    timing: Option<TimingRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn dataset_hash(ds: &CausalDataset) -> String {
    let mut h = Sha256::new();
    for v in ds.x.data().iter().chain(&ds.y) {
        h.update(v.to_le_bytes());
    }
    h.update(&ds.t);
    for mu in [&ds.mu0, &ds.mu1].into_iter().flatten() {
        for v in mu {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn prepare(cfg: &ExperimentConfig, seed: u64, csv: Option<&CausalDataset>, levels: &[f64]) -> Result<Prepared, String> {
    let raw = match (csv, cfg.dataset.generator_config(seed)) {
        (Some(ds), _) => ds.clone(),
        (None, Some(g)) => generate(&g).map_err(|e| e.to_string())?,
        (None, None) => unreachable!("CSV datasets are loaded before preparation"),
    };
    let hash = dataset_hash(&raw);
    let split_seed = derive(cfg.experiment_seed, &[seed, SPLIT_TAG]);
    let (train_raw, test_raw, _) = split(&raw, cfg.split_ratio, split_seed).map_err(|e| e.to_string())?;
    let prep = Preprocessor::fit(&train_raw, cfg.preproc).map_err(|e| e.to_string())?;
    let train = prep.apply(&train_raw).map_err(|e| e.to_string())?;
    let test = prep.apply(&test_raw).map_err(|e| e.to_string())?;
    let targets = cfg.targets_for(&train.feature_names);
    let means = train.column_means();
    let tests = levels
        .iter()
        .map(|&cl| {
            let spec = CorruptionSpec {
                noise_variance: cfg.corruption.noise_variance,
                ..CorruptionSpec::new(
                    targets.clone(),
                    cl,
                    derive(cfg.experiment_seed, &[seed, CORRUPTION_TAG, cl.to_bits()]),
                )
            };
            corrupt(&test, &spec, &means).map(|ds| (cl, ds)).map_err(|e| e.to_string())
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Prepared { seed, train, tests, hash })
}

fn floored_mmd(a: &Tensor, b: &Tensor) -> Option<f64> {
    mmd_rbf(a, b, Bandwidth::Median).ok().map(|v| v.max(0.0))
}

fn treated_control_mmd(rep: &Tensor, t: &[u8]) -> Option<f64> {
    let (treated, control): (Vec<usize>, Vec<usize>) = (0..t.len()).partition(|&i| t[i] == 1);
    floored_mmd(&rep.select_rows(&treated), &rep.select_rows(&control))
}

fn evaluate_on(model: &TrainedModel, ds: &CausalDataset, seed: u64) -> Result<MetricsReport, String> {
    let tau = ds.true_ite().ok_or("dataset has no ground-truth potential outcomes")?;
    let pred = model.predict_ite(&ds.x).map_err(|e| e.to_string())?;
    let rep = model
        .representation(&ds.x, derive(seed, &[PROBE_TAG]))
        .map_err(|e| e.to_string())?;
    Ok(MetricsReport {
        sqrt_pehe: pehe(&pred.tau, &tau).map_err(|e| e.to_string())?,
        eps_cate: eps_cate(&pred.tau, &tau).map_err(|e| e.to_string())?,
        volatility_pct: None,
        mmd_treated_control: treated_control_mmd(&rep, &ds.t).unwrap_or(0.0),
        mmd_train_runtime: None,
        n_eval: ds.n_samples(),
        seed,
    })
}

/// Metrics of one trained model on the training split and on one corrupted
/// held-out split.
fn evaluate_pair(model: &TrainedModel, train: &CausalDataset, test: &CausalDataset, seed: u64) -> Result<(MetricsReport, MetricsReport), String> {
    let inside = evaluate_on(model, train, seed)?;
    let mut outside = evaluate_on(model, test, seed)?;
    let probe = derive(seed, &[PROBE_TAG]);
    let rep_train = model.representation(&train.x, probe).map_err(|e| e.to_string())?;
    let rep_test = model.representation(&test.x, probe).map_err(|e| e.to_string())?;
    outside.mmd_train_runtime = floored_mmd(&rep_train, &rep_test);
    outside.volatility_pct = volatility(inside.sqrt_pehe, outside.sqrt_pehe).ok();
    Ok((inside, outside))
}

fn run_task(task: &Task, data: &Prepared, base: &TrainConfig) -> TaskOutcome {
    let runtime = task.level.map(|l| &data.tests[l]);
    let cfg = TrainConfig {
        seed: derive(base.seed, &[data.seed]),
        checkpoint_every: None,
        checkpoint_dir: None,
        ..base.clone()
    };
    let start = Instant::now();
    let trained = train_model(task.model, &data.train, runtime.map(|(_, ds)| &ds.x), &cfg);
    let total_ms = start.elapsed().as_secs_f64() * 1e3;
    let eval_levels: Vec<&(f64, CausalDataset)> = match runtime {
        Some(level) => vec![level],
        None => data.tests.iter().collect(),
    };
    let blank = |cl: f64, failure: String| RunRecord {
        model: task.model,
        seed: data.seed,
        cl,
        in_sample: None,
        out_of_sample: None,
        final_reconstruction: None,
        final_d_delta_bce: None,
        final_d_beta_bce: None,
        failure: Some(failure),
    };
    let (model, log): (TrainedModel, TrainLog) = match trained {
        Ok(ok) => ok,
        Err(e) => {
            log::warn!("{} seed {} failed: {e}", task.model, data.seed);
            return TaskOutcome {
                runs: eval_levels.iter().map(|(cl, _)| blank(*cl, format!("training: {e}"))).collect(),
                timing: None,
            };
        }
    };
    let last = log.last();
    let runs = eval_levels
        .iter()
        .map(|(cl, test)| match evaluate_pair(&model, &data.train, test, data.seed) {
            Ok((inside, outside)) => RunRecord {
                in_sample: Some(inside),
                out_of_sample: Some(outside),
                final_reconstruction: last.map(|e| e.reconstruction),
                final_d_delta_bce: last.and_then(|e| e.d_delta_bce),
                final_d_beta_bce: last.and_then(|e| e.d_beta_bce),
                failure: None,
                ..blank(*cl, String::new())
            },
            Err(e) => blank(*cl, format!("evaluation: {e}")),
        })
        .collect();
    log::info!("{} seed {} trained in {:.1}s", task.model, data.seed, total_ms / 1e3);
    TaskOutcome {
        runs,
        timing: Some(TimingRecord {
            model: task.model,
            seed: data.seed,
            train_cl: runtime.map(|(cl, _)| *cl),
            epochs: log.epochs.len(),
            total_ms,
            mean_epoch_ms: log.total_wall_time_ms() / log.epochs.len().max(1) as f64,
        }),
    }
}

fn summarize(values: impl Iterator<Item = f64>) -> Option<Summary> {
    Summary::of(&values.collect::<Vec<_>>())
}

fn aggregate(model: ModelKind, cl: f64, runs: &[RunRecord]) -> Cell {
    let mine: Vec<&RunRecord> = runs.iter().filter(|r| r.model == model && r.cl == cl).collect();
    let outs = || mine.iter().filter_map(|r| r.out_of_sample.as_ref());
    let sqrt_pehe = summarize(outs().map(|m| m.sqrt_pehe));
    let in_sample_sqrt_pehe = summarize(mine.iter().filter_map(|r| r.in_sample.as_ref()).map(|m| m.sqrt_pehe));
    let volatility_pct = match (in_sample_sqrt_pehe, sqrt_pehe) {
        (Some(i), Some(o)) => volatility(i.mean, o.mean).ok(),
        _ => None,
    };
    Cell {
        model,
        cl,
        sqrt_pehe,
        eps_cate: summarize(outs().map(|m| m.eps_cate)),
        in_sample_sqrt_pehe,
        volatility_pct,
        mmd_treated_control: summarize(outs().map(|m| m.mmd_treated_control)),
        mmd_train_runtime: summarize(outs().filter_map(|m| m.mmd_train_runtime)),
        failures: mine
            .iter()
            .filter_map(|r| r.failure.as_ref().map(|f| format!("seed {}: {f}", r.seed)))
            .collect(),
    }
}

/// Runs the whole grid on a pool of `threads` workers (0 = all cores).
pub fn run_experiment(cfg: &ExperimentConfig, threads: usize) -> Result<ExperimentOutput, HarnessError> {
    cfg.validate()?;
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    let levels = cfg.levels();
    let csv = match &cfg.dataset {
        DatasetSpec::Csv { path, schema } => Some(load_csv(path, schema).map_err(|e| HarnessError::Config(format!(
            "cannot load {}: {e}",
            path.display()
        )))?),
        DatasetSpec::Generator { .. } => None,
    };

    let prepared: Vec<Prepared> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| prepare(cfg, seed, csv.as_ref(), &levels).map_err(|reason| HarnessError::Data { seed, reason }))
            .collect::<Result<_, _>>()
    })?;

    let mut tasks = Vec::new();
    for (seed_idx, _) in prepared.iter().enumerate() {
        for &model in &cfg.models {
            if model.uses_runtime() {
                tasks.extend((0..levels.len()).map(|l| Task { model, seed_idx, level: Some(l) }));
            } else {
                tasks.push(Task { model, seed_idx, level: None });
            }
        }
    }
    log::info!("{}: {} training runs over {} seeds", cfg.name, tasks.len(), prepared.len());
    let outcomes: Vec<TaskOutcome> =
        pool.install(|| tasks.par_iter().map(|t| run_task(t, &prepared[t.seed_idx], &cfg.train)).collect());

    let mut runs = Vec::new();
    let mut timings = Vec::new();
    for o in outcomes {
        runs.extend(o.runs);
        timings.extend(o.timing);
    }
    let order = |r: &RunRecord| (cfg.models.iter().position(|m| *m == r.model), levels.iter().position(|c| *c == r.cl), r.seed);
    runs.sort_by_key(order);

    let grid: Vec<f64> = {
        let mut cls = cfg.corruption.cls.clone();
        cls.sort_by(f64::total_cmp);
        cls.dedup();
        cls
    };
    let mut cells = Vec::new();
    let mut clean = Vec::new();
    for &model in &cfg.models {
        for &cl in &levels {
            let cell = aggregate(model, cl, &runs);
            if grid.contains(&cl) {
                cells.push(cell);
            } else {
                clean.push(cell);
            }
        }
    }
    let lowest = levels[0];
    let in_sample = cfg
        .models
        .iter()
        .map(|&model| {
            let ins = || runs.iter().filter(|r| r.model == model && r.cl == lowest).filter_map(|r| r.in_sample.as_ref());
            InSampleRow {
                model,
                sqrt_pehe: summarize(ins().map(|m| m.sqrt_pehe)),
                eps_cate: summarize(ins().map(|m| m.eps_cate)),
            }
        })
        .collect();

    let config_json = serde_json::to_string(cfg).expect("config serializes");
    let report = ExperimentReport {
        config: cfg.clone(),
        config_sha256: sha256_hex(config_json.as_bytes()),
        dataset_hashes: prepared.iter().map(|p| DatasetHash { seed: p.seed, sha256: p.hash.clone() }).collect(),
        cells,
        clean,
        in_sample,
        runs,
    };
    Ok(ExperimentOutput {
        report,
        timings,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}
