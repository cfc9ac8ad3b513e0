use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use vegan_core::corruption::{check_not_wiped, corrupt, CorruptionSpec, Targets};
use vegan_core::datagen::{
    generate, load_csv, split, write_csv, CausalDataset, CsvSchema, GeneratorConfig, Preprocessor, ResponseSurface,
};
use vegan_core::harness::{emit_report, run_experiment, write_timing, ExperimentConfig, ExperimentReport, ReportFormat};
use vegan_core::metrics::{eps_cate, mmd_rbf, pehe, volatility, Bandwidth, MetricsReport};
use vegan_core::networks::{ModelCheckpoint, ModelKind, TrainedModel};
use vegan_core::trainer::{train_model, TrainConfig};

use crate::{Cli, Command, CorruptArgs, EvaluateArgs, GenerateArgs, ReportArgs};

/// Bad or missing configuration; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

/// What `train` reads from `--config`. Relative paths are resolved against
/// the directory of the config file.
#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct TrainJob {
    model: ModelKind,
    data: PathBuf,
    /// Unlabelled runtime covariates for the adapting models.
    runtime: Option<PathBuf>,
    #[serde(default)]
    schema: CsvSchema,
    #[serde(default)]
    train: TrainConfig,
}

pub fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Generate(args) => generate_cmd(cli, args),
        Command::Corrupt(args) => corrupt_cmd(cli, args),
        Command::Train => train_cmd(cli),
        Command::Evaluate(args) => evaluate_cmd(cli, args),
        Command::Experiment => return experiment_cmd(cli),
        Command::Report(args) => report_cmd(cli, args),
    }?;
    Ok(ExitCode::SUCCESS)
}

fn require_out(cli: &Cli) -> Result<&Path> {
    cli.out.as_deref().ok_or_else(|| config_err("--out is required for this command"))
}

fn read_config_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))
}

fn parse_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_config_text(path)?;
    let parsed = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn save_csv(ds: &CausalDataset, path: &Path) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    write_csv(ds, BufWriter::new(file))?;
    Ok(())
}

fn load(path: &Path, schema: &CsvSchema) -> Result<CausalDataset> {
    load_csv(path, schema).with_context(|| format!("cannot load {}", path.display()))
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("cannot write {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn generate_cmd(cli: &Cli, args: &GenerateArgs) -> Result<()> {
    let out = require_out(cli)?;
    let seed = cli.seed.unwrap_or(0);
    let mut cfg = match &cli.config {
        Some(path) => parse_config::<GeneratorConfig>(path)?,
        None => {
            let surface: ResponseSurface = serde_json::from_value(serde_json::Value::String(args.surface.clone()))
                .map_err(|_| config_err(format!("unknown surface `{}` (ihdp_like or acic_like)", args.surface)))?;
            match surface {
                ResponseSurface::IhdpLike => GeneratorConfig::ihdp_like(seed),
                ResponseSurface::AcicLike => GeneratorConfig::acic_like(seed),
            }
        }
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.n_samples {
        cfg.n_samples = n;
    }
    if let Some(s) = args.selection_bias {
        cfg.selection_bias_strength = s;
    }
    cfg.validate().map_err(|e| config_err(e.to_string()))?;
    let raw = generate(&cfg)?;
    std::fs::create_dir_all(out)?;
    if args.raw {
        save_csv(&raw, &out.join("data.csv"))?;
        log::info!("wrote {} rows to {}", raw.n_samples(), out.join("data.csv").display());
        return Ok(());
    }
    let (train_raw, test_raw, _) = split(&raw, args.split_ratio, cfg.seed)?;
    let prep = Preprocessor::fit(&train_raw, Default::default())?;
    save_csv(&prep.apply(&train_raw)?, &out.join("train.csv"))?;
    save_csv(&prep.apply(&test_raw)?, &out.join("test.csv"))?;
    write_json(&prep, Some(&out.join("preprocessor.json")))?;
    log::info!(
        "wrote {} training and {} test rows to {}",
        train_raw.n_samples(),
        test_raw.n_samples(),
        out.display()
    );
    Ok(())
}

fn corrupt_cmd(cli: &Cli, args: &CorruptArgs) -> Result<()> {
    let out = require_out(cli)?;
    let schema = CsvSchema::default();
    let ds = load(&args.input, &schema)?;
    let means = match &args.reference {
        Some(r) => load(r, &schema)?.column_means(),
        None => ds.column_means(),
    };
    let targets = if args.targets.trim() == "all" {
        Targets::all()
    } else {
        Targets::named(args.targets.split(',').map(str::trim).filter(|s| !s.is_empty()))
    };
    let spec = CorruptionSpec {
        noise_variance: args.noise_variance,
        ..CorruptionSpec::new(targets, args.cl, cli.seed.unwrap_or(0))
    };
    spec.validate().map_err(|e| config_err(e.to_string()))?;
    let corrupted = corrupt(&ds, &spec, &means)?;
    if check_not_wiped(&corrupted.x).is_err() {
        log::warn!("every covariate of the output is missing; evaluation on it will be refused");
    }
    save_csv(&corrupted, out)?;
    Ok(())
}

fn train_cmd(cli: &Cli) -> Result<()> {
    let path = cli.config.as_deref().ok_or_else(|| config_err("train needs --config <job.toml>"))?;
    let mut job: TrainJob = parse_config(path)?;
    if let Some(s) = cli.seed {
        job.train.seed = s;
    }
    job.train.validate().map_err(|e| config_err(e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let train = load(&base.join(&job.data), &job.schema)?;
    let runtime = match &job.runtime {
        // Only the covariates reach the trainer.
        Some(p) => Some(load(&base.join(p), &job.schema)?.x),
        None => None,
    };
    if job.train.checkpoint_every.is_some() && job.train.checkpoint_dir.is_none() {
        job.train.checkpoint_dir = Some(out.join("checkpoints"));
    }
    let (model, log) = train_model(job.model, &train, runtime.as_ref(), &job.train)?;
    std::fs::create_dir_all(&out)?;
    write_json(&model.checkpoint(job.model), Some(&out.join("model.json")))?;
    log.write_csv(File::create(out.join("train_log.csv"))?)?;
    write_json(&log, Some(&out.join("train_log.json")))?;
    if let Some(last) = log.last() {
        log::info!(
            "{} trained for {} epochs in {:.1}s; final reconstruction {:.4}",
            job.model,
            log.epochs.len(),
            log.total_wall_time_ms() / 1e3,
            last.reconstruction
        );
    }
    Ok(())
}

fn evaluate_cmd(cli: &Cli, args: &EvaluateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.checkpoint)
        .with_context(|| format!("cannot read {}", args.checkpoint.display()))?;
    let ck: ModelCheckpoint = serde_json::from_str(&text).context("malformed checkpoint")?;
    let model = TrainedModel::from_checkpoint(&ck)?;
    let schema = CsvSchema::default();
    let ds = load(&args.data, &schema)?;
    check_not_wiped(&ds.x).with_context(|| format!("refusing to evaluate {}", args.data.display()))?;
    let Some(tau) = ds.true_ite() else {
        bail!("{} has no mu0/mu1 columns; effects cannot be scored", args.data.display());
    };
    let seed = cli.seed.unwrap_or(0);
    let pred = model.predict_ite(&ds.x)?;
    let rep = model.representation(&ds.x, seed)?;
    let (treated, control): (Vec<usize>, Vec<usize>) = (0..ds.n_samples()).partition(|&i| ds.t[i] == 1);
    let mut report = MetricsReport {
        sqrt_pehe: pehe(&pred.tau, &tau)?,
        eps_cate: eps_cate(&pred.tau, &tau)?,
        volatility_pct: None,
        mmd_treated_control: mmd_rbf(&rep.select_rows(&treated), &rep.select_rows(&control), Bandwidth::Median)
            .map(|v| v.max(0.0))
            .unwrap_or(0.0),
        mmd_train_runtime: None,
        n_eval: ds.n_samples(),
        seed,
    };
    if let Some(r) = &args.reference {
        let reference = load(r, &schema)?;
        let ref_tau = reference.true_ite().context("reference data has no mu0/mu1 columns")?;
        let e_in = pehe(&model.predict_ite(&reference.x)?.tau, &ref_tau)?;
        report.volatility_pct = volatility(e_in, report.sqrt_pehe).ok();
        let ref_rep = model.representation(&reference.x, seed)?;
        report.mmd_train_runtime = mmd_rbf(&ref_rep, &rep, Bandwidth::Median).ok().map(|v| v.max(0.0));
    }
    write_json(&report, cli.out.as_deref())
}

fn experiment_cmd(cli: &Cli) -> Result<ExitCode> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| config_err(e.to_string()))?,
        None => ExperimentConfig::default_ihdp(),
    };
    if let Some(s) = cli.seed {
        cfg.experiment_seed = s;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| config_err("experiment needs --out or output_dir in the config"))?;
    cfg.validate().map_err(|e| config_err(e.to_string()))?;
    let result = run_experiment(&cfg, cli.threads)?;
    emit_report(&result.report, &out, &ReportFormat::ALL)?;
    write_timing(&result.timings, &out)?;
    let failed = result.report.failed_runs();
    log::info!(
        "{}: {} runs in {:.1}s, report in {}",
        cfg.name,
        result.report.runs.len(),
        result.wall_time_ms / 1e3,
        out.display()
    );
    if failed > 0 {
        eprintln!("{failed} run(s) failed; see summary.md");
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn report_cmd(cli: &Cli, args: &ReportArgs) -> Result<()> {
    let out = require_out(cli)?;
    let text = std::fs::read_to_string(&args.input).with_context(|| format!("cannot read {}", args.input.display()))?;
    let report = ExperimentReport::from_json(&text)?;
    emit_report(&report, out, &ReportFormat::ALL)?;
    Ok(())
}
