use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Cell, ExperimentReport, HarnessError, TimingRecord};
use crate::metrics::Summary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Markdown];
}

fn num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn mean(s: &Option<Summary>) -> Option<f64> {
    s.map(|s| s.mean)
}

fn stderr(s: &Option<Summary>) -> Option<f64> {
    s.map(|s| s.stderr)
}

/// Clean rows first, then the corrupted grid, each ordered by model then level.
fn all_cells(report: &ExperimentReport) -> Vec<&Cell> {
    let models = &report.config.models;
    let mut cells: Vec<&Cell> = report.clean.iter().chain(&report.cells).collect();
    cells.sort_by(|a, b| {
        let pos = |c: &Cell| models.iter().position(|m| *m == c.model);
        pos(a).cmp(&pos(b)).then(a.cl.total_cmp(&b.cl))
    });
    cells
}

fn write_table(path: PathBuf, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(&path).map_err(|e| HarnessError::Report(format!("{}: {e}", path.display())))?;
    let csv_err = |e: csv::Error| HarnessError::Report(e.to_string());
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `model,cl,mean,stderr`; the in-sample row has an empty level.
fn metric_rows(report: &ExperimentReport, pick: impl Fn(&Cell) -> &Option<Summary>, in_sample: impl Fn(&super::InSampleRow) -> &Option<Summary>) -> Vec<Vec<String>> {
    let mut rows: Vec<Vec<String>> = report
        .in_sample
        .iter()
        .map(|r| vec![r.model.to_string(), String::new(), num(mean(in_sample(r))), num(stderr(in_sample(r)))])
        .collect();
    rows.extend(all_cells(report).into_iter().map(|c| {
        let s = pick(c);
        vec![c.model.to_string(), c.cl.to_string(), num(mean(s)), num(stderr(s))]
    }));
    rows
}

fn write_csvs(report: &ExperimentReport, dir: &Path) -> Result<(), HarnessError> {
    let header = ["model", "cl", "mean", "stderr"];
    write_table(dir.join("sqrt_pehe.csv"), &header, metric_rows(report, |c| &c.sqrt_pehe, |r| &r.sqrt_pehe))?;
    write_table(dir.join("eps_cate.csv"), &header, metric_rows(report, |c| &c.eps_cate, |r| &r.eps_cate))?;
    write_table(
        dir.join("volatility.csv"),
        &["model", "cl", "delta_pct"],
        report
            .cells
            .iter()
            .map(|c| vec![c.model.to_string(), c.cl.to_string(), num(c.volatility_pct)])
            .collect(),
    )?;
    write_table(
        dir.join("mmd.csv"),
        &[
            "model",
            "cl",
            "treated_control_mean",
            "treated_control_stderr",
            "train_runtime_mean",
            "train_runtime_stderr",
        ],
        all_cells(report)
            .into_iter()
            .map(|c| {
                vec![
                    c.model.to_string(),
                    c.cl.to_string(),
                    num(mean(&c.mmd_treated_control)),
                    num(stderr(&c.mmd_treated_control)),
                    num(mean(&c.mmd_train_runtime)),
                    num(stderr(&c.mmd_train_runtime)),
                ]
            })
            .collect(),
    )?;
    write_table(
        dir.join("runs.csv"),
        &[
            "model",
            "seed",
            "cl",
            "in_sample_sqrt_pehe",
            "in_sample_eps_cate",
            "sqrt_pehe",
            "eps_cate",
            "volatility_pct",
            "mmd_treated_control",
            "mmd_train_runtime",
            "reconstruction",
            "d_delta_bce",
            "d_beta_bce",
            "failure",
        ],
        report
            .runs
            .iter()
            .map(|r| {
                let i = r.in_sample.as_ref();
                let o = r.out_of_sample.as_ref();
                vec![
                    r.model.to_string(),
                    r.seed.to_string(),
                    r.cl.to_string(),
                    num(i.map(|m| m.sqrt_pehe)),
                    num(i.map(|m| m.eps_cate)),
                    num(o.map(|m| m.sqrt_pehe)),
                    num(o.map(|m| m.eps_cate)),
                    num(o.and_then(|m| m.volatility_pct)),
                    num(o.map(|m| m.mmd_treated_control)),
                    num(o.and_then(|m| m.mmd_train_runtime)),
                    num(r.final_reconstruction),
                    num(r.final_d_delta_bce),
                    num(r.final_d_beta_bce),
                    r.failure.clone().unwrap_or_default(),
                ]
            })
            .collect(),
    )
}

fn pm(s: &Option<Summary>) -> String {
    match s {
        Some(s) => format!("{:.3} ± {:.3}", s.mean, s.stderr),
        None => "failed".into(),
    }
}

fn pct(label: f64) -> String {
    if label == 0.0 {
        "clean".into()
    } else {
        format!("{:.1}%", label * 100.0)
    }
}

/// Human-readable summary: one table per metric plus the config echo.
pub fn render_markdown(report: &ExperimentReport) -> String {
    let cfg = &report.config;
    let mut md = String::new();
    let _ = writeln!(md, "# {}\n", cfg.name);
    let _ = writeln!(
        md,
        "Seeds: {}. Values are mean ± standard error over seeds (sample sd / √n).\n",
        cfg.seeds.len()
    );
    let _ = writeln!(
        md,
        "ε_CATE is the absolute error of the average effect, |mean(τ̂) − mean(τ)|. \
         √PEHE is the root mean squared error of the individual effects. \
         Volatility Δ is 100·|in-sample − corrupted| / in-sample of the mean √PEHE \
         of the same trained models. Out-of-sample rows use the held-out split \
         corrupted at the given level; `clean` is the held-out split uncorrupted.\n"
    );

    let cells = all_cells(report);
    let mut levels: Vec<f64> = cells.iter().map(|c| c.cl).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let head = |md: &mut String| {
        let _ = write!(md, "| model | in-sample |");
        for &cl in &levels {
            let _ = write!(md, " {} |", pct(cl));
        }
        let _ = writeln!(md, "\n|---|---|{}", "---|".repeat(levels.len()));
    };
    for (title, pick, pick_in) in [
        (
            "√PEHE",
            (|c: &Cell| c.sqrt_pehe) as fn(&Cell) -> Option<Summary>,
            (|r: &super::InSampleRow| r.sqrt_pehe) as fn(&super::InSampleRow) -> Option<Summary>,
        ),
        ("ε_CATE", |c: &Cell| c.eps_cate, |r: &super::InSampleRow| r.eps_cate),
    ] {
        let _ = writeln!(md, "## {title}\n");
        head(&mut md);
        for &model in &cfg.models {
            let inside = report.in_sample.iter().find(|r| r.model == model).and_then(pick_in);
            let _ = write!(md, "| {model} | {} |", pm(&inside));
            for &cl in &levels {
                let cell = cells.iter().find(|c| c.model == model && c.cl == cl);
                let _ = write!(md, " {} |", cell.map(|c| pm(&pick(c))).unwrap_or_default());
            }
            let _ = writeln!(md);
        }
        let _ = writeln!(md);
    }

    let _ = writeln!(md, "## Volatility Δ (%)\n");
    let _ = writeln!(md, "| model | cl | Δ |\n|---|---|---|");
    for c in &report.cells {
        let v = c.volatility_pct.map(|v| format!("{v:.2}")).unwrap_or_else(|| "n/a".into());
        let _ = writeln!(md, "| {} | {} | {v} |", c.model, pct(c.cl));
    }

    let _ = writeln!(md, "\n## Latent MMD\n");
    let _ = writeln!(md, "| model | cl | treated vs control | train vs runtime |\n|---|---|---|---|");
    for c in &cells {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} |",
            c.model,
            pct(c.cl),
            pm(&c.mmd_treated_control),
            pm(&c.mmd_train_runtime)
        );
    }

    let failures: Vec<&String> = cells.iter().flat_map(|c| &c.failures).collect();
    if !failures.is_empty() {
        let _ = writeln!(md, "\n## Failures\n");
        for c in &cells {
            for f in &c.failures {
                let _ = writeln!(md, "- {} at {}: {f}", c.model, pct(c.cl));
            }
        }
    }

    let _ = writeln!(md, "\n## Provenance\n");
    let _ = writeln!(md, "- config sha256: `{}`", report.config_sha256);
    for h in &report.dataset_hashes {
        let _ = writeln!(md, "- dataset seed {}: `{}`", h.seed, h.sha256);
    }
    let _ = writeln!(md, "\n## Config\n\n```toml\n{}```", cfg.to_toml());
    md
}

/// Writes the requested formats into `dir`, creating it if needed.
pub fn emit_report(report: &ExperimentReport, dir: &Path, formats: &[ReportFormat]) -> Result<(), HarnessError> {
    if report.cells.is_empty() {
        return Err(HarnessError::Report("the report has no grid cells".into()));
    }
    std::fs::create_dir_all(dir)?;
    for format in formats {
        match format {
            ReportFormat::Csv => write_csvs(report, dir)?,
            ReportFormat::Json => std::fs::write(dir.join("report.json"), report.to_json())?,
            ReportFormat::Markdown => std::fs::write(dir.join("summary.md"), render_markdown(report))?,
        }
    }
    Ok(())
}

/// `timing.csv`: wall time per training run, kept apart from the report so
/// the report itself is reproducible byte for byte.
pub fn write_timing(timings: &[TimingRecord], dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    write_table(
        dir.join("timing.csv"),
        &["model", "seed", "train_cl", "epochs", "total_ms", "mean_epoch_ms"],
        timings
            .iter()
            .map(|t| {
                vec![
                    t.model.to_string(),
                    t.seed.to_string(),
                    num(t.train_cl),
                    t.epochs.to_string(),
                    format!("{:.1}", t.total_ms),
                    format!("{:.3}", t.mean_epoch_ms),
                ]
            })
            .collect(),
    )
}
