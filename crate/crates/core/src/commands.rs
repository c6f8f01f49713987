//! The user-facing commands. Each writes its outputs into one directory.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::metrics::compute_rse;
use crate::model::SalModel;
use crate::persist::{load_any, save_mlp, save_model};
use crate::report::{
    compare_rows, compare_summary, write_csv, write_sal_csv, write_ssg_csv, CompareRow,
};
use crate::ssg::{train_mlp, MlpParams, SsgReport};
use crate::trainer::{train_sal, TrainReport};
use crate::{Error, Result};

pub const THREADS_ENV: &str = "SAL_LEARN_THREADS";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Data-parallel partition count; values below 1 mean 1.
    pub partitions: usize,
}

/// Partition count from `SAL_LEARN_THREADS`, default 1.
pub fn partitions_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "{THREADS_ENV} must be a positive integer, got `{v}`"
                ))
            }),
        Err(_) => Ok(1),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputPaths {
    pub dir: PathBuf,
    pub csv: PathBuf,
    pub model: PathBuf,
    pub log: PathBuf,
    pub config_echo: PathBuf,
}

fn prepare(cfg: &RunConfig, opts: &RunOptions, stem: &str) -> Result<(RunConfig, OutputPaths)> {
    let mut cfg = cfg.clone();
    if let Some(seed) = opts.seed {
        cfg.override_seed(seed);
    }
    let dir = opts
        .out_dir
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let paths = OutputPaths {
        csv: dir.join(
            cfg.output
                .csv
                .clone()
                .unwrap_or_else(|| format!("{stem}.csv")),
        ),
        model: dir.join(
            cfg.output
                .model_path
                .clone()
                .unwrap_or_else(|| format!("{stem}_model.json")),
        ),
        log: dir.join(format!("{stem}_log.json")),
        config_echo: dir.join("config.resolved.json"),
        dir,
    };
    write_text(&paths.config_echo, &(cfg.echo() + "\n"))?;
    Ok((cfg, paths))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct RunLog<'a, R: Serialize> {
    command: &'a str,
    model_ref: Option<&'a Path>,
    error: Option<String>,
    config: &'a RunConfig,
    report: Option<&'a R>,
}

fn write_log<R: Serialize>(path: &Path, log: &RunLog<'_, R>) -> Result<()> {
    let text = serde_json::to_string_pretty(log).map_err(|e| Error::invalid(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

#[derive(Debug)]
pub struct SalOutcome {
    pub model: SalModel,
    pub report: TrainReport,
    pub paths: OutputPaths,
}

fn run_sal(
    cfg: &RunConfig,
    opts: &RunOptions,
    paths: &OutputPaths,
    csv: &Path,
    model_path: &Path,
) -> Result<(SalModel, TrainReport)> {
    let (train, test) = cfg.datasets()?;
    let tc = cfg.sal_train_config(opts.partitions)?;
    match train_sal(&train, test.as_ref(), &tc) {
        Ok((model, report)) => {
            write_sal_csv(&report, csv)?;
            save_model(&model, model_path)?;
            write_log(
                &paths.log,
                &RunLog {
                    command: "train-sal",
                    model_ref: Some(model_path),
                    error: None,
                    config: cfg,
                    report: Some(&report),
                },
            )?;
            Ok((model, report))
        }
        Err(failure) => {
            write_sal_csv(&failure.report, csv)?;
            let saved = save_model(&failure.model, model_path).is_ok();
            write_log(
                &paths.log,
                &RunLog {
                    command: "train-sal",
                    model_ref: saved.then_some(model_path),
                    error: Some(failure.to_string()),
                    config: cfg,
                    report: Some(&failure.report),
                },
            )?;
            Err(failure.error)
        }
    }
}

/// Trains the configured SAL grades; on failure the partial CSV, model and
/// log are still written before the error is returned.
pub fn cmd_train_sal(cfg: &RunConfig, opts: &RunOptions) -> Result<SalOutcome> {
    if cfg.sal.is_none() {
        return Err(missing_section("sal", "train-sal"));
    }
    let (cfg, paths) = prepare(cfg, opts, "sal")?;
    let (model, report) = run_sal(&cfg, opts, &paths, &paths.csv, &paths.model)?;
    Ok(SalOutcome {
        model,
        report,
        paths,
    })
}

#[derive(Debug)]
pub struct SsgOutcome {
    pub model: MlpParams,
    pub report: SsgReport,
    pub paths: OutputPaths,
}

fn run_ssg(
    cfg: &RunConfig,
    paths: &OutputPaths,
    csv: &Path,
    model_path: &Path,
) -> Result<(MlpParams, SsgReport)> {
    let (train, test) = cfg.datasets()?;
    let mc = cfg.ssg_train_config()?;
    let test_pair = test.as_ref().map(|d| (&d.inputs, &d.targets));
    let result = train_mlp(&train.inputs, &train.targets, &mc, test_pair);
    match result {
        Ok((model, report)) => {
            write_ssg_csv(&report, csv)?;
            save_mlp(&model, model_path)?;
            write_log(
                &paths.log,
                &RunLog {
                    command: "train-ssg",
                    model_ref: Some(model_path),
                    error: None,
                    config: cfg,
                    report: Some(&report),
                },
            )?;
            Ok((model, report))
        }
        Err(e) => {
            write_csv::<crate::ssg::SsgRecord>(&[], csv)?;
            write_log::<SsgReport>(
                &paths.log,
                &RunLog {
                    command: "train-ssg",
                    model_ref: None,
                    error: Some(e.to_string()),
                    config: cfg,
                    report: None,
                },
            )?;
            Err(e)
        }
    }
}

pub fn cmd_train_ssg(cfg: &RunConfig, opts: &RunOptions) -> Result<SsgOutcome> {
    if cfg.ssg.is_none() {
        return Err(missing_section("ssg", "train-ssg"));
    }
    let (cfg, paths) = prepare(cfg, opts, "ssg")?;
    let (model, report) = run_ssg(&cfg, &paths, &paths.csv, &paths.model)?;
    Ok(SsgOutcome {
        model,
        report,
        paths,
    })
}

fn missing_section(section: &str, command: &str) -> Error {
    Error::Config {
        path: section.into(),
        message: format!("missing section `{section}` required by {command}"),
    }
}

#[derive(Debug)]
pub struct CompareOutcome {
    pub rows: Vec<CompareRow>,
    pub summary: String,
    pub sal: std::result::Result<TrainReport, String>,
    pub ssg: std::result::Result<SsgReport, String>,
    pub paths: OutputPaths,
}

impl CompareOutcome {
    pub fn all_ok(&self) -> bool {
        self.sal.is_ok() && self.ssg.is_ok()
    }
}

/// Runs both methods on the same data and tabulates time-to-threshold.
/// A failing method is reported in the outcome; the other still runs.
pub fn cmd_compare(cfg: &RunConfig, opts: &RunOptions) -> Result<CompareOutcome> {
    for s in ["sal", "ssg"] {
        let present = if s == "sal" {
            cfg.sal.is_some()
        } else {
            cfg.ssg.is_some()
        };
        if !present {
            return Err(missing_section(s, "compare"));
        }
    }
    let (cfg, paths) = prepare(cfg, opts, "compare")?;
    let sal_paths = OutputPaths {
        log: paths.dir.join("sal_log.json"),
        ..paths.clone()
    };
    let ssg_paths = OutputPaths {
        log: paths.dir.join("ssg_log.json"),
        ..paths.clone()
    };
    let sal = run_sal(
        &cfg,
        opts,
        &sal_paths,
        &paths.dir.join("sal.csv"),
        &paths.dir.join("sal_model.json"),
    )
    .map(|(_, r)| r)
    .map_err(|e| e.to_string());
    let ssg = run_ssg(
        &cfg,
        &ssg_paths,
        &paths.dir.join("ssg.csv"),
        &paths.dir.join("ssg_model.json"),
    )
    .map(|(_, r)| r)
    .map_err(|e| e.to_string());
    let thresholds = &cfg.compare.thresholds;
    let rows = compare_rows(sal.as_ref().ok(), ssg.as_ref().ok(), thresholds);
    write_csv(&rows, &paths.csv)?;
    let mut summary = compare_summary(&rows, thresholds);
    if let Err(e) = &sal {
        summary.push_str(&format!("SAL run failed: {e}\n"));
    }
    if let Err(e) = &ssg {
        summary.push_str(&format!("SSG run failed: {e}\n"));
    }
    write_text(&paths.dir.join("compare_summary.txt"), &summary)?;
    Ok(CompareOutcome {
        rows,
        summary,
        sal,
        ssg,
        paths,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalOutcome {
    pub rse_train: f64,
    pub rse_test: Option<f64>,
}

/// rse of a stored model (either kind) on the config's datasets.
pub fn cmd_eval(model_path: &Path, cfg: &RunConfig, opts: &RunOptions) -> Result<EvalOutcome> {
    let mut cfg = cfg.clone();
    if let Some(seed) = opts.seed {
        cfg.override_seed(seed);
    }
    let model = load_any(model_path)?;
    let (train, test) = cfg.datasets()?;
    let rse_train = compute_rse(&model.predict(&train.inputs)?, &train.targets)?;
    let rse_test = match test {
        Some(t) => Some(compute_rse(&model.predict(&t.inputs)?, &t.targets)?),
        None => None,
    };
    Ok(EvalOutcome {
        rse_train,
        rse_test,
    })
}
