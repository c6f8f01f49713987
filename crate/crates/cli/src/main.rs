use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use sal_core::commands::{
    cmd_compare, cmd_eval, cmd_train_sal, cmd_train_ssg, partitions_from_env, RunOptions,
};
use sal_core::config::parse_config;
use sal_core::report::fmt_num;

/// Successive affine learning experiments.
#[derive(Parser)]
#[command(name = "sal-learn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a SAL model grade by grade.
    TrainSal(Common),
    /// Train the single-grade baseline network with Adam.
    TrainSsg(Common),
    /// Run both methods on the same data and compare time-to-threshold.
    Compare(Common),
    /// Evaluate a stored model on the configured datasets.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn options(c: &Common) -> Result<RunOptions> {
    Ok(RunOptions {
        out_dir: c.out.clone(),
        seed: c.seed,
        partitions: partitions_from_env()?,
    })
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_else(|| "-".into())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::TrainSal(c) => {
            let cfg = parse_config(&c.config)?;
            let out = cmd_train_sal(&cfg, &options(&c)?)?;
            for r in &out.report.records {
                println!(
                    "grade {:>3}  iters {:>6}  rse(train) {}  rse(test) {}  {:.2}s",
                    r.grade,
                    r.iterations,
                    fmt_num(r.rse_train),
                    opt(r.rse_test),
                    r.train_time_s
                );
            }
            println!(
                "total time {:.2}s; wrote {}",
                out.report.total_time_s,
                out.paths.dir.display()
            );
            Ok(true)
        }
        Command::TrainSsg(c) => {
            let cfg = parse_config(&c.config)?;
            let out = cmd_train_ssg(&cfg, &options(&c)?)?;
            for r in &out.report.records {
                println!(
                    "{} epoch {:>6}  rse(train) {}  rse(test) {}  {:.2}s",
                    r.structure,
                    r.epoch,
                    fmt_num(r.rse_train),
                    opt(r.rse_test),
                    r.train_time_s
                );
            }
            println!(
                "total time {:.2}s; wrote {}",
                out.report.total_time_s,
                out.paths.dir.display()
            );
            Ok(true)
        }
        Command::Compare(c) => {
            let cfg = parse_config(&c.config)?;
            let out = cmd_compare(&cfg, &options(&c)?)?;
            print!("{}", out.summary);
            println!("wrote {}", out.paths.dir.display());
            Ok(out.all_ok())
        }
        Command::Eval {
            model,
            config,
            seed,
        } => {
            let cfg = parse_config(&config)?;
            let opts = RunOptions {
                seed,
                ..RunOptions::default()
            };
            let ev = cmd_eval(&model, &cfg, &opts)
                .with_context(|| format!("evaluating {}", model.display()))?;
            let exact = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:e}"));
            println!(
                "rse(train) {}  rse(test) {}",
                exact(Some(ev.rse_train)),
                exact(ev.rse_test)
            );
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
