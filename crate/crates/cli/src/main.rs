use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lrfwi_cli::{run_experiment, CliError, ExperimentConfig, PipelineChoice};

#[derive(Parser)]
#[command(
    name = "lrfwi",
    version,
    about = "Joint low-rank completion and simultaneous-shot waveform inversion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a synthetic experiment and write its artifacts.
    Invert {
        /// key = value configuration file; defaults are used without one.
        #[arg(long)]
        config: Option<PathBuf>,
        /// full, disjoint, joint, both (disjoint and joint) or all.
        #[arg(long)]
        pipeline: Option<String>,
        #[arg(long)]
        keep: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn configure(
    config: Option<PathBuf>,
    pipeline: Option<String>,
    keep: Option<f64>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match config {
        Some(path) => ExperimentConfig::load(&path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(p) = pipeline {
        cfg.pipeline = PipelineChoice::parse(&p)?;
    }
    if let Some(k) = keep {
        cfg.keep = k;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out = o;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let Command::Invert {
        config,
        pipeline,
        keep,
        seed,
        out,
    } = Cli::parse().command;
    let result = configure(config, pipeline, keep, seed, out).and_then(|cfg| {
        let report = run_experiment(&cfg)?;
        let p = &report.problem;
        println!("initial  model error {:.5}", lrfwi_cli::model_error(&p.truth, &p.initial)?);
        for run in &report.runs {
            let snr: Vec<String> = run.snr.iter().map(|s| format!("{s:.2}")).collect();
            println!(
                "{:<8} model error {:.5}  slice SNR [{}] dB  PDE solves {}",
                run.pipeline.name(),
                run.model_error,
                snr.join(", "),
                run.state.pde_solves
            );
        }
        println!("artifacts in {}", cfg.out.display());
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::BadSpec(_) => 2,
                CliError::Io(_) => 3,
                CliError::Core(_) => 4,
            })
        }
    }
}
