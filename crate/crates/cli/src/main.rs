mod config;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use crust_core::spectrum::report;
use crust_core::trainer::{select_coresets, Partition};
use crust_core::verify::{run_all, Fault};
use crust_core::{MlpModel, Rng, TrainConfig};

use crate::error::CliError;
use crate::run::{check_thread_env, load_dataset, RunOptions};

/// Noise-robust training by per-class coreset selection.
///
/// Set CRUST_THREADS to bound the worker threads used for per-class selection.
#[derive(Parser)]
#[command(name = "crust", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the manifest's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the manifest's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the library against its reference implementations.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<FaultArg>,
    },
    /// Print spectrum diagnostics for a checkpoint on a dataset as JSON.
    Spectrum {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Information-space dimension.
        #[arg(long = "K")]
        k: usize,
        /// Coreset budget as a fraction of the dataset.
        #[arg(long, default_value_t = 0.5)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    GradientScale,
}

fn verify(seed: u64, fault: Option<FaultArg>) -> Result<ExitCode, CliError> {
    let fault = match fault {
        Some(FaultArg::GradientScale) => Fault::GradientScale,
        None => Fault::None,
    };
    let results = run_all(seed, fault)?;
    for r in &results {
        println!("[{}] {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    let passed = results.iter().filter(|r| r.passed).count();
    println!("verify: {passed}/{} passed", results.len());
    Ok(if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn spectrum(checkpoint: &PathBuf, data: &PathBuf, k: usize, fraction: f64, seed: u64) -> Result<ExitCode, CliError> {
    check_thread_env()?;
    if !checkpoint.is_file() {
        return Err(CliError::Config(format!("checkpoint {} not found", checkpoint.display())));
    }
    let model = MlpModel::load(checkpoint).map_err(|e| CliError::Config(format!("checkpoint: {e}")))?;
    let ds = load_dataset(data)?;
    if model.input_dim() != ds.dim() {
        return Err(CliError::Config(format!(
            "checkpoint expects {} inputs, dataset has {}",
            model.input_dim(),
            ds.dim()
        )));
    }
    if k == 0 || k > ds.len() {
        return Err(CliError::Config(format!("--K must lie in 1..={}", ds.len())));
    }
    let cfg = TrainConfig {
        coreset_fraction: fraction,
        seed,
        ..TrainConfig::default()
    };
    cfg.validate().map_err(|e| CliError::Config(format!("--fraction: {e}")))?;
    let coresets = select_coresets(&model, &ds, &cfg, Partition::Predicted, &Rng::new(seed))?;
    let selected: Vec<usize> = coresets.iter().flat_map(|c| c.selected_indices()).collect();
    let weights: Vec<f64> = coresets
        .iter()
        .flat_map(|c| c.coreset.weights.iter().map(|&w| w as f64))
        .collect();
    let r = report(&model, &ds, &selected, &weights, k, None)?;
    let json = serde_json::to_string_pretty(&r).map_err(|e| crust_core::CrustError::Io(e.into()))?;
    println!("{json}");
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seed, out } => run::run(&RunOptions { config, seed, out }).map(|paths| {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }),
        Command::Verify { seed, inject_fault } => verify(seed, inject_fault),
        Command::Spectrum {
            checkpoint,
            data,
            k,
            fraction,
            seed,
        } => spectrum(&checkpoint, &data, k, fraction, seed),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(e.exit_code())
    })
}
