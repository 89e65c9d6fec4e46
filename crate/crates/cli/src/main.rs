use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vmem_core::io::{Mode, RunConfig};
use vmem_core::pipeline::run_pipeline;

#[derive(Parser)]
#[command(
    name = "vmem",
    version,
    about = "Semiparametric vector multiplicative error models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Dpm,
    Ln1,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the trivariate design and write series.csv and truth.json.
    Simulate(Common),
    /// Fit a model and write draws.bin, report.csv and scores.csv (or ln1.json).
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "dpm")]
        model: Model,
    },
    /// Score the stored fits and export density grids.
    Evaluate(Common),
    /// Write traces, autocorrelations, effective sample sizes and component counts.
    Diagnose(Common),
}

fn load(common: &Common, mode: Mode) -> anyhow::Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    config.mode = Some(mode);
    if let Some(seed) = common.seed {
        config.seed = Some(seed);
    }
    if let Some(out) = &common.output {
        config.output = out.clone();
    }
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (common, mode) = match &cli.command {
        Command::Simulate(c) => (c, Mode::Simulate),
        Command::Fit {
            common,
            model: Model::Dpm,
        } => (common, Mode::FitDpm),
        Command::Fit {
            common,
            model: Model::Ln1,
        } => (common, Mode::FitLn1),
        Command::Evaluate(c) => (c, Mode::Evaluate),
        Command::Diagnose(c) => (c, Mode::Diagnose),
    };
    let config = load(common, mode)?;
    let outcome = run_pipeline(&config)?;
    for f in outcome.files {
        println!("{}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
