use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use stable_cli::commands;
use stable_cli::config::RunConfig;
use stable_cli::{CliError, CliResult};

#[derive(Parser)]
#[command(
    name = "stable",
    version,
    about = "Stability-aware training of neural interatomic potentials"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Checkpoint to continue from (pretrain, stable-train) or to evaluate.
    #[arg(long, global = true)]
    resume: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Sample labeled training and held-out frames with the reference potential.
    GenData,
    /// Fit the network to reference energies and forces.
    Pretrain,
    /// Run the alternating simulation/learning loop.
    StableTrain,
    /// Measure stable simulation time and observables on held-out starts.
    Evaluate,
    /// Reweight a dataset observable to another temperature.
    Reweight,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Pretrain => "pretrain",
            Command::StableTrain => "stable-train",
            Command::Evaluate => "evaluate",
            Command::Reweight => "reweight",
        }
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(CliError::Config("--workers must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    }
    .finalize(cli.seed, cli.out.clone())?;
    let resume = cli.resume.as_deref();
    let start = Instant::now();
    match cli.command {
        Command::GenData => {
            commands::gen_data(&cfg)?;
        }
        Command::Pretrain => {
            commands::cmd_pretrain(&cfg, resume)?;
        }
        Command::StableTrain => {
            commands::cmd_stable_train(&cfg, resume, None)?;
        }
        Command::Evaluate => {
            commands::cmd_evaluate(&cfg, resume)?;
        }
        Command::Reweight => {
            let s = commands::cmd_reweight(&cfg)?;
            println!("n_eff = {:.1} of {} samples", s.n_eff, s.n_samples);
        }
    }
    commands::log_timing(&cfg.out, cli.command.name(), start.elapsed().as_secs_f64());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
