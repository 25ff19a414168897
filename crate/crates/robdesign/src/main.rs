use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use robdesign::commands::{self, Contamination, Overrides};
use robdesign::config::Problem;
use robdesign::exec::RayonExecutor;
use robdesign::{exit_code, ConfigContext, ConfigError};
use robdesign_core::criterion::Variant;

/// Minimax robust designs for regression with responses missing at random.
#[derive(Parser, Debug)]
#[command(name = "robdesign", version)]
struct Cli {
    /// Problem configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Correction weight of the loss: paper or derivation.
    #[arg(long, global = true, value_parser = parse_variant)]
    variant: Option<Variant>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct PsoArgs {
    /// Particles per swarm.
    #[arg(long)]
    swarm: Option<usize>,
    /// Iterations per restart.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Optimize the design and write design, loss and metadata files.
    Solve(PsoArgs),
    /// Evaluate the loss of a stored design.
    Eval {
        #[arg(long)]
        design: PathBuf,
    },
    /// Apportion a continuous design to integer counts.
    Round {
        #[arg(long)]
        design: PathBuf,
        /// Number of runs; defaults to the design's n.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Monte-Carlo MMPE decomposition for a stored design.
    Simulate {
        #[arg(long)]
        design: PathBuf,
        #[arg(long)]
        reps: Option<usize>,
        /// zero or worst.
        #[arg(long, default_value = "zero")]
        contamination: Contamination,
    },
    /// Least-favorable contamination for a stored design.
    Worstcase {
        #[arg(long)]
        design: PathBuf,
    },
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn problem(cli: &Cli, pso: Option<&PsoArgs>) -> Result<Problem> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| anyhow::Error::new(ConfigError("--config is required for this command".into())))?;
    let overrides = Overrides {
        seed: cli.seed,
        variant: cli.variant,
        swarm: pso.and_then(|p| p.swarm),
        iters: pso.and_then(|p| p.iters),
        restarts: pso.and_then(|p| p.restarts),
    };
    commands::load_problem(path, &overrides)
}

fn run(cli: &Cli) -> Result<()> {
    let exec = RayonExecutor::new(cli.threads)
        .context("starting thread pool")
        .tag_config()?;
    match &cli.command {
        Command::Solve(pso) => {
            let p = problem(cli, Some(pso))?;
            let out = commands::solve(&p, &cli.out, &exec, exec.threads())?;
            println!("{}", serde_json::to_string(&out.loss)?);
        }
        Command::Eval { design } => {
            let p = problem(cli, None)?;
            let loss = commands::eval(&p, design, &cli.out, &exec)?;
            println!("{}", serde_json::to_string(&loss)?);
        }
        Command::Round { design, n } => {
            let exact = commands::round(design, *n, &cli.out)?;
            println!("{}", serde_json::to_string(exact.counts())?);
        }
        Command::Simulate {
            design,
            reps,
            contamination,
        } => {
            let p = problem(cli, None)?;
            let sim = commands::simulate(&p, design, *reps, *contamination, &cli.out, &exec)?;
            println!("{}", serde_json::to_string(&sim)?);
        }
        Command::Worstcase { design } => {
            let p = problem(cli, None)?;
            let wc = commands::worstcase(&p, design, &cli.out, &exec)?;
            println!("{}", serde_json::to_string(&commands::WorstCaseSummary::from(&wc))?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
