mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CliError;

/// Flow-prior experiments: training, recovery sweeps and linear-model theory.
#[derive(Debug, Parser)]
#[command(name = "flowprior", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment file with `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    threads: u64,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Fit a flow to a toy dataset by maximum likelihood.
    Train,
    /// Denoise with an identity operator over a γ grid.
    Denoise,
    /// Compressed sensing over a grid of measurement counts.
    Cs,
    /// Inpainting with a binary mask over a γ grid.
    Inpaint,
    /// Expected-error bounds for linear generators.
    Theory,
    /// Singular values of the generator Jacobian at sampled points.
    Jacobian,
    /// Image-space change along natural and random latent directions.
    Perturb,
    /// Lasso in a DCT basis over a grid of measurement counts.
    Lasso,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads as usize)
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(2);
        }
    };
    let ctx = commands::Context {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
    };
    let result = pool.install(|| match cli.command {
        Command::Train => commands::train(&ctx),
        Command::Denoise => commands::denoise(&ctx),
        Command::Cs => commands::cs(&ctx),
        Command::Inpaint => commands::inpaint(&ctx),
        Command::Theory => commands::theory(&ctx),
        Command::Jacobian => commands::jacobian(&ctx),
        Command::Perturb => commands::perturb(&ctx),
        Command::Lasso => commands::lasso(&ctx),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Config(_) => 2,
                CliError::Numerical(_) => 3,
            })
        }
    }
}
