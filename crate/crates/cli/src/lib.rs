//! The `clonestat` command line: run a clone/prior grid, test estimability,
//! transform parameters, profile a discrete parameter, simulate data and
//! export draws for plotting.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "clonestat", version, about = "Data cloning for dynamic models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every (K, prior) cell and write the results directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the number of available cores.
        #[arg(long)]
        workers: Option<usize>,
        /// Overrides CLONESTAT_SEED and the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Estimability tests over a results directory.
    Anova {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        /// Leave out a clone level (repeatable).
        #[arg(long = "drop-k")]
        drop_k: Vec<u64>,
    },
    /// Estimability of a function of the parameters.
    Transform {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        expr: String,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long = "drop-k")]
        drop_k: Vec<u64>,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Profile likelihood over the discrete parameter.
    Profile {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Simulate a dataset at given parameter values.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// JSON object mapping parameter names to values.
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the predicted means without observation noise.
        #[arg(long)]
        no_noise: bool,
    },
    /// Thinned draws in long format for scatter-plot matrices.
    Plotdata {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = commands::DEFAULT_MAX_PER_CELL)]
        max_per_cell: usize,
    },
}

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            workers,
            seed,
        } => commands::run(&config, &out, workers, seed),
        Command::Anova { results, alpha, drop_k } => commands::anova(&results, alpha, &drop_k),
        Command::Transform {
            results,
            expr,
            alpha,
            drop_k,
            json,
        } => commands::transform(&results, &expr, alpha, &drop_k, json),
        Command::Profile {
            config,
            out,
            workers,
            seed,
        } => commands::profile(&config, &out, workers, seed),
        Command::Simulate {
            config,
            params,
            out,
            seed,
            no_noise,
        } => commands::simulate(&config, &params, &out, seed, !no_noise),
        Command::Plotdata {
            results,
            out,
            max_per_cell,
        } => commands::plotdata(&results, &out, max_per_cell).map(|_| ()),
    }
}
