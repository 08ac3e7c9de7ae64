//! Command-line surface.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::run;
use crate::Result;

#[derive(Debug, Parser)]
#[command(name = "prmkit", version, about = "Token-level process reward toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build token-level preference pairs by tree search.
    GenPairs {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Source sentences (JSONL); defaults to `io.sources`.
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Pairwise accuracy of the configured PRM on a benchmark file.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        bench: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Per-token credit reports for (source, hypothesis) records.
    Score {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Reward-guided decoding, one hypothesis per source.
    Decode {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        w: Option<f64>,
        #[arg(long)]
        k: Option<usize>,
        /// Plain greedy decoding.
        #[arg(long)]
        greedy: bool,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Mean quality for every reward weight in a grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated weights, e.g. `0,0.3,0.5,0.7`.
        #[arg(long = "w-grid", value_delimiter = ',')]
        w_grid: Option<Vec<f64>>,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

/// Runs one command.
pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenPairs { config, out, input, jobs, seed } => {
            run::gen_pairs(&run::GenPairsArgs {
                config,
                out,
                jobs: *jobs,
                seed: *seed,
                sources: input.as_deref(),
            })?;
        }
        Command::Eval { config, bench, out, jobs } => {
            run::eval(&run::EvalArgs { config, bench, out, jobs: *jobs })?;
        }
        Command::Score { config, input, out, jobs } => {
            run::score(&run::ScoreArgs { config, input, out, jobs: *jobs })?;
        }
        Command::Decode { config, input, out, w, k, greedy, jobs } => {
            run::decode_cmd(&run::DecodeArgs {
                config,
                input,
                out,
                jobs: *jobs,
                w: *w,
                k: *k,
                greedy: *greedy,
            })?;
        }
        Command::Sweep { config, input, out, w_grid, jobs } => {
            run::sweep(&run::SweepArgs {
                config,
                input,
                out,
                jobs: *jobs,
                w_grid: w_grid.clone(),
            })?;
        }
    }
    Ok(())
}
