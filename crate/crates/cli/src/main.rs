//! `stagecause`: discovery, training, evaluation and comparison pipeline.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "stagecause", version, about = "Causal matrix discovery and staged agent training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// run configuration (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// root seed; defaults to the first entry of `seeds`
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// output directory; defaults to io.out_dir
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// print the planned work and write nothing
    #[arg(long, global = true)]
    dry_run: bool,
    /// continue from the checkpoint in the output directory
    #[arg(long, global = true)]
    resume: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Discover per-stage causal matrices
    Discover {
        /// also write the collected datasets
        #[arg(long)]
        save_datasets: bool,
    },
    /// Train per-stage agents
    Train {
        #[arg(long)]
        algo: Option<String>,
        /// causal matrices JSON for cmppo, cmsac and cmmsac
        #[arg(long)]
        matrices: Option<PathBuf>,
    },
    /// Evaluate the checkpoints of a training run
    Eval {
        run_dir: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
    },
    /// Compare success curves of several training runs
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// Render a causal matrices file as a DOT graph
    ExportGraph {
        #[arg(long)]
        matrices: PathBuf,
        /// output file; stdout when absent
        #[arg(long)]
        dot: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let g = commands::Global {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
        dry_run: cli.dry_run,
        resume: cli.resume,
    };
    let result = match cli.command {
        Command::Discover { save_datasets } => commands::discover(&g, save_datasets),
        Command::Train { algo, matrices } => commands::train(&g, algo.as_deref(), matrices),
        Command::Eval { run_dir, episodes } => commands::eval(&g, &run_dir, episodes),
        Command::Compare { runs } => commands::compare(&g, &runs),
        Command::ExportGraph { matrices, dot } => commands::export_graph(&matrices, dot.as_deref()),
    };
    match result {
        Ok(commands::Outcome::Clean) => ExitCode::SUCCESS,
        Ok(commands::Outcome::Flagged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
