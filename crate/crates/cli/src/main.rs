//! Command-line driver for the embedding-compression pipeline.
//!
//! Exit codes: 0 success, 1 config error, 2 data error, 3 numeric failure.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use thiserror::Error;

use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "clusterhash", about = "Embedding-table compression via interaction-graph clustering", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<std::path::PathBuf>,
    /// Overrides the data, scheme and train seeds at once.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for evaluation; 0 is the single-threaded reference.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load the raw TSV, split it and write the dataset artifacts.
    Ingest,
    /// Cluster the train interaction graph and write the partition.
    Cluster,
    /// Compute bucket codes for the configured scheme.
    Hash,
    /// Train the configured backbone on the bucketed tables.
    Train,
    /// Evaluate the trained checkpoint and write metric reports.
    Eval,
    /// Run ingest, cluster, hash, train and eval in sequence.
    Run,
    /// Parameter sweeps over clustering resolution or the uniformity weight.
    Bench {
        #[arg(long, value_parser = ["resolution", "gamma"])]
        sweep: String,
    },
}

fn main() {
    let cli = Cli::parse();
    if cli.threads > 1 {
        // ignore failures from double initialization in tests
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    match run(&cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let cfg = RunConfig::load(config_path, cli.seed)?;
    std::fs::create_dir_all(&cfg.output.dir).map_err(|e| CliError::Data(e.to_string()))?;
    match &cli.command {
        Command::Ingest => commands::cmd_ingest(&cfg),
        Command::Cluster => commands::cmd_cluster(&cfg),
        Command::Hash => commands::cmd_hash(&cfg),
        Command::Train => commands::cmd_train(&cfg),
        Command::Eval => commands::cmd_eval(&cfg, cli.threads),
        Command::Run => commands::cmd_run(&cfg, cli.threads),
        Command::Bench { sweep } => match sweep.as_str() {
            "resolution" => commands::cmd_bench_resolution(&cfg),
            "gamma" => commands::cmd_bench_gamma(&cfg),
            other => Err(CliError::Config(format!("unknown sweep {other:?}"))),
        },
    }
}
