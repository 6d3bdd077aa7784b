//! `influence-bench`: run repeated-interaction experiments, summarize their
//! CSV output, or serve live sessions.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use influence_core::harness::io::{self, RecordRow};
use influence_core::harness::stats::{self, Metric};
use influence_core::harness::{run_experiment, ExperimentConfig, HarnessError};
use influence_session::{ServerConfig, SessionConfig};

#[derive(Debug, Parser)]
#[command(name = "influence-bench", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment and write its CSV and summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated seeds, replacing the config's list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Output directory (default: the config's `output`, else `results`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "lane_progress")]
        metric: Metric,
    },
    /// Summarize a results CSV: per-interaction mean ± SE and a first/last block test.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "lane_progress")]
        metric: Metric,
        #[arg(long, default_value_t = 10)]
        block: usize,
        /// Also write `<stem>.json`, `<stem>.txt` and `<stem>.png`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve live sessions over a websocket at `/ws`.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Experiment config supplying everything but env, controller and seed.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 25)]
        interactions: usize,
        /// Directory for finished session CSVs.
        #[arg(long)]
        log_dir: Option<PathBuf>,
        /// Tick period in milliseconds (default: the config's dt).
        #[arg(long)]
        tick_ms: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            seeds,
            out,
            metric,
        } => run(&config, seeds, out, metric),
        Command::Summarize {
            input,
            metric,
            block,
            out,
        } => summarize(&input, metric, block, out.as_deref()),
        Command::Serve {
            port,
            host,
            config,
            interactions,
            log_dir,
            tick_ms,
        } => serve(SocketAddr::new(host, port), config, interactions, log_dir, tick_ms),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(config: &Path, seeds: Option<Vec<u64>>, out: Option<PathBuf>, metric: Metric) -> Result<(), HarnessError> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(seeds) = seeds {
        cfg.seeds = seeds;
    }
    let dir = out
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    let records = run_experiment(&cfg)?;
    let csv = dir.join(format!("{}.csv", cfg.experiment_id));
    io::export_csv(&records, &csv)?;
    println!("wrote {} rows to {}", records.len(), csv.display());
    if !records.is_empty() {
        report(&io::rows(&records), metric, cfg.block_size, Some(&dir.join(&cfg.experiment_id)))?;
    }
    Ok(())
}

fn summarize(input: &Path, metric: Metric, block: usize, out: Option<&Path>) -> Result<(), HarnessError> {
    let rows = io::load_csv(input)?;
    report(&rows, metric, block, out)
}

fn report(rows: &[RecordRow], metric: Metric, block: usize, stem: Option<&Path>) -> Result<(), HarnessError> {
    let summary = stats::summarize(rows, metric, block)?;
    print!("{summary}");
    if let Some(stem) = stem {
        for path in io::export_summary(&summary, stem, true)? {
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn serve(
    addr: SocketAddr,
    config: Option<PathBuf>,
    interactions: usize,
    log_dir: Option<PathBuf>,
    tick_ms: Option<u64>,
) -> Result<(), HarnessError> {
    let mut session = SessionConfig::live();
    if let Some(path) = config {
        let base = ExperimentConfig::load(&path)?;
        session.base = ExperimentConfig {
            experiment_id: base.experiment_id.clone(),
            human: session.base.human,
            ..base
        };
    }
    session.interactions = interactions;
    session.log_dir = log_dir;
    let server = ServerConfig {
        session,
        tick: tick_ms.map(Duration::from_millis),
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| HarnessError::Config(format!("runtime: {e}")))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| HarnessError::Config(format!("bind {addr}: {e}")))?;
        println!("listening on ws://{addr}/ws");
        influence_session::serve(listener, server)
            .await
            .map_err(|e| HarnessError::Config(format!("server: {e}")))
    })
}
