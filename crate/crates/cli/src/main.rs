use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use hist_core::harness::{self, ChannelDump, ExperimentConfig};
use hist_core::HistError;

#[derive(Parser)]
#[command(name = "hist", version, about = "Hierarchical independent submodel training simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a training experiment and write CSV + JSON traces.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Solve the mask-size latency problem and print the solution as JSON.
    Optimize {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimize a receive beamformer for a JSON channel dump.
    Beamform {
        #[arg(long)]
        channels: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        restarts: usize,
        #[arg(long, default_value_t = 500)]
        iters: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize traces at a target accuracy.
    Report {
        #[arg(long = "target-acc")]
        target_acc: f64,
        #[arg(required = true)]
        traces: Vec<PathBuf>,
    },
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<HistError> for Failure {
    fn from(e: HistError) -> Self {
        match e {
            HistError::Config(_) => Failure::Config(e.into()),
            other => Failure::Runtime(other.into()),
        }
    }
}

fn load_config(path: Option<&PathBuf>, seed: Option<u64>) -> Result<ExperimentConfig, Failure> {
    let cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn emit(json: String, out: Option<&PathBuf>) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, json + "\n")
            .with_context(|| format!("writing {}", p.display()))
            .map_err(Failure::Runtime),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(v).map_err(|e| Failure::Runtime(e.into()))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { config, seed, out } => {
            let cfg = load_config(config.as_ref(), seed)?;
            for path in harness::cmd_simulate(&cfg, &out)? {
                println!("{}", path.display());
            }
        }
        Command::Optimize { config, seed, out } => {
            let cfg = load_config(config.as_ref(), seed)?;
            let result = harness::cmd_optimize(&cfg)?;
            emit(to_json(&result)?, out.as_ref())?;
        }
        Command::Beamform {
            channels,
            seed,
            restarts,
            iters,
            out,
        } => {
            let text = std::fs::read_to_string(&channels)
                .with_context(|| format!("reading {}", channels.display()))
                .map_err(Failure::Config)?;
            let dump: ChannelDump = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", channels.display()))
                .map_err(Failure::Config)?;
            let result = harness::cmd_beamform(&dump, restarts, iters, seed)?;
            emit(to_json(&result)?, out.as_ref())?;
        }
        Command::Report { target_acc, traces } => {
            let (_, table) = harness::cmd_report(&traces, target_acc)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("HIST_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
