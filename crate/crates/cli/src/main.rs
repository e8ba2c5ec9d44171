//! `edgechain`: generate identities, run benchmarks and scenarios, and
//! inspect or validate exported ledgers.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::GlobalFlags;

#[derive(Debug, Parser)]
#[command(name = "edgechain", version, about = "Permissioned ledger simulator for vehicle situation awareness")]
pub struct Cli {
    #[command(flatten)]
    pub flags: GlobalFlags,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the identity bundle a deployment with --seed would use.
    GenIdentities {
        #[arg(long, default_value_t = 3)]
        peers: usize,
        #[arg(long, default_value_t = 3)]
        orderers: usize,
    },
    /// Throughput grid: modes x payload sizes.
    RunBench,
    /// Notification latency grid between two vehicles.
    RunNotifyBench,
    /// Crash orderers and a peer mid-run and check nothing is lost.
    RunFaultBench {
        /// Crash the Raft leader instead of a follower.
        #[arg(long)]
        crash_leader: bool,
        /// Restart the crashed nodes after this long.
        #[arg(long, value_name = "MS")]
        restart_after_ms: Option<u64>,
    },
    /// Scripted accident report, notification and reroute.
    RunAdaptiveGuidance,
    /// Print a ledger, its replayed state, or a peer snapshot.
    Inspect {
        #[command(subcommand)]
        target: InspectTarget,
    },
    /// Check an exported ledger; prints the first bad block on failure.
    ValidateChain { ledger: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum InspectTarget {
    Chain {
        ledger: PathBuf,
    },
    State {
        ledger: PathBuf,
    },
    /// Height, state hash and connected vehicles of one peer, from the
    /// snapshot file a scenario run writes.
    Node {
        index: u32,
        /// Defaults to <out>/nodes.json.
        #[arg(long, value_name = "FILE")]
        nodes: Option<PathBuf>,
    },
}

#[derive(Debug)]
pub enum Failure {
    /// Bad flags or config: exit 2.
    Usage(String),
    /// The run or check itself failed: exit 1.
    Run(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Run(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.into())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EDGECHAIN_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nUsage: edgechain [OPTIONS] <COMMAND>\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
