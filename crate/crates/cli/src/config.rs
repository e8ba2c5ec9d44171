//! Settings resolution: built-in defaults, then the config file, then flags.

use std::path::{Path, PathBuf};

use clap::Args;
use edgechain::bench::{BenchmarkConfig, FaultPlan};
use edgechain::fleet::{GuidanceConfig, SubmitMode};
use edgechain::system::Clock;
use serde::Deserialize;

use crate::Failure;

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct GlobalFlags {
    /// TOML file with [bench], [fault] and [guidance] tables.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "single|multiple")]
    pub mode: Option<SubmitMode>,
    /// Comma-separated payload sizes.
    #[arg(long, global = true, value_name = "LIST", value_delimiter = ',')]
    pub payload_kib: Option<Vec<u32>>,
    /// Requests per vehicle.
    #[arg(long, global = true, value_name = "N")]
    pub requests: Option<u64>,
    #[arg(long, global = true, value_name = "N")]
    pub vehicles: Option<usize>,
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_name = "virtual|real")]
    pub clock: Option<Clock>,
    /// Directory every output file is written under.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub bench: BenchmarkConfig,
    pub fault: FaultPlan,
    pub guidance: GuidanceConfig,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else { return Ok(FileConfig::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::Usage(format!("bad config {}: {e}", path.display())))
    }
}

/// Everything a run needs after precedence has been applied.
#[derive(Debug, Clone)]
pub struct Settings {
    pub bench: BenchmarkConfig,
    pub fault: FaultPlan,
    pub guidance: GuidanceConfig,
    pub out: PathBuf,
}

impl Settings {
    pub fn resolve(flags: &GlobalFlags) -> Result<Self, Failure> {
        let FileConfig { mut bench, mut fault, mut guidance } = FileConfig::load(flags.config.as_deref())?;
        if let Some(m) = flags.mode {
            bench.modes = vec![m];
            fault.mode = m;
        }
        if let Some(sizes) = &flags.payload_kib {
            bench.payload_sizes = sizes.clone();
            if let Some(&first) = sizes.first() {
                fault.payload_kib = first;
            }
        }
        if let Some(n) = flags.requests {
            bench.requests_per_vehicle = n;
        }
        if let Some(n) = flags.vehicles {
            bench.vehicles = n;
        }
        if let Some(s) = flags.seed {
            bench.seed = s;
            guidance.seed = s;
        }
        if let Some(c) = flags.clock {
            bench.clock = c;
        }
        bench.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(Settings { bench, fault, guidance, out: flags.out.clone() })
    }
}
