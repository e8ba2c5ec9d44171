use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use edgechain::bench::{
    emit_tables, run_fault_bench, run_notify_bench, run_throughput_bench, BenchError, MetricsRow, OrdererTarget,
};
use edgechain::deployment::seeded_bundle;
use edgechain::fleet::{event_log_jsonl, run_scenario_adaptive_guidance};
use edgechain::ledger::export::{dump_json, export_ledger, import_ledger, validate_export};
use edgechain::ledger::WorldState;
use edgechain::system::Clock;
use serde_json::json;

use crate::config::Settings;
use crate::{Cli, Command, Failure, InspectTarget};

pub fn dispatch(cli: Cli) -> Result<(), Failure> {
    let settings = Settings::resolve(&cli.flags)?;
    match cli.command {
        Command::GenIdentities { peers, orderers } => gen_identities(&settings, peers, orderers),
        Command::RunBench => bench(&settings, &settings.out, "benchmark", run_throughput_bench),
        Command::RunNotifyBench => bench(&settings, &settings.out.join("notify"), "notify", run_notify_bench),
        Command::RunFaultBench { crash_leader, restart_after_ms } => fault(settings, crash_leader, restart_after_ms),
        Command::RunAdaptiveGuidance => {
            if cli.flags.clock == Some(Clock::Real) {
                return Err(Failure::Usage("run-adaptive-guidance only runs in virtual time".into()));
            }
            guidance(&settings)
        }
        Command::Inspect { target } => inspect(&settings, target),
        Command::ValidateChain { ledger } => validate(&ledger),
    }
}

fn stamp() -> String {
    chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string()
}

fn bench_failure(e: BenchError) -> Failure {
    match e {
        BenchError::InvalidConfig(m) => Failure::Usage(m),
        other => Failure::Run(other.into()),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    Ok(fs::read(path).with_context(|| format!("reading {}", path.display()))?)
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("plain data serializes"));
}

fn gen_identities(s: &Settings, peers: usize, orderers: usize) -> Result<(), Failure> {
    if peers == 0 || orderers == 0 {
        return Err(Failure::Usage("need at least one peer and one orderer".into()));
    }
    let bundle = seeded_bundle(s.bench.seed, s.bench.vehicles, peers, orderers);
    let path = s.out.join("identities.json");
    write(&path, serde_json::to_string_pretty(&bundle).expect("bundle serializes") + "\n")?;
    for (role, ids) in [("vehicle", &bundle.vehicles), ("peer", &bundle.peers), ("orderer", &bundle.orderers)] {
        for (i, id) in ids.iter().enumerate() {
            println!("{role}-{i} {}", id.pseudonym());
        }
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn bench(
    s: &Settings,
    dir: &Path,
    prefix: &str,
    run: fn(&edgechain::bench::BenchmarkConfig) -> Result<Vec<MetricsRow>, BenchError>,
) -> Result<(), Failure> {
    let rows = run(&s.bench).map_err(bench_failure)?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let paths = emit_tables(&rows, dir, prefix, &stamp()).map_err(bench_failure)?;
    print!("{}", fs::read_to_string(&paths.csv)?);
    println!("wrote {}, {} and {}", paths.csv.display(), paths.json.display(), paths.ratios.display());
    Ok(())
}

fn fault(mut s: Settings, crash_leader: bool, restart_after_ms: Option<u64>) -> Result<(), Failure> {
    if crash_leader {
        s.fault.orderers = vec![OrdererTarget::Leader];
    }
    if restart_after_ms.is_some() {
        s.fault.restart_after_ms = restart_after_ms;
    }
    let report = run_fault_bench(&s.bench, &s.fault).map_err(bench_failure)?;
    let path = s.out.join(format!("fault-{}.json", stamp()));
    write(&path, serde_json::to_string_pretty(&report).expect("report serializes") + "\n")?;
    let crashed: Vec<_> = report.crashed.iter().map(|n| n.to_string()).collect();
    println!("crashed {} at {:.3}s", crashed.join(", "), report.crash_at_s);
    println!(
        "committed {} failures {} lost {} tx/s before {:.3} after {:.3} longest gap {:.3}s",
        report.row.committed,
        report.row.failures,
        report.lost,
        report.pre_tx_per_s,
        report.post_tx_per_s,
        report.longest_gap_s
    );
    for (peer, h) in &report.state_hashes {
        println!("{peer} height {} state {h}", report.heights[peer]);
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn guidance(s: &Settings) -> Result<(), Failure> {
    let report = run_scenario_adaptive_guidance(&s.guidance).map_err(|e| Failure::Run(e.into()))?;
    write(&s.out.join("guidance-events.jsonl"), event_log_jsonl(&report.events))?;
    let summary = json!({
        "incident_txid": report.incident_txid.to_string(),
        "incident_block": report.incident_block,
        "incident_edge": report.incident_edge,
        "reroutes": report.reroutes,
        "old_route": report.old_route,
        "new_route": report.new_route,
        "destination": report.destination,
    });
    write(&s.out.join("guidance-report.json"), serde_json::to_string_pretty(&summary).expect("json") + "\n")?;
    for p in &report.peers {
        write(&s.out.join(format!("peer-{}.ledger", p.index)), export_ledger(&p.blocks))?;
    }
    write(&s.out.join("nodes.json"), serde_json::to_string_pretty(&report.peers).expect("json") + "\n")?;
    println!("incident {} in block {}", report.incident_txid, report.incident_block);
    println!("reroutes {}: {:?} -> {:?}", report.reroutes, report.old_route, report.new_route);
    println!("wrote ledgers and logs under {}", s.out.display());
    Ok(())
}

fn load_chain(path: &Path) -> Result<Vec<edgechain::ledger::Block>, Failure> {
    import_ledger(&read(path)?).map_err(|e| Failure::Run(anyhow!("{}: {e}", path.display())))
}

fn inspect(s: &Settings, target: InspectTarget) -> Result<(), Failure> {
    match target {
        InspectTarget::Chain { ledger } => print_json(&dump_json(&load_chain(&ledger)?)),
        InspectTarget::State { ledger } => {
            let blocks = load_chain(&ledger)?;
            let state = WorldState::replay(&blocks);
            let keys: Vec<_> =
                state.iter().map(|(k, e)| json!({ "key": k, "version": e.version, "len": e.value.len() })).collect();
            print_json(&json!({ "height": blocks.len(), "state_hash": state.state_hash(), "keys": keys }));
        }
        InspectTarget::Node { index, nodes } => {
            let path: PathBuf = nodes.unwrap_or_else(|| s.out.join("nodes.json"));
            let all: Vec<serde_json::Value> =
                serde_json::from_slice(&read(&path)?).with_context(|| format!("parsing {}", path.display()))?;
            let node = all
                .into_iter()
                .find(|n| n["index"] == index)
                .ok_or_else(|| anyhow!("no peer {index} in {}", path.display()))?;
            print_json(&node);
        }
    }
    Ok(())
}

fn validate(ledger: &Path) -> Result<(), Failure> {
    match validate_export(&read(ledger)?) {
        Ok(n) => {
            println!("ok: {n} blocks");
            Ok(())
        }
        Err(v) => {
            println!("first bad block: {} ({:?})", v.index, v.kind);
            Err(Failure::Run(anyhow!("{} fails validation at block {}", ledger.display(), v.index)))
        }
    }
}
