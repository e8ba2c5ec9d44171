use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn edgechain(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgechain")).args(args).arg("--out").arg(out).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn single_csv(dir: &Path) -> PathBuf {
    let csvs: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            let name = p.file_name().unwrap().to_string_lossy();
            name.starts_with("benchmark-") && name.ends_with(".csv")
        })
        .collect();
    assert_eq!(csvs.len(), 1, "{csvs:?}");
    csvs[0].clone()
}

const BENCH: &[&str] =
    &["run-bench", "--mode", "single", "--payload-kib", "16", "--requests", "10", "--clock", "virtual", "--seed", "7"];

#[test]
fn run_bench_emits_csv_and_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let o = edgechain(BENCH, dir.path());
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let csv_a = std::fs::read(single_csv(a.path())).unwrap();
    let csv_b = std::fs::read(single_csv(b.path())).unwrap();
    assert_eq!(csv_a, csv_b);
    let text = String::from_utf8(csv_a).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "mode,payload_kib,tx_per_s,kib_per_s,s_per_tx,failures");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("single,16,"));
    assert!(lines[1].ends_with(",0"));
    assert!(a.path().join("ratios.csv").exists());
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["run-bench", "--no-such-flag"][..],
        &["run-bench", "--mode", "triple"],
        &["run-bench", "--clock", "sundial"],
        &["run-bench", "--requests", "0", "--clock", "virtual"],
        &["run-adaptive-guidance", "--clock", "real"],
        &[],
    ] {
        let o = edgechain(args, dir.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn config_file_values_apply_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bench.toml");
    std::fs::write(
        &cfg,
        "[bench]\nrequests_per_vehicle = 4\nvehicles = 2\nclock = \"virtual\"\nmodes = [\"multiple\"]\n",
    )
    .unwrap();
    let o = edgechain(&["run-bench", "--config", cfg.to_str().unwrap(), "--payload-kib", "32"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(single_csv(dir.path())).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().starts_with("multiple,32,"));

    std::fs::write(&cfg, "[bench]\nrequests = 4\n").unwrap();
    let o = edgechain(&["run-bench", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn guidance_then_inspect_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    let o = edgechain(&["run-adaptive-guidance"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("reroutes 1"));
    let ledger = dir.path().join("peer-2.ledger");
    let lp = ledger.to_str().unwrap();

    let o = edgechain(&["validate-chain", lp], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("ok: "));

    let o = edgechain(&["inspect", "chain", lp], dir.path());
    let chain: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(chain[0]["transactions"][0]["contract"], "situation");

    let o = edgechain(&["inspect", "state", lp], dir.path());
    let state: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(state["keys"].as_array().unwrap().iter().any(|k| k["key"].as_str().unwrap().starts_with("incident/")));

    let o = edgechain(&["inspect", "node", "2"], dir.path());
    let node: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(node["zone"], "blue");
    assert_eq!(node["state_hash"], state["state_hash"]);
    assert_eq!(node["connected"].as_array().unwrap().len(), 1);
    assert_eq!(edgechain(&["inspect", "node", "9"], dir.path()).status.code(), Some(1));

    // Flip a byte deep inside the first block's encoding.
    let mut bytes = std::fs::read(&ledger).unwrap();
    let at = bytes.len() / 2;
    bytes[at] ^= 0x40;
    let tampered = dir.path().join("tampered.ledger");
    std::fs::write(&tampered, bytes).unwrap();
    let o = edgechain(&["validate-chain", tampered.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).starts_with("first bad block: 0"), "{}", stdout(&o));
}

#[test]
fn fault_bench_reports_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let o = edgechain(&["run-fault-bench", "--clock", "virtual", "--requests", "8", "--crash-leader"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("lost 0"), "{out}");
    let states: Vec<_> =
        out.lines().filter(|l| l.starts_with("peer-")).map(|l| l.rsplit(' ').next().unwrap()).collect();
    assert_eq!(states.len(), 2);
    assert_eq!(states[0], states[1]);
}

#[test]
fn identities_match_the_seeded_deployment() {
    let dir = tempfile::tempdir().unwrap();
    let o = edgechain(&["gen-identities", "--vehicles", "2", "--seed", "5"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let bundle: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("identities.json")).unwrap()).unwrap();
    assert_eq!(bundle["vehicles"].as_array().unwrap().len(), 2);
    assert_eq!(bundle["peers"].as_array().unwrap().len(), 3);
    let again = edgechain(&["gen-identities", "--vehicles", "2", "--seed", "5"], dir.path());
    assert_eq!(stdout(&o), stdout(&again));
}
