use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{BenchError, MetricsRow};
use crate::fleet::SubmitMode;

pub const CSV_HEADER: &str = "mode,payload_kib,tx_per_s,kib_per_s,s_per_tx,failures";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioRow {
    pub payload_kib: u32,
    /// Multiple-mode tx/s over single-mode tx/s.
    pub tx_per_s_ratio: f64,
    /// Multiple-mode s/transaction over single-mode s/transaction.
    pub s_per_tx_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TablePaths {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub ratios: PathBuf,
}

/// Multiple/single comparisons for every size present in both modes.
pub fn ratio_rows(rows: &[MetricsRow]) -> Vec<RatioRow> {
    let find = |mode, size| rows.iter().find(|r| r.mode == mode && r.payload_kib == size);
    let mut sizes: Vec<u32> = rows.iter().map(|r| r.payload_kib).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let div = |a: f64, b: f64| if b == 0.0 { f64::NAN } else { a / b };
    sizes
        .into_iter()
        .filter_map(|size| {
            let (s, m) = (find(SubmitMode::Single, size)?, find(SubmitMode::Multiple, size)?);
            Some(RatioRow {
                payload_kib: size,
                tx_per_s_ratio: div(m.tx_per_s, s.tx_per_s),
                s_per_tx_ratio: div(m.s_per_tx, s.s_per_tx),
            })
        })
        .collect()
}

pub fn csv(rows: &[MetricsRow]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{}",
            r.mode, r.payload_kib, r.tx_per_s, r.kib_per_s, r.s_per_tx, r.failures
        );
    }
    out
}

pub fn ratios_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("payload_kib,tx_per_s_ratio,s_per_tx_ratio\n");
    for r in ratio_rows(rows) {
        let _ = writeln!(out, "{},{:.6},{:.6}", r.payload_kib, r.tx_per_s_ratio, r.s_per_tx_ratio);
    }
    out
}

/// Writes `<prefix>-<stamp>.csv`, its JSON mirror and `ratios.csv` into
/// `dir`.
pub fn emit_tables(rows: &[MetricsRow], dir: &Path, prefix: &str, stamp: &str) -> Result<TablePaths, BenchError> {
    if rows.is_empty() {
        return Err(BenchError::EmptyRows);
    }
    fs::create_dir_all(dir)?;
    let paths = TablePaths {
        csv: dir.join(format!("{prefix}-{stamp}.csv")),
        json: dir.join(format!("{prefix}-{stamp}.json")),
        ratios: dir.join("ratios.csv"),
    };
    fs::write(&paths.csv, csv(rows))?;
    let json = serde_json::json!({ "rows": rows, "ratios": ratio_rows(rows) });
    fs::write(&paths.json, serde_json::to_string_pretty(&json).expect("rows serialize") + "\n")?;
    fs::write(&paths.ratios, ratios_csv(rows))?;
    Ok(paths)
}
