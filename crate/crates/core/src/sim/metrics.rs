//! Run outputs: per-epoch device rows, per-file UPT samples, agent logs,
//! fingerprint traces, and their CSV forms.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::percentile;
use crate::sim::scenario::{Policy, Technology};

/// One device, one epoch. Column order of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: u64,
    /// End of the epoch.
    pub time_s: f64,
    pub device: usize,
    pub technology: Technology,
    pub adapting: bool,
    pub policy: Policy,
    pub gamma_dbm: f64,
    pub cluster: Option<usize>,
    pub bits_acked: u64,
    pub bits_failed: u64,
    pub reward_mbps: f64,
    /// Cumulative acknowledged bits over elapsed time.
    pub effective_throughput_mbps: f64,
    pub tx_attempts: u64,
    pub tx_failures: u64,
    pub freezes: u64,
    pub airtime_s: f64,
}

/// One completed file. Column order of `upt.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UptRow {
    pub device: usize,
    pub technology: Technology,
    pub adapting: bool,
    pub file: usize,
    pub arrival_s: f64,
    pub completion_s: f64,
    pub bits: u64,
    pub upt_mbps: f64,
}

/// One arm of one agent decision. Column order of `agents.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRow {
    pub epoch: u64,
    pub device: usize,
    pub cluster: usize,
    pub theta: bool,
    pub chosen_gamma: f64,
    /// Reward of the previous epoch, Mb/s.
    pub reward: f64,
    pub arm_gamma: f64,
    pub prior: f64,
    pub estimate: f64,
    pub bonus: f64,
    pub score: f64,
}

/// A fingerprint observed by a learning device, labelled at the end of the
/// run with that device's final utility estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub device: usize,
    pub epoch: u64,
    pub bins: Vec<f64>,
    pub utility: Vec<f64>,
}

/// End-of-run totals per contending device.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceSummary {
    pub device: usize,
    pub technology: Technology,
    pub adapting: bool,
    pub policy: Policy,
    pub effective_throughput_mbps: f64,
    pub bits_acked: u64,
    pub bits_failed: u64,
    pub tx_attempts: u64,
    pub airtime_s: f64,
}

/// Bit bookkeeping over the whole run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BitLedger {
    pub generated: u64,
    pub delivered: u64,
    /// Segments abandoned after the retry limit.
    pub dropped: u64,
    /// Still queued or in flight at the end.
    pub queued: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    pub policy: Policy,
    pub duration_s: f64,
    pub devices: Vec<DeviceSummary>,
    pub epochs: Vec<EpochRow>,
    pub upt: Vec<UptRow>,
    pub agents: Vec<AgentRow>,
    pub traces: Vec<TraceRow>,
    pub bits: BitLedger,
    pub gamma_labels: Vec<f64>,
    pub bin_edges: Vec<f64>,
}

// ── Summaries ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Group {
    Adapting,
    Standard,
}

impl Group {
    pub fn of(adapting: bool) -> Self {
        if adapting {
            Group::Adapting
        } else {
            Group::Standard
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Adapting => "adapting",
            Group::Standard => "standard",
        }
    }
}

/// One row of `summary.csv`. Percentiles are absent when the group has no
/// completed files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub technology: Technology,
    pub group: Group,
    pub files: usize,
    pub mean_upt: Option<f64>,
    pub p50: Option<f64>,
    pub p75: Option<f64>,
    pub p90: Option<f64>,
    pub mean_effective_throughput: Option<f64>,
}

pub const GROUPS: [(Technology, Group); 4] = [
    (Technology::Nru, Group::Adapting),
    (Technology::Nru, Group::Standard),
    (Technology::Wifi, Group::Adapting),
    (Technology::Wifi, Group::Standard),
];

/// Nearest-rank UPT percentiles and mean effective throughput per
/// (technology, adapting/standard) group.
pub fn summarize(upt: &[UptRow], devices: &[DeviceSummary]) -> Vec<SummaryRow> {
    GROUPS
        .iter()
        .filter_map(|&(tech, group)| {
            let mut samples: Vec<f64> = upt
                .iter()
                .filter(|r| r.technology == tech && Group::of(r.adapting) == group)
                .map(|r| r.upt_mbps)
                .collect();
            let thr: Vec<f64> = devices
                .iter()
                .filter(|d| d.technology == tech && Group::of(d.adapting) == group)
                .map(|d| d.effective_throughput_mbps)
                .collect();
            if samples.is_empty() && thr.is_empty() {
                return None;
            }
            samples.sort_by(f64::total_cmp);
            Some(SummaryRow {
                technology: tech,
                group,
                files: samples.len(),
                mean_upt: mean(&samples),
                p50: percentile(&samples, 50.0),
                p75: percentile(&samples, 75.0),
                p90: percentile(&samples, 90.0),
                mean_effective_throughput: mean(&thr),
            })
        })
        .collect()
}

pub(crate) fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl MetricsReport {
    pub fn summary(&self) -> Vec<SummaryRow> {
        summarize(&self.upt, &self.devices)
    }
}

// ── CSV ─────────────────────────────────────────────────────────────────

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes a header even when `rows` is empty.
fn write_rows_with_header<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    if !rows.is_empty() {
        return write_rows(path, rows);
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(header)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::from(e)
    }
}

pub const METRICS_HEADER: &[&str] = &[
    "epoch",
    "time_s",
    "device",
    "technology",
    "adapting",
    "policy",
    "gamma_dbm",
    "cluster",
    "bits_acked",
    "bits_failed",
    "reward_mbps",
    "effective_throughput_mbps",
    "tx_attempts",
    "tx_failures",
    "freezes",
    "airtime_s",
];

pub const UPT_HEADER: &[&str] = &[
    "device",
    "technology",
    "adapting",
    "file",
    "arrival_s",
    "completion_s",
    "bits",
    "upt_mbps",
];

pub const SUMMARY_HEADER: &[&str] = &[
    "technology",
    "group",
    "files",
    "mean_upt",
    "p50",
    "p75",
    "p90",
    "mean_effective_throughput",
];

pub const AGENTS_HEADER: &[&str] = &[
    "epoch",
    "device",
    "cluster",
    "theta",
    "chosen_gamma",
    "reward",
    "arm_gamma",
    "prior",
    "estimate",
    "bonus",
    "score",
];

/// Writes `metrics.csv`, `upt.csv`, `summary.csv`, and `agents.csv` when the
/// report carries agent rows.
pub fn write_report(report: &MetricsReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_rows_with_header(&dir.join("metrics.csv"), METRICS_HEADER, &report.epochs)?;
    write_rows_with_header(&dir.join("upt.csv"), UPT_HEADER, &report.upt)?;
    write_rows_with_header(&dir.join("summary.csv"), SUMMARY_HEADER, &report.summary())?;
    if !report.agents.is_empty() {
        write_rows_with_header(&dir.join("agents.csv"), AGENTS_HEADER, &report.agents)?;
    }
    Ok(())
}
