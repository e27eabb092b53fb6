//! Percentiles, bootstrap confidence intervals, and multi-seed aggregation of
//! run outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::metrics::{read_rows, write_rows, EpochRow, Group, UptRow, GROUPS};
use crate::sim::scenario::Technology;

pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 2_000;
pub const DEFAULT_BOOTSTRAP_SEED: u64 = 0x5eed;

/// Nearest-rank percentile of an ascending sample: the value at rank
/// `ceil(p/100 * n)`, with rank 1 for `p = 0`. `None` for an empty sample.
pub fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil().clamp(1.0, n as f64) as usize;
    Some(sorted[rank - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn excludes_zero(&self) -> bool {
        self.lo > 0.0 || self.hi < 0.0
    }
}

/// Percentile-bootstrap 95% interval for the mean of `xs`. A single value
/// gives a degenerate interval at that value.
pub fn bootstrap_mean_ci(xs: &[f64], resamples: usize, seed: u64) -> Option<Interval> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples.max(1))
        .map(|_| (0..n).map(|_| xs[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    Some(Interval {
        mean,
        lo: percentile(&means, 2.5)?,
        hi: percentile(&means, 97.5)?,
    })
}

/// Bootstrap interval of the mean paired difference `a[i] - b[i]`.
pub fn paired_diff_ci(a: &[f64], b: &[f64], resamples: usize, seed: u64) -> Option<Interval> {
    if a.len() != b.len() {
        return None;
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    bootstrap_mean_ci(&d, resamples, seed)
}

// ── Multi-seed aggregation ──────────────────────────────────────────────

/// Mean effective throughput of a group at one instant, across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputPoint {
    pub time_s: f64,
    pub technology: Technology,
    pub group: Group,
    pub seeds: usize,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// 75th-percentile UPT of a group, one value per seed, aggregated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UptPoint {
    pub technology: Technology,
    pub group: Group,
    pub seeds: usize,
    pub files: usize,
    pub mean_p75: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Raw outputs of one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub dir: PathBuf,
    pub epochs: Vec<EpochRow>,
    pub upt: Vec<UptRow>,
}

/// Reads every `seed_*` directory holding `metrics.csv` and `upt.csv`,
/// sorted by name.
pub fn load_results(dir: &Path) -> Result<Vec<SeedResult>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut dirs: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("metrics.csv").is_file() && p.join("upt.csv").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::config(format!(
            "no result sets (subdirectories with metrics.csv and upt.csv) under {}",
            dir.display()
        )));
    }
    dirs.into_iter()
        .map(|d| {
            Ok(SeedResult {
                epochs: read_rows(&d.join("metrics.csv"))?,
                upt: read_rows(&d.join("upt.csv"))?,
                dir: d,
            })
        })
        .collect()
}

/// Effective throughput over time per group: each seed contributes the mean
/// over its devices in the group; seeds are then bootstrapped.
pub fn throughput_series(results: &[SeedResult], resamples: usize, seed: u64) -> Vec<ThroughputPoint> {
    // (epoch, tech, group) -> per-seed means
    let mut acc: BTreeMap<(u64, Technology, Group), (f64, Vec<f64>)> = BTreeMap::new();
    for r in results {
        let mut per: BTreeMap<(u64, Technology, Group), (f64, f64, usize)> = BTreeMap::new();
        for e in &r.epochs {
            let slot = per
                .entry((e.epoch, e.technology, Group::of(e.adapting)))
                .or_insert((e.time_s, 0.0, 0));
            slot.1 += e.effective_throughput_mbps;
            slot.2 += 1;
        }
        for (key, (t, sum, n)) in per {
            acc.entry(key).or_insert((t, Vec::new())).1.push(sum / n as f64);
        }
    }
    acc.into_iter()
        .filter_map(|((_, tech, group), (t, xs))| {
            let ci = bootstrap_mean_ci(&xs, resamples, seed)?;
            Some(ThroughputPoint {
                time_s: t,
                technology: tech,
                group,
                seeds: xs.len(),
                mean: ci.mean,
                ci_lo: ci.lo,
                ci_hi: ci.hi,
            })
        })
        .collect()
}

/// Per-seed 75th-percentile UPT of one group; seeds without samples are skipped.
pub fn p75_per_seed(results: &[SeedResult], tech: Technology, group: Group) -> Vec<f64> {
    results
        .iter()
        .filter_map(|r| {
            let mut v: Vec<f64> = r
                .upt
                .iter()
                .filter(|u| u.technology == tech && Group::of(u.adapting) == group)
                .map(|u| u.upt_mbps)
                .collect();
            v.sort_by(f64::total_cmp);
            percentile(&v, 75.0)
        })
        .collect()
}

pub fn upt_table(results: &[SeedResult], resamples: usize, seed: u64) -> Vec<UptPoint> {
    GROUPS
        .iter()
        .filter_map(|&(tech, group)| {
            let xs = p75_per_seed(results, tech, group);
            let ci = bootstrap_mean_ci(&xs, resamples, seed)?;
            let files = results
                .iter()
                .flat_map(|r| r.upt.iter())
                .filter(|u| u.technology == tech && Group::of(u.adapting) == group)
                .count();
            Some(UptPoint {
                technology: tech,
                group,
                seeds: xs.len(),
                files,
                mean_p75: ci.mean,
                ci_lo: ci.lo,
                ci_hi: ci.hi,
            })
        })
        .collect()
}

/// Aggregates a results directory and writes `report_throughput.csv` and
/// `report_upt.csv` next to the seed directories.
pub fn write_report_tables(dir: &Path) -> Result<(Vec<ThroughputPoint>, Vec<UptPoint>)> {
    let results = load_results(dir)?;
    let thr = throughput_series(&results, DEFAULT_BOOTSTRAP_RESAMPLES, DEFAULT_BOOTSTRAP_SEED);
    let upt = upt_table(&results, DEFAULT_BOOTSTRAP_RESAMPLES, DEFAULT_BOOTSTRAP_SEED);
    write_rows(&dir.join("report_throughput.csv"), &thr)?;
    write_rows(&dir.join("report_upt.csv"), &upt)?;
    Ok((thr, upt))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_definition() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 75.0), Some(75.0));
        assert_eq!(percentile(&v, 50.0), Some(50.0));
        assert_eq!(percentile(&v, 0.0), Some(1.0));
        assert_eq!(percentile(&v, 100.0), Some(100.0));
        assert_eq!(percentile(&[4.2], 90.0), Some(4.2));
        assert_eq!(percentile(&[], 50.0), None);
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0], 75.0), Some(3.0));
    }

    #[test]
    fn single_value_ci_is_a_point() {
        let ci = bootstrap_mean_ci(&[3.0], 500, 1).unwrap();
        assert_eq!((ci.mean, ci.lo, ci.hi), (3.0, 3.0, 3.0));
    }

    #[test]
    fn ci_shrinks_with_more_seeds() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs: Vec<f64> = (0..20).map(|_| rng.random_range(0.0..10.0)).collect();
        let w5 = bootstrap_mean_ci(&xs[..5], 4000, 2).map(|c| c.hi - c.lo).unwrap();
        let w20 = bootstrap_mean_ci(&xs, 4000, 2).map(|c| c.hi - c.lo).unwrap();
        assert!(w20 < w5, "{w20} vs {w5}");
    }

    #[test]
    fn paired_difference() {
        let a = [5.0, 6.0, 7.0];
        let b = [4.0, 5.0, 6.0];
        let ci = paired_diff_ci(&a, &b, 200, 3).unwrap();
        assert_eq!((ci.mean, ci.lo, ci.hi), (1.0, 1.0, 1.0));
        assert!(ci.excludes_zero());
        assert!(paired_diff_ci(&a, &b[..2], 10, 0).is_none());
    }
}
