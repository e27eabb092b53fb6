//! Sensing fingerprints.
//!
//! A fingerprint is the normalized histogram of the powers a device sensed
//! while contending for the channel during one monitoring window. It is the
//! environment-state representation consumed by the clustering and bandit
//! modules, compared through the Kullback-Leibler divergence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Additive smoothing applied to both arguments of [`kl_divergence`].
pub const KL_SMOOTHING: f64 = 1e-6;

/// One sensed-power reading taken in a MAC slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSample {
    pub value_dbm: f64,
    pub slot_index: u64,
}

impl PowerSample {
    pub fn new(value_dbm: f64, slot_index: u64) -> Self {
        Self {
            value_dbm,
            slot_index,
        }
    }
}

/// Strictly increasing histogram edges in dBm. `N_r + 1` edges define `N_r` bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BinEdges(Vec<f64>);

impl BinEdges {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 3 {
            return Err(Error::config(format!(
                "bin edges need at least 3 values (2 bins), got {}",
                edges.len()
            )));
        }
        if edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::config("bin edges must be finite"));
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("bin edges must be strictly increasing"));
        }
        Ok(Self(edges))
    }

    /// `bins` equal-width bins starting at `low_dbm`.
    pub fn uniform(low_dbm: f64, width_db: f64, bins: usize) -> Result<Self> {
        Self::new((0..=bins).map(|i| low_dbm + width_db * i as f64).collect())
    }

    pub fn edges(&self) -> &[f64] {
        &self.0
    }

    pub fn bin_count(&self) -> usize {
        self.0.len() - 1
    }

    /// Bin index for a power value. Values outside the edge range clamp to the
    /// first or last bin.
    pub fn bin_of(&self, value_dbm: f64) -> usize {
        let n = self.bin_count();
        // number of edges <= value, minus one, is the bin index
        let above = self.0.partition_point(|&e| e <= value_dbm);
        above.saturating_sub(1).min(n - 1)
    }
}

impl Default for BinEdges {
    /// 24 bins of 2 dB over [-95, -47) dBm.
    fn default() -> Self {
        Self::uniform(-95.0, 2.0, 24).expect("static edges are valid")
    }
}

impl TryFrom<Vec<f64>> for BinEdges {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<BinEdges> for Vec<f64> {
    fn from(e: BinEdges) -> Self {
        e.0
    }
}

/// Normalized histogram of sensed powers for one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensingFingerprint {
    bins: Vec<f64>,
    pub sample_count: usize,
    pub epoch: u64,
}

impl SensingFingerprint {
    /// Wraps an existing probability vector, validating that it is a simplex.
    pub fn from_probabilities(bins: Vec<f64>, sample_count: usize, epoch: u64) -> Result<Self> {
        if bins.len() < 2 {
            return Err(Error::config("a fingerprint needs at least 2 bins"));
        }
        if bins.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::config("fingerprint bins must lie in [0, 1]"));
        }
        let total: f64 = bins.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "fingerprint bins must sum to 1, got {total}"
            )));
        }
        Ok(Self {
            bins,
            sample_count,
            epoch,
        })
    }

    /// Uniform histogram over `n` bins.
    pub fn uniform(n: usize) -> Self {
        Self {
            bins: vec![1.0 / n as f64; n],
            sample_count: 0,
            epoch: 0,
        }
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }
}

/// Builds the normalized histogram of `samples` over `edges`.
pub fn build_fingerprint(
    samples: &[PowerSample],
    edges: &BinEdges,
    epoch: u64,
) -> Result<SensingFingerprint> {
    if samples.is_empty() {
        return Err(Error::InsufficientObservation(
            "no power samples in the monitoring window".into(),
        ));
    }
    let mut counts = vec![0u64; edges.bin_count()];
    for s in samples {
        if !s.value_dbm.is_finite() {
            return Err(Error::config(format!(
                "non-finite power sample at slot {}",
                s.slot_index
            )));
        }
        counts[edges.bin_of(s.value_dbm)] += 1;
    }
    Ok(histogram_from_counts(&counts, epoch))
}

/// Normalizes raw bin counts. `counts` must have a nonzero total.
pub(crate) fn histogram_from_counts(counts: &[u64], epoch: u64) -> SensingFingerprint {
    let total: u64 = counts.iter().sum();
    debug_assert!(total > 0);
    let bins = counts
        .iter()
        .map(|&c| c as f64 / total as f64)
        .collect();
    SensingFingerprint {
        bins,
        sample_count: total as usize,
        epoch,
    }
}

fn smoothed(p: &[f64]) -> impl Iterator<Item = f64> + '_ {
    let norm = 1.0 + KL_SMOOTHING * p.len() as f64;
    p.iter().map(move |&v| (v + KL_SMOOTHING) / norm)
}

/// `KL(p || q)` in nats over raw probability slices, with additive smoothing.
pub fn kl_divergence_raw(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            actual: q.len(),
        });
    }
    let kl: f64 = smoothed(p)
        .zip(smoothed(q))
        .map(|(a, b)| a * (a / b).ln())
        .sum();
    // rounding can leave a tiny negative residue for identical inputs
    Ok(kl.max(0.0))
}

/// Kullback-Leibler divergence `KL(p || q)` in nats.
pub fn kl_divergence(p: &SensingFingerprint, q: &SensingFingerprint) -> Result<f64> {
    kl_divergence_raw(&p.bins, &q.bins)
}
