//! Environment-state clusters.
//!
//! Offline, labeled fingerprints are grouped with k-means under the KL
//! divergence. Each cluster keeps its centroid (mean fingerprint), radius
//! (largest member divergence from the centroid) and the mean utility vector
//! of its members. Online, agents only query the frozen [`ClusterModel`].

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::ActionSet;
use crate::error::{Error, Result};
use crate::fingerprint::{kl_divergence_raw, BinEdges, SensingFingerprint};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cluster {
    pub id: usize,
    pub centroid: Vec<f64>,
    pub radius: f64,
    pub avg_utility: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterModel {
    pub version: u32,
    pub bin_edges: BinEdges,
    pub actions: ActionSet,
    pub clusters: Vec<Cluster>,
}

/// A fingerprint together with the utility vector learned for it.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledState {
    pub state: SensingFingerprint,
    pub utility: Vec<f64>,
}

impl ClusterModel {
    pub fn new(bin_edges: BinEdges, actions: ActionSet, clusters: Vec<Cluster>) -> Result<Self> {
        let m = Self {
            version: MODEL_FORMAT_VERSION,
            bin_edges,
            actions,
            clusters,
        };
        m.validate()?;
        Ok(m)
    }

    /// Single cluster that accepts every state and has a zero prior.
    pub fn trivial(actions: ActionSet, n_bins: usize) -> Result<Self> {
        let edges = BinEdges::uniform(-95.0, 50.0 / n_bins as f64, n_bins)?;
        let n_a = actions.len();
        Self::new(
            edges,
            actions,
            vec![Cluster {
                id: 0,
                centroid: vec![1.0 / n_bins as f64; n_bins],
                radius: f64::MAX,
                avg_utility: vec![0.0; n_a],
            }],
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MODEL_FORMAT_VERSION {
            return Err(Error::config(format!(
                "unsupported cluster model version {} (expected {MODEL_FORMAT_VERSION})",
                self.version
            )));
        }
        if self.clusters.is_empty() {
            return Err(Error::config("cluster model has no clusters"));
        }
        let n_r = self.bin_edges.bin_count();
        let n_a = self.actions.len();
        for (i, c) in self.clusters.iter().enumerate() {
            if c.id != i {
                return Err(Error::config(format!("cluster {i} carries id {}", c.id)));
            }
            if c.centroid.len() != n_r {
                return Err(Error::DimensionMismatch {
                    expected: n_r,
                    actual: c.centroid.len(),
                });
            }
            if c.avg_utility.len() != n_a {
                return Err(Error::DimensionMismatch {
                    expected: n_a,
                    actual: c.avg_utility.len(),
                });
            }
            if !(c.radius >= 0.0) {
                return Err(Error::config(format!("cluster {i} has negative radius")));
            }
            let total: f64 = c.centroid.iter().sum();
            if (total - 1.0).abs() > 1e-9 || c.centroid.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::config(format!("cluster {i} centroid is not a simplex")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

// ── Per-cluster statistics ──────────────────────────────────────────────

/// Element-wise mean of the member fingerprints.
pub fn centroid<'a>(
    members: impl IntoIterator<Item = &'a SensingFingerprint>,
) -> Result<SensingFingerprint> {
    let mut iter = members.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| Error::config("centroid of an empty cluster"))?;
    let mut acc = first.bins().to_vec();
    let mut count = 1usize;
    let mut samples = first.sample_count;
    for m in iter {
        if m.len() != acc.len() {
            return Err(Error::DimensionMismatch {
                expected: acc.len(),
                actual: m.len(),
            });
        }
        for (a, v) in acc.iter_mut().zip(m.bins()) {
            *a += v;
        }
        count += 1;
        samples += m.sample_count;
    }
    for a in &mut acc {
        *a /= count as f64;
    }
    SensingFingerprint::from_probabilities(acc, samples, 0)
}

/// Largest divergence of any member from the centroid.
pub fn radius<'a>(
    members: impl IntoIterator<Item = &'a SensingFingerprint>,
    centroid: &[f64],
) -> Result<f64> {
    let mut best: Option<f64> = None;
    for m in members {
        let d = kl_divergence_raw(m.bins(), centroid)?;
        best = Some(best.map_or(d, |b: f64| b.max(d)));
    }
    best.ok_or_else(|| Error::config("radius of an empty cluster"))
}

/// Element-wise mean of member utility vectors.
pub fn avg_utility<'a>(members: impl IntoIterator<Item = &'a LabeledState>) -> Result<Vec<f64>> {
    let mut acc: Option<Vec<f64>> = None;
    let mut count = 0usize;
    for m in members {
        match &mut acc {
            None => acc = Some(m.utility.clone()),
            Some(a) => {
                if a.len() != m.utility.len() {
                    return Err(Error::DimensionMismatch {
                        expected: a.len(),
                        actual: m.utility.len(),
                    });
                }
                for (x, v) in a.iter_mut().zip(&m.utility) {
                    *x += v;
                }
            }
        }
        count += 1;
    }
    let mut acc = acc.ok_or_else(|| Error::config("average utility of an empty cluster"))?;
    for x in &mut acc {
        *x /= count as f64;
    }
    Ok(acc)
}

/// Index of the cluster whose centroid is KL-closest to `state`; ties go to
/// the lowest id.
pub fn nearest_cluster(state: &SensingFingerprint, model: &ClusterModel) -> Result<usize> {
    nearest_centroid(state.bins(), model.clusters.iter().map(|c| c.centroid.as_slice()))
}

fn nearest_centroid<'a>(
    state: &[f64],
    centroids: impl IntoIterator<Item = &'a [f64]>,
) -> Result<usize> {
    let mut best = None;
    let mut best_d = f64::INFINITY;
    for (k, c) in centroids.into_iter().enumerate() {
        let d = kl_divergence_raw(state, c)?;
        if best.is_none() || d < best_d {
            best = Some(k);
            best_d = d;
        }
    }
    best.ok_or_else(|| Error::config("no clusters to search"))
}

// ── K-means ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of member-to-centroid divergences after each iteration.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

fn objective(states: &[SensingFingerprint], assignments: &[usize], centroids: &[Vec<f64>]) -> f64 {
    states
        .iter()
        .zip(assignments)
        .map(|(s, &k)| kl_divergence_raw(s.bins(), &centroids[k]).expect("checked dims"))
        .sum()
}

/// K-means with KL divergence as the assignment distance and arithmetic-mean
/// centroids. Seeding is k-means++ style (probability proportional to the
/// divergence from the closest chosen centroid). A cluster left empty is
/// re-seeded with the point farthest from its own centroid.
pub fn kmeans_kl(
    states: &[SensingFingerprint],
    n_clusters: usize,
    seed: u64,
    max_iters: usize,
) -> Result<KMeansResult> {
    if n_clusters == 0 {
        return Err(Error::config("number of clusters must be at least 1"));
    }
    if states.len() < n_clusters {
        return Err(Error::config(format!(
            "k-means needs at least {n_clusters} states, got {}",
            states.len()
        )));
    }
    let dim = states[0].len();
    if let Some(bad) = states.iter().find(|s| s.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: bad.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(states, n_clusters, &mut rng)?;
    let mut assignments = vec![usize::MAX; states.len()];
    let mut history = Vec::new();
    let mut iterations = 0;

    while iterations < max_iters.max(1) {
        iterations += 1;
        let mut next: Vec<usize> = states
            .iter()
            .map(|s| nearest_centroid(s.bins(), centroids.iter().map(Vec::as_slice)))
            .collect::<Result<_>>()?;
        repair_empty(states, &mut next, &mut centroids)?;

        for (k, c) in centroids.iter_mut().enumerate() {
            let members = states.iter().zip(&next).filter(|(_, &a)| a == k).map(|(s, _)| s);
            if let Ok(m) = centroid(members) {
                *c = m.bins().to_vec();
            }
        }
        history.push(objective(states, &next, &centroids));

        let stable = next == assignments;
        assignments = next;
        if stable {
            break;
        }
    }

    Ok(KMeansResult {
        assignments,
        centroids,
        objective: history,
        iterations,
    })
}

fn seed_centroids(
    states: &[SensingFingerprint],
    n_clusters: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>> {
    let mut centroids = vec![states[rng.random_range(0..states.len())].bins().to_vec()];
    let mut dist: Vec<f64> = states
        .iter()
        .map(|s| kl_divergence_raw(s.bins(), &centroids[0]))
        .collect::<Result<_>>()?;
    while centroids.len() < n_clusters {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut idx = dist.len() - 1;
            for (i, d) in dist.iter().enumerate() {
                if u < *d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.random_range(0..states.len())
        };
        let c = states[pick].bins().to_vec();
        for (d, s) in dist.iter_mut().zip(states) {
            *d = d.min(kl_divergence_raw(s.bins(), &c)?);
        }
        centroids.push(c);
    }
    Ok(centroids)
}

fn repair_empty(
    states: &[SensingFingerprint],
    assignments: &mut [usize],
    centroids: &mut [Vec<f64>],
) -> Result<()> {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignments.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&n| n == 0) else {
            return Ok(());
        };
        // farthest point among clusters that can spare a member
        let mut far: Option<(usize, f64)> = None;
        for (i, s) in states.iter().enumerate() {
            if sizes[assignments[i]] < 2 {
                continue;
            }
            let d = kl_divergence_raw(s.bins(), &centroids[assignments[i]])?;
            if far.is_none_or(|(_, fd)| d > fd) {
                far = Some((i, d));
            }
        }
        let Some((i, _)) = far else {
            return Ok(());
        };
        assignments[i] = empty;
        centroids[empty] = states[i].bins().to_vec();
    }
}

// ── Training ────────────────────────────────────────────────────────────

/// Clusters labeled traces and computes every cluster's centroid, radius and
/// mean utility. Clusters that end up empty are dropped and the remaining
/// ones renumbered.
pub fn train_cluster_model(
    traces: &[LabeledState],
    bin_edges: BinEdges,
    actions: ActionSet,
    n_clusters: usize,
    seed: u64,
) -> Result<ClusterModel> {
    if traces.len() < n_clusters.max(1) {
        return Err(Error::InsufficientObservation(format!(
            "training {n_clusters} clusters needs at least {} labeled states, got {}",
            n_clusters.max(1),
            traces.len()
        )));
    }
    for t in traces {
        if t.state.len() != bin_edges.bin_count() {
            return Err(Error::DimensionMismatch {
                expected: bin_edges.bin_count(),
                actual: t.state.len(),
            });
        }
        if t.utility.len() != actions.len() {
            return Err(Error::DimensionMismatch {
                expected: actions.len(),
                actual: t.utility.len(),
            });
        }
    }
    let states: Vec<SensingFingerprint> = traces.iter().map(|t| t.state.clone()).collect();
    let km = kmeans_kl(&states, n_clusters, seed, DEFAULT_MAX_ITERS)?;

    let mut clusters = Vec::new();
    for k in 0..n_clusters {
        let members: Vec<&LabeledState> = traces
            .iter()
            .zip(&km.assignments)
            .filter(|(_, &a)| a == k)
            .map(|(t, _)| t)
            .collect();
        if members.is_empty() {
            continue;
        }
        let c = centroid(members.iter().map(|m| &m.state))?;
        let r = radius(members.iter().map(|m| &m.state), c.bins())?;
        let u = avg_utility(members.iter().copied())?;
        clusters.push(Cluster {
            id: clusters.len(),
            centroid: c.bins().to_vec(),
            radius: r,
            avg_utility: u,
        });
    }
    ClusterModel::new(bin_edges, actions, clusters)
}

/// Builds a model from states whose grouping is already known, one cluster
/// per group in order.
pub fn model_from_groups(
    groups: &[Vec<LabeledState>],
    bin_edges: BinEdges,
    actions: ActionSet,
) -> Result<ClusterModel> {
    let clusters = groups
        .iter()
        .enumerate()
        .map(|(id, g)| {
            let c = centroid(g.iter().map(|m| &m.state))?;
            Ok(Cluster {
                id,
                radius: radius(g.iter().map(|m| &m.state), c.bins())?,
                centroid: c.bins().to_vec(),
                avg_utility: avg_utility(g)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ClusterModel::new(bin_edges, actions, clusters)
}
