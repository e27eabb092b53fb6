//! Piecewise-stationary synthetic bandit with known arm means, used to check
//! the learning core against regret.

use std::path::Path;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandit::{expected_regret, ActionSet, CmabAgent, RegretTracker};
use crate::clustering::{model_from_groups, ClusterModel, LabeledState};
use crate::error::{Error, Result};
use crate::fingerprint::{BinEdges, SensingFingerprint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSegment {
    pub epochs: u64,
    /// True mean reward of every arm.
    pub means: Vec<f64>,
    /// Histogram the segment's fingerprints are sampled from.
    pub fingerprint: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditEnv {
    pub segments: Vec<EnvSegment>,
    /// Standard deviation of the Gaussian reward noise.
    pub noise_sd: f64,
    #[serde(default = "default_samples")]
    pub samples_per_fingerprint: usize,
    /// Fingerprints per segment used to build the oracle cluster model. The
    /// radius is a maximum over these, so a fresh in-cluster fingerprint
    /// trips the change detector with probability about `1 / (n + 1)`.
    #[serde(default = "default_training")]
    pub training_fingerprints: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_samples() -> usize {
    500
}

fn default_training() -> usize {
    2000
}

fn default_alpha() -> f64 {
    2.0
}

impl BanditEnv {
    /// Single-segment environment with a flat fingerprint.
    pub fn stationary(means: Vec<f64>, noise_sd: f64, epochs: u64) -> Self {
        Self {
            segments: vec![EnvSegment {
                epochs,
                means,
                fingerprint: vec![0.25; 4],
            }],
            noise_sd,
            samples_per_fingerprint: default_samples(),
            training_fingerprints: default_training(),
            alpha: default_alpha(),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let env: Self =
            serde_json::from_str(s).map_err(|e| Error::config(format!("invalid bandit environment: {e}")))?;
        env.validate()?;
        Ok(env)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .segments
            .first()
            .ok_or_else(|| Error::config("environment needs at least one segment"))?;
        let (n_arms, n_bins) = (first.means.len(), first.fingerprint.len());
        if !(2..=28).contains(&n_arms) {
            return Err(Error::config("segments need between 2 and 28 arms"));
        }
        if n_bins < 2 {
            return Err(Error::config("fingerprints need at least 2 bins"));
        }
        for (i, s) in self.segments.iter().enumerate() {
            if s.means.len() != n_arms || s.fingerprint.len() != n_bins {
                return Err(Error::config(format!(
                    "segment {i} has a different arm or bin count than segment 0"
                )));
            }
            if s.epochs == 0 {
                return Err(Error::config(format!("segment {i} has zero epochs")));
            }
            if s.means.iter().any(|m| !m.is_finite()) {
                return Err(Error::config(format!("segment {i} has a non-finite mean")));
            }
            if s.fingerprint.iter().any(|&p| !(p >= 0.0)) || !(s.fingerprint.iter().sum::<f64>() > 0.0) {
                return Err(Error::config(format!(
                    "segment {i} fingerprint must be non-negative with positive mass"
                )));
            }
        }
        if !(self.noise_sd >= 0.0) || !(self.alpha > 0.0) {
            return Err(Error::config("noise_sd must be >= 0 and alpha > 0"));
        }
        if self.samples_per_fingerprint == 0 || self.training_fingerprints == 0 {
            return Err(Error::config("sample counts must be positive"));
        }
        Ok(())
    }

    pub fn n_arms(&self) -> usize {
        self.segments[0].means.len()
    }

    pub fn n_bins(&self) -> usize {
        self.segments[0].fingerprint.len()
    }

    pub fn horizon(&self) -> u64 {
        self.segments.iter().map(|s| s.epochs).sum()
    }

    /// Segment index of every epoch.
    pub fn schedule(&self) -> Vec<usize> {
        self.segments
            .iter()
            .enumerate()
            .flat_map(|(i, s)| std::iter::repeat_n(i, s.epochs as usize))
            .collect()
    }

    /// Labels only: arms are mapped onto thresholds 2 dB apart.
    pub fn action_set(&self) -> ActionSet {
        ActionSet::new((0..self.n_arms()).map(|i| -94.0 + 2.0 * i as f64).collect())
            .expect("validated arm count fits the threshold range")
    }

    pub fn bin_edges(&self) -> BinEdges {
        BinEdges::uniform(-95.0, 2.0, self.n_bins()).expect("validated bin count")
    }
}

/// Multinomial draw of a fingerprint from a base histogram.
pub fn sample_fingerprint(
    base: &[f64],
    samples: usize,
    epoch: u64,
    rng: &mut ChaCha8Rng,
) -> SensingFingerprint {
    let w = WeightedIndex::new(base).expect("validated histogram");
    let mut counts = vec![0u64; base.len()];
    for _ in 0..samples {
        counts[w.sample(rng)] += 1;
    }
    crate::fingerprint::histogram_from_counts(&counts, epoch)
}

/// One cluster per segment, labelled with that segment's true means.
pub fn oracle_model(env: &BanditEnv, seed: u64) -> Result<ClusterModel> {
    let mut rng = stream(seed, 2);
    let groups: Vec<Vec<LabeledState>> = env
        .segments
        .iter()
        .map(|s| {
            (0..env.training_fingerprints)
                .map(|_| LabeledState {
                    state: sample_fingerprint(&s.fingerprint, env.samples_per_fingerprint, 0, &mut rng),
                    utility: s.means.clone(),
                })
                .collect()
        })
        .collect();
    model_from_groups(&groups, env.bin_edges(), env.action_set())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchPolicy {
    /// Warm-started agent with the oracle cluster model.
    Cmab,
    /// Plain linear UCB reset whenever the segment changes.
    ColdRestart,
    /// Plain linear UCB that never resets.
    NeverRestart,
}

impl BenchPolicy {
    pub const ALL: [BenchPolicy; 3] = [BenchPolicy::Cmab, BenchPolicy::ColdRestart, BenchPolicy::NeverRestart];

    pub fn as_str(self) -> &'static str {
        match self {
            BenchPolicy::Cmab => "cmab",
            BenchPolicy::ColdRestart => "cold-restart",
            BenchPolicy::NeverRestart => "never-restart",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRun {
    pub policy: BenchPolicy,
    pub seed: u64,
    pub arms: Vec<usize>,
    pub regret: RegretTracker,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Plays one policy through the environment. Fingerprints and reward noise
/// come from seed-determined streams shared by all policies.
pub fn run_policy(
    env: &BanditEnv,
    policy: BenchPolicy,
    model: Option<Arc<ClusterModel>>,
    seed: u64,
) -> Result<BenchRun> {
    env.validate()?;
    let schedule = env.schedule();
    let mut fp_rng = stream(seed, 0);
    let mut noise_rng = stream(seed, 1);
    let initial = sample_fingerprint(
        &env.segments[0].fingerprint,
        env.samples_per_fingerprint,
        0,
        &mut fp_rng,
    );
    let mut agent = match policy {
        BenchPolicy::Cmab => {
            let model = match model {
                Some(m) => m,
                None => Arc::new(oracle_model(env, seed)?),
            };
            CmabAgent::new(model, env.alpha, initial)?
        }
        _ => CmabAgent::plain(env.action_set(), env.n_bins(), env.alpha)?,
    };
    let mut arms = Vec::with_capacity(schedule.len());
    let mut regret = RegretTracker::new();
    for (t, &seg) in schedule.iter().enumerate() {
        if policy == BenchPolicy::ColdRestart && t > 0 && schedule[t - 1] != seg {
            agent.reset_regression();
        }
        let (arm, _) = agent.select_action();
        let means = &env.segments[seg].means;
        let z: f64 = StandardNormal.sample(&mut noise_rng);
        let reward = means[arm] + env.noise_sd * z;
        regret.accumulate(expected_regret(means, arm));
        arms.push(arm);
        let e_t = sample_fingerprint(
            &env.segments[seg].fingerprint,
            env.samples_per_fingerprint,
            t as u64,
            &mut fp_rng,
        );
        agent.update(reward, e_t)?;
    }
    Ok(BenchRun {
        policy,
        seed,
        arms,
        regret,
    })
}

/// Every policy on every seed, in parallel across seeds. Results are ordered
/// by seed, then policy.
pub fn run_bench(env: &BanditEnv, seeds: &[u64]) -> Result<Vec<BenchRun>> {
    env.validate()?;
    let per_seed: Vec<Result<Vec<BenchRun>>> = seeds
        .par_iter()
        .map(|&seed| {
            let model = Arc::new(oracle_model(env, seed)?);
            BenchPolicy::ALL
                .iter()
                .map(|&p| run_policy(env, p, Some(model.clone()), seed))
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    for r in per_seed {
        out.extend(r?);
    }
    Ok(out)
}

/// Wide regret table: one row per (seed, epoch) with arm, g_t and G(t) for
/// each policy.
pub fn write_regret_csv(path: &Path, env: &BanditEnv, runs: &[BenchRun]) -> Result<()> {
    let schedule = env.schedule();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    let mut header = vec!["seed".to_string(), "epoch".into(), "segment".into(), "best_arm".into()];
    for p in BenchPolicy::ALL {
        let p = p.as_str();
        header.extend([format!("{p}_arm"), format!("{p}_g"), format!("{p}_G")]);
    }
    w.write_record(&header)?;
    let mut seeds: Vec<u64> = runs.iter().map(|r| r.seed).collect();
    seeds.dedup();
    for seed in seeds {
        let by_policy: Vec<&BenchRun> = BenchPolicy::ALL
            .iter()
            .map(|&p| {
                runs.iter()
                    .find(|r| r.seed == seed && r.policy == p)
                    .ok_or_else(|| Error::config(format!("missing {} run for seed {seed}", p.as_str())))
            })
            .collect::<Result<_>>()?;
        let mut totals = [0.0f64; 3];
        for (t, &seg) in schedule.iter().enumerate() {
            let means = &env.segments[seg].means;
            let best = crate::bandit::argmax_lowest(means.iter().copied());
            let mut rec = vec![seed.to_string(), t.to_string(), seg.to_string(), best.to_string()];
            for (i, r) in by_policy.iter().enumerate() {
                let g = r.regret.per_epoch()[t];
                totals[i] += g;
                rec.extend([r.arms[t].to_string(), g.to_string(), totals[i].to_string()]);
            }
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
