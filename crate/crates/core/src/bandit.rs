//! Clustering-based multi-armed bandit agent.
//!
//! Each adapting device owns one [`CmabAgent`]. At every epoch boundary the
//! agent
//!
//! 1. checks whether the previous epoch's fingerprint left the current
//!    cluster (`KL(e_{t-1} || centroid) > radius`),
//! 2. on a change, moves to the nearest cluster, loads its average action
//!    utilities as the prior and resets its regression; otherwise folds the
//!    last reward into the ridge regression
//!    ```text
//!      X_t = X_{t-1} + x x^T
//!      b_t = b_{t-1} + r x
//!      mu~ = X_t^{-1} b_t
//!    ```
//! 3. picks the threshold maximizing `prior + mu~ + alpha sqrt(x^T X^-1 x ln(t+1))`.
//!
//! Actions are one-hot vectors so `X` stays diagonal, but the solve goes
//! through a Cholesky factorization so the code path does not depend on that.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::clustering::{nearest_cluster, ClusterModel};
use crate::error::{Error, Result};
use crate::fingerprint::{kl_divergence_raw, SensingFingerprint};

/// Lowest and highest sensing threshold an action may take, in dBm.
pub const THRESHOLD_RANGE_DBM: (f64, f64) = (-95.0, -40.0);

// ── Actions ─────────────────────────────────────────────────────────────

/// Candidate sensing thresholds in dBm, strictly ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ActionSet(Vec<f64>);

impl ActionSet {
    pub fn new(thresholds: Vec<f64>) -> Result<Self> {
        if thresholds.len() < 2 {
            return Err(Error::config("action set needs at least 2 thresholds"));
        }
        if thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("action thresholds must be strictly increasing"));
        }
        let (lo, hi) = THRESHOLD_RANGE_DBM;
        if thresholds.iter().any(|t| !(lo..=hi).contains(t)) {
            return Err(Error::config(format!(
                "action thresholds must lie within [{lo}, {hi}] dBm"
            )));
        }
        Ok(Self(thresholds))
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn threshold(&self, arm: usize) -> f64 {
        self.0[arm]
    }

    /// Index of an exact threshold value.
    pub fn index_of(&self, threshold_dbm: f64) -> Option<usize> {
        self.0.iter().position(|&t| t == threshold_dbm)
    }
}

impl Default for ActionSet {
    /// -82 to -62 dBm in 2 dB steps.
    fn default() -> Self {
        Self((0..11).map(|i| -82.0 + 2.0 * i as f64).collect())
    }
}

impl TryFrom<Vec<f64>> for ActionSet {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ActionSet> for Vec<f64> {
    fn from(a: ActionSet) -> Self {
        a.0
    }
}

/// One-hot action vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionVector(DVector<f64>);

impl ActionVector {
    pub fn one_hot(arm: usize, n_arms: usize) -> Self {
        assert!(arm < n_arms, "arm {arm} out of range for {n_arms} arms");
        let mut v = DVector::zeros(n_arms);
        v[arm] = 1.0;
        Self(v)
    }

    pub fn arm(&self) -> usize {
        self.0.iter().position(|&v| v == 1.0).expect("one-hot")
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }
}

// ── Rewards ─────────────────────────────────────────────────────────────

/// Traffic outcome of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardObservation {
    /// Bits acknowledged.
    pub success_bits: f64,
    /// Bits lost to NACK or ACK timeout.
    pub failed_bits: f64,
    pub epoch_duration_s: f64,
}

/// Effective throughput of an epoch in bits/s: `(r_s - r_f) / duration`.
pub fn observed_reward(obs: &RewardObservation) -> Result<f64> {
    if !(obs.epoch_duration_s > 0.0) {
        return Err(Error::config(format!(
            "epoch duration must be positive, got {}",
            obs.epoch_duration_s
        )));
    }
    if obs.success_bits < 0.0 || obs.failed_bits < 0.0 {
        return Err(Error::config("traffic volumes must be non-negative"));
    }
    Ok((obs.success_bits - obs.failed_bits) / obs.epoch_duration_s)
}

// ── Regression ──────────────────────────────────────────────────────────

/// Ridge-regression state of one agent: usage matrix `X`, reward vector `b`
/// and fractional-utility estimate `mu~ = X^-1 b`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionState {
    x: DMatrix<f64>,
    b: DVector<f64>,
    mu_tilde: DVector<f64>,
}

impl RegressionState {
    pub fn new(n_arms: usize) -> Self {
        Self {
            x: DMatrix::identity(n_arms, n_arms),
            b: DVector::zeros(n_arms),
            mu_tilde: DVector::zeros(n_arms),
        }
    }

    pub fn reset(&mut self) {
        let n = self.b.len();
        *self = Self::new(n);
    }

    /// Rank-one update with the action taken and the reward it earned.
    pub fn observe(&mut self, action: &ActionVector, reward: f64) {
        let x = action.as_vector();
        self.x += x * x.transpose();
        self.b += x * reward;
        self.mu_tilde = self.factor().solve(&self.b);
    }

    fn factor(&self) -> Cholesky<f64, Dyn> {
        Cholesky::new(self.x.clone()).expect("usage matrix is symmetric positive definite")
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn mu_tilde(&self) -> &DVector<f64> {
        &self.mu_tilde
    }

    /// Pulls of `arm` since the last reset, read off the diagonal of `X`.
    pub fn pulls(&self, arm: usize) -> u64 {
        (self.x[(arm, arm)] - 1.0).round() as u64
    }
}

/// Exploration bonus `alpha * sqrt(x^T X^-1 x * ln(t + 1))`.
pub fn confidence_bound(x: &DMatrix<f64>, action: &ActionVector, t: u64, alpha: f64) -> f64 {
    let chol = Cholesky::new(x.clone()).expect("usage matrix is symmetric positive definite");
    confidence_bound_with(&chol, action, t, alpha)
}

fn confidence_bound_with(
    chol: &Cholesky<f64, Dyn>,
    action: &ActionVector,
    t: u64,
    alpha: f64,
) -> f64 {
    let v = action.as_vector();
    let quad = v.dot(&chol.solve(v)).max(0.0);
    alpha * (quad * ((t + 1) as f64).ln()).sqrt()
}

// ── Agent ───────────────────────────────────────────────────────────────

/// Cluster parameters the agent currently works with.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterView {
    pub id: usize,
    pub centroid: Vec<f64>,
    pub radius: f64,
    pub prior: Vec<f64>,
}

impl ClusterView {
    fn from_model(model: &ClusterModel, id: usize) -> Self {
        let c = &model.clusters[id];
        Self {
            id,
            centroid: c.centroid.clone(),
            radius: c.radius,
            prior: c.avg_utility.clone(),
        }
    }
}

/// Change indicator: true iff `KL(previous || centroid)` strictly exceeds the
/// cluster radius.
pub fn detect_change(previous: &SensingFingerprint, view: &ClusterView) -> Result<bool> {
    Ok(kl_divergence_raw(previous.bins(), &view.centroid)? > view.radius)
}

/// Score decomposition of one arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmScore {
    pub prior: f64,
    pub estimate: f64,
    pub bonus: f64,
}

impl ArmScore {
    pub fn total(&self) -> f64 {
        self.prior + self.estimate + self.bonus
    }
}

/// Index of the maximum score; ties go to the lowest index.
pub fn argmax_lowest(scores: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, s) in scores.into_iter().enumerate() {
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    best
}

/// Result of folding one epoch into the agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateOutcome {
    pub changed: bool,
    pub cluster: usize,
}

#[derive(Debug, Clone)]
pub struct CmabAgent {
    model: Arc<ClusterModel>,
    alpha: f64,
    view: ClusterView,
    regression: RegressionState,
    epoch: u64,
    last_action: Option<ActionVector>,
    last_fingerprint: SensingFingerprint,
}

impl CmabAgent {
    /// Initializes the agent from its first fingerprint: picks the nearest
    /// cluster and starts from `X = I`, `b = 0`.
    pub fn new(
        model: Arc<ClusterModel>,
        alpha: f64,
        initial: SensingFingerprint,
    ) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::config(format!("alpha must be positive, got {alpha}")));
        }
        let id = nearest_cluster(&initial, &model)?;
        let view = ClusterView::from_model(&model, id);
        Ok(Self {
            regression: RegressionState::new(model.actions.len()),
            model,
            alpha,
            view,
            epoch: 0,
            last_action: None,
            last_fingerprint: initial,
        })
    }

    /// Plain linear-UCB agent: one cluster that never triggers a change and
    /// contributes a zero prior.
    pub fn plain(actions: ActionSet, n_bins: usize, alpha: f64) -> Result<Self> {
        let model = Arc::new(ClusterModel::trivial(actions, n_bins)?);
        Self::new(model, alpha, SensingFingerprint::uniform(n_bins))
    }

    pub fn actions(&self) -> &ActionSet {
        &self.model.actions
    }

    pub fn model(&self) -> &ClusterModel {
        &self.model
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn view(&self) -> &ClusterView {
        &self.view
    }

    pub fn regression(&self) -> &RegressionState {
        &self.regression
    }

    pub fn last_action(&self) -> Option<usize> {
        self.last_action.as_ref().map(ActionVector::arm)
    }

    /// Change check on the stored previous fingerprint.
    pub fn detect_change(&self) -> Result<bool> {
        detect_change(&self.last_fingerprint, &self.view)
    }

    /// Starts a new epoch: runs the change check on the fingerprint of the
    /// epoch just finished, then either switches cluster and resets the
    /// regression or folds `reward` (earned by the last selected action) into it.
    pub fn update(&mut self, reward: f64, fingerprint: SensingFingerprint) -> Result<UpdateOutcome> {
        if fingerprint.len() != self.view.centroid.len() {
            return Err(Error::DimensionMismatch {
                expected: self.view.centroid.len(),
                actual: fingerprint.len(),
            });
        }
        self.epoch += 1;
        self.last_fingerprint = fingerprint;
        let changed = self.detect_change()?;
        if changed {
            let id = nearest_cluster(&self.last_fingerprint, &self.model)?;
            self.view = ClusterView::from_model(&self.model, id);
            self.regression.reset();
        } else if let Some(action) = &self.last_action {
            self.regression.observe(action, reward);
        }
        debug_assert!(self.diagonal_invariant_holds());
        Ok(UpdateOutcome {
            changed,
            cluster: self.view.id,
        })
    }

    /// Drops regression state while keeping the cluster; used by restart
    /// baselines driven by an external change signal.
    pub fn reset_regression(&mut self) {
        self.regression.reset();
    }

    /// Score decomposition for every arm at the current epoch.
    pub fn scores(&self) -> Vec<ArmScore> {
        let n = self.model.actions.len();
        let chol = self.regression.factor();
        (0..n)
            .map(|a| ArmScore {
                prior: self.view.prior[a],
                estimate: self.regression.mu_tilde[a],
                bonus: confidence_bound_with(
                    &chol,
                    &ActionVector::one_hot(a, n),
                    self.epoch,
                    self.alpha,
                ),
            })
            .collect()
    }

    /// Picks the arm with the highest optimistic score; ties go to the lowest
    /// threshold.
    pub fn select_action(&mut self) -> (usize, ActionVector) {
        let arm = argmax_lowest(self.scores().iter().map(ArmScore::total));
        let v = ActionVector::one_hot(arm, self.model.actions.len());
        self.last_action = Some(v.clone());
        (arm, v)
    }

    /// Current prior plus fractional estimate, the utility label recorded in
    /// training traces.
    pub fn utility_estimate(&self) -> Vec<f64> {
        self.view
            .prior
            .iter()
            .zip(self.regression.mu_tilde.iter())
            .map(|(p, m)| p + m)
            .collect()
    }

    fn diagonal_invariant_holds(&self) -> bool {
        let x = &self.regression.x;
        (0..x.nrows()).all(|i| {
            (0..x.ncols()).all(|j| if i == j { x[(i, j)] >= 1.0 } else { x[(i, j)] == 0.0 })
        })
    }
}

// ── Regret ──────────────────────────────────────────────────────────────

/// Expected regret of choosing `arm` under true utilities `mu`.
pub fn expected_regret(mu: &[f64], arm: usize) -> f64 {
    let best = mu.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    best - mu[arm]
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegretTracker {
    per_epoch: Vec<f64>,
    total: f64,
}

impl RegretTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one epoch's regret and returns the running total.
    pub fn accumulate(&mut self, g: f64) -> f64 {
        self.per_epoch.push(g);
        self.total += g;
        self.total
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn per_epoch(&self) -> &[f64] {
        &self.per_epoch
    }

    /// Accumulated regret after the first `t` epochs.
    pub fn total_at(&self, t: usize) -> f64 {
        self.per_epoch[..t].iter().sum()
    }
}
