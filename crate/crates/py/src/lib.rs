//! Python bindings: fingerprints, cluster models, the bandit agent, the
//! simulator and the synthetic regret bench.

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sense_bandits::bandit::{ActionSet, CmabAgent};
use sense_bandits::clustering::{nearest_cluster, train_cluster_model, ClusterModel, LabeledState};
use sense_bandits::fingerprint::{self, BinEdges, PowerSample, SensingFingerprint};
use sense_bandits::report;
use sense_bandits::sim::{self, Policy, RunOptions, Scenario};
use sense_bandits::synthetic::{run_bench, BanditEnv};
use sense_bandits::Error;

fn to_py(e: Error) -> PyErr {
    if e.is_config() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn fp(bins: Vec<f64>) -> PyResult<SensingFingerprint> {
    SensingFingerprint::from_probabilities(bins, 0, 0).map_err(to_py)
}

// ── Fingerprints ────────────────────────────────────────────────────────

/// Normalized histogram of power samples (dBm) over the given bin edges.
#[pyfunction]
fn build_fingerprint(samples_dbm: Vec<f64>, edges: Vec<f64>) -> PyResult<Vec<f64>> {
    let edges = BinEdges::new(edges).map_err(to_py)?;
    let samples: Vec<PowerSample> = samples_dbm
        .iter()
        .enumerate()
        .map(|(i, &v)| PowerSample::new(v, i as u64))
        .collect();
    let f = fingerprint::build_fingerprint(&samples, &edges, 0).map_err(to_py)?;
    Ok(f.bins().to_vec())
}

/// `KL(p || q)` in nats.
#[pyfunction]
fn kl_divergence(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    fingerprint::kl_divergence_raw(&p, &q).map_err(to_py)
}

// ── Cluster model ───────────────────────────────────────────────────────

#[pyclass(name = "ClusterModel", module = "sense_bandits", frozen)]
struct PyClusterModel {
    inner: Arc<ClusterModel>,
}

#[pymethods]
impl PyClusterModel {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Arc::new(ClusterModel::load(path).map_err(to_py)?),
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Arc::new(ClusterModel::from_json(text).map_err(to_py)?),
        })
    }

    /// K-means over labelled fingerprints: `states[i]` is a histogram and
    /// `utilities[i]` its per-action utility vector.
    #[staticmethod]
    #[pyo3(signature = (states, utilities, edges, actions, n_clusters, seed=0))]
    fn train(
        states: Vec<Vec<f64>>,
        utilities: Vec<Vec<f64>>,
        edges: Vec<f64>,
        actions: Vec<f64>,
        n_clusters: usize,
        seed: u64,
    ) -> PyResult<Self> {
        if states.len() != utilities.len() {
            return Err(PyValueError::new_err("states and utilities differ in length"));
        }
        let labeled = states
            .into_iter()
            .zip(utilities)
            .map(|(s, utility)| Ok(LabeledState { state: fp(s)?, utility }))
            .collect::<PyResult<Vec<_>>>()?;
        let edges = BinEdges::new(edges).map_err(to_py)?;
        let actions = ActionSet::new(actions).map_err(to_py)?;
        let model = train_cluster_model(&labeled, edges, actions, n_clusters, seed).map_err(to_py)?;
        Ok(Self { inner: Arc::new(model) })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    fn nearest_cluster(&self, bins: Vec<f64>) -> PyResult<usize> {
        nearest_cluster(&fp(bins)?, &self.inner).map_err(to_py)
    }

    #[getter]
    fn actions(&self) -> Vec<f64> {
        self.inner.actions.thresholds().to_vec()
    }

    #[getter]
    fn bin_edges(&self) -> Vec<f64> {
        self.inner.bin_edges.edges().to_vec()
    }

    #[getter]
    fn centroids(&self) -> Vec<Vec<f64>> {
        self.inner.clusters.iter().map(|c| c.centroid.clone()).collect()
    }

    #[getter]
    fn radii(&self) -> Vec<f64> {
        self.inner.clusters.iter().map(|c| c.radius).collect()
    }

    #[getter]
    fn avg_utility(&self) -> Vec<Vec<f64>> {
        self.inner.clusters.iter().map(|c| c.avg_utility.clone()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "ClusterModel(clusters={}, actions={}, bins={})",
            self.inner.len(),
            self.inner.actions.len(),
            self.inner.bin_edges.bin_count()
        )
    }
}

// ── Agent ───────────────────────────────────────────────────────────────

#[pyclass(name = "CmabAgent", module = "sense_bandits")]
struct PyCmabAgent {
    inner: CmabAgent,
}

#[pymethods]
impl PyCmabAgent {
    #[new]
    #[pyo3(signature = (model, initial, alpha=2.0))]
    fn new(model: &PyClusterModel, initial: Vec<f64>, alpha: f64) -> PyResult<Self> {
        Ok(Self {
            inner: CmabAgent::new(model.inner.clone(), alpha, fp(initial)?).map_err(to_py)?,
        })
    }

    /// Linear UCB without clusters: zero prior, no change detection.
    #[staticmethod]
    #[pyo3(signature = (actions, n_bins, alpha=2.0))]
    fn plain(actions: Vec<f64>, n_bins: usize, alpha: f64) -> PyResult<Self> {
        let actions = ActionSet::new(actions).map_err(to_py)?;
        Ok(Self {
            inner: CmabAgent::plain(actions, n_bins, alpha).map_err(to_py)?,
        })
    }

    /// Returns `(arm, threshold_dbm)`.
    fn select_action(&mut self) -> (usize, f64) {
        let (arm, _) = self.inner.select_action();
        (arm, self.inner.actions().threshold(arm))
    }

    /// Returns `(changed, cluster)`.
    fn update(&mut self, reward: f64, bins: Vec<f64>) -> PyResult<(bool, usize)> {
        let o = self.inner.update(reward, fp(bins)?).map_err(to_py)?;
        Ok((o.changed, o.cluster))
    }

    /// Per-arm `(prior, estimate, bonus)`.
    fn scores(&self) -> Vec<(f64, f64, f64)> {
        self.inner
            .scores()
            .iter()
            .map(|s| (s.prior, s.estimate, s.bonus))
            .collect()
    }

    fn utility_estimate(&self) -> Vec<f64> {
        self.inner.utility_estimate()
    }

    fn reset_regression(&mut self) {
        self.inner.reset_regression();
    }

    #[getter]
    fn epoch(&self) -> u64 {
        self.inner.epoch()
    }

    #[getter]
    fn cluster(&self) -> usize {
        self.inner.view().id
    }
}

// ── Simulation ──────────────────────────────────────────────────────────

/// Default scenario JSON, or the two-cell desk scenario with `desk=True`.
#[pyfunction]
#[pyo3(signature = (desk=false))]
fn default_scenario(desk: bool) -> PyResult<String> {
    let s = if desk { Scenario::desk() } else { Scenario::default() };
    s.to_json().map_err(to_py)
}

/// Runs one replication and returns device summaries, per-group UPT
/// percentiles and the bit ledger.
#[pyfunction]
#[pyo3(signature = (scenario_json, seed=None, policy=None, model=None))]
fn run_scenario<'py>(
    py: Python<'py>,
    scenario_json: &str,
    seed: Option<u64>,
    policy: Option<&str>,
    model: Option<&PyClusterModel>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut scn = Scenario::from_json(scenario_json).map_err(to_py)?;
    if let Some(s) = seed {
        scn.seed = s;
    }
    if let Some(p) = policy {
        scn.policy = p.parse::<Policy>().map_err(to_py)?;
    }
    let model = match (model, scn.policy) {
        (Some(m), _) => Some(m.inner.clone()),
        (None, Policy::Cmab) => match &scn.bandit.cluster_model {
            Some(p) => Some(Arc::new(ClusterModel::load(p).map_err(to_py)?)),
            None => return Err(PyValueError::new_err("policy cmab needs a cluster model")),
        },
        (None, _) => None,
    };
    let rep = py
        .detach(|| sim::run_with_model(&scn, model, RunOptions::default()))
        .map_err(to_py)?;

    let out = PyDict::new(py);
    out.set_item("seed", rep.seed)?;
    out.set_item("policy", rep.policy.as_str())?;
    out.set_item("duration_s", rep.duration_s)?;
    let devices = rep
        .devices
        .iter()
        .map(|d| {
            let row = PyDict::new(py);
            row.set_item("device", d.device)?;
            row.set_item("technology", d.technology.as_str())?;
            row.set_item("adapting", d.adapting)?;
            row.set_item("effective_throughput_mbps", d.effective_throughput_mbps)?;
            row.set_item("bits_acked", d.bits_acked)?;
            row.set_item("bits_failed", d.bits_failed)?;
            row.set_item("tx_attempts", d.tx_attempts)?;
            row.set_item("airtime_s", d.airtime_s)?;
            Ok(row)
        })
        .collect::<PyResult<Vec<_>>>()?;
    out.set_item("devices", devices)?;
    let summary = rep
        .summary()
        .iter()
        .map(|s| {
            let row = PyDict::new(py);
            row.set_item("technology", s.technology.as_str())?;
            row.set_item("group", s.group.as_str())?;
            row.set_item("files", s.files)?;
            row.set_item("mean_upt", s.mean_upt)?;
            row.set_item("p50", s.p50)?;
            row.set_item("p75", s.p75)?;
            row.set_item("p90", s.p90)?;
            Ok(row)
        })
        .collect::<PyResult<Vec<_>>>()?;
    out.set_item("summary", summary)?;
    let bits = PyDict::new(py);
    bits.set_item("generated", rep.bits.generated)?;
    bits.set_item("delivered", rep.bits.delivered)?;
    bits.set_item("dropped", rep.bits.dropped)?;
    bits.set_item("queued", rep.bits.queued)?;
    out.set_item("bits", bits)?;
    Ok(out)
}

/// Synthetic regret bench: maps each policy name to its per-seed G(T).
#[pyfunction]
fn bench_bandit<'py>(py: Python<'py>, env_json: &str, seeds: Vec<u64>) -> PyResult<Bound<'py, PyDict>> {
    let env = BanditEnv::from_json(env_json).map_err(to_py)?;
    let runs = py.detach(|| run_bench(&env, &seeds)).map_err(to_py)?;
    let out = PyDict::new(py);
    for r in &runs {
        let key = r.policy.as_str();
        let mut totals: Vec<f64> = match out.get_item(key)? {
            Some(v) => v.extract()?,
            None => Vec::new(),
        };
        totals.push(r.regret.total());
        out.set_item(key, totals)?;
    }
    Ok(out)
}

// ── Statistics ──────────────────────────────────────────────────────────

/// Nearest-rank percentile; `None` for an empty sample.
#[pyfunction]
fn percentile(mut xs: Vec<f64>, p: f64) -> Option<f64> {
    xs.sort_by(f64::total_cmp);
    report::percentile(&xs, p)
}

/// Bootstrap 95% interval of the mean as `(mean, lo, hi)`.
#[pyfunction]
#[pyo3(signature = (xs, resamples=2000, seed=0))]
fn bootstrap_mean_ci(xs: Vec<f64>, resamples: usize, seed: u64) -> Option<(f64, f64, f64)> {
    report::bootstrap_mean_ci(&xs, resamples, seed).map(|c| (c.mean, c.lo, c.hi))
}

#[pymodule]
#[pyo3(name = "sense_bandits")]
fn sense_bandits_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyClusterModel>()?;
    m.add_class::<PyCmabAgent>()?;
    m.add_function(wrap_pyfunction!(build_fingerprint, m)?)?;
    m.add_function(wrap_pyfunction!(kl_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(default_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(bench_bandit, m)?)?;
    m.add_function(wrap_pyfunction!(percentile, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap_mean_ci, m)?)?;
    Ok(())
}
