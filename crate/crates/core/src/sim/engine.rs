//! Slot-synchronous event loop.
//!
//! Every 9 µs slot runs, in order: epoch boundary work, transmission events
//! (data end, ACK start, ACK end), file arrivals, a sensed-power refresh, one
//! contention step per device, and finally the start of any transmissions
//! decided in that slot. A transmission started in slot `n` is heard by the
//! others from slot `n + 1`; devices starting in the same slot collide and are
//! sorted out by the SINR model.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::bandit::CmabAgent;
use crate::clustering::ClusterModel;
use crate::error::{Error, Result};
use crate::fingerprint::{histogram_from_counts, SensingFingerprint};
use crate::mac::{cca_decision, on_tx_result, step_slot, BackoffState, Cca, LbtConfig, MacAction, Phase, TxOutcome, SLOT_S};
use crate::phy::{dbm_to_mw, link_adaptation, mw_to_dbm};
use crate::sim::metrics::{
    AgentRow, BitLedger, DeviceSummary, EpochRow, MetricsReport, TraceRow, UptRow,
};
use crate::sim::scenario::{Direction, Policy, Scenario, SlotTiming, Technology};
use crate::sim::topology::{attach, distance, drop_users, mobility_step, DeviceClass};
use crate::sim::traffic::{segments, traffic_arrivals};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Record per-arm score decompositions of every agent decision.
    pub debug_bandit: bool,
    /// Record every learner's fingerprints, labelled with its final estimate.
    pub collect_traces: bool,
}

/// Random-number streams, one family per purpose so that policies compared on
/// the same seed see the same topology, shadowing, traffic and mobility.
#[derive(Debug, Clone, Copy)]
enum Stream {
    Topology = 0,
    Shadowing = 1,
    Traffic = 2,
    Mobility = 3,
    Mac = 4,
    Policy = 5,
}

fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 32) | index);
    rng
}

/// Runs a scenario, loading the cluster model it names when the policy needs one.
pub fn run(scn: &Scenario, opts: RunOptions) -> Result<MetricsReport> {
    let model = match (&scn.policy, &scn.bandit.cluster_model) {
        (Policy::Cmab, Some(path)) => Some(Arc::new(ClusterModel::load(path)?)),
        (Policy::Cmab, None) => {
            return Err(Error::Scenario(
                "policy cmab needs bandit.cluster_model".into(),
            ))
        }
        _ => None,
    };
    run_with_model(scn, model, opts)
}

/// Runs a scenario with an explicitly supplied cluster model.
pub fn run_with_model(
    scn: &Scenario,
    model: Option<Arc<ClusterModel>>,
    opts: RunOptions,
) -> Result<MetricsReport> {
    scn.validate()?;
    if let Some(m) = &model {
        if m.bin_edges != scn.fingerprint.edges {
            return Err(Error::Scenario(
                "cluster model bin edges differ from fingerprint.edges".into(),
            ));
        }
        if m.actions != scn.bandit.actions {
            return Err(Error::Scenario(
                "cluster model action set differs from bandit.actions".into(),
            ));
        }
    }
    if scn.policy == Policy::Cmab && model.is_none() {
        return Err(Error::Scenario("policy cmab needs a cluster model".into()));
    }
    let mut sim = Sim::new(scn, model, opts)?;
    sim.run()?;
    Ok(sim.finish())
}

// ── State ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
struct Node {
    tech: Technology,
    pos: [f64; 2],
    tx_mw: f64,
    /// Serving cell (node index) for users; self for cells.
    serving: usize,
    /// Number of frames (data or ACK) this node is emitting right now.
    emitting: u32,
    /// Contender index if this node contends for the channel.
    contender: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    file: usize,
    /// Receiving node for downlink; unused for uplink.
    dest: usize,
    bits: u64,
    attempts: u32,
}

#[derive(Debug, Clone)]
struct FileState {
    user: usize,
    arrival_slot: u64,
    bits: u64,
    outstanding: usize,
    dropped: bool,
}

#[derive(Debug, Clone, Default)]
struct EpochCounters {
    bits_acked: u64,
    bits_failed: u64,
    tx_attempts: u64,
    tx_failures: u64,
    freezes: u64,
    airtime_slots: u64,
}

#[derive(Debug, Clone)]
struct Contender {
    node: usize,
    tech: Technology,
    adapting: bool,
    policy: Policy,
    lbt: LbtConfig,
    mac: BackoffState,
    mac_rng: ChaCha8Rng,
    policy_rng: ChaCha8Rng,
    agent: Option<CmabAgent>,
    last_fp: SensingFingerprint,
    hist: Vec<u64>,
    queue: VecDeque<Segment>,
    ep: EpochCounters,
    acked_total: u64,
    failed_total: u64,
    attempts_total: u64,
    airtime_total: u64,
    cluster: Option<usize>,
}

impl Contender {
    fn gamma(&self) -> f64 {
        self.lbt.threshold_dbm
    }
}

#[derive(Debug, Clone)]
struct Tx {
    contender: usize,
    tx_node: usize,
    rx_node: usize,
    segs: Vec<Segment>,
    /// Absolute slot span `[start, end)` of each segment.
    spans: Vec<(u64, u64)>,
    min_sinr_db: Vec<f64>,
    required_sinr_db: f64,
    data_slots: u64,
    tracked_to: u64,
    success: Vec<bool>,
    ack_sent: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    DataEnd,
    AckStart,
    AckEnd,
}

struct Sim<'a> {
    scn: &'a Scenario,
    opts: RunOptions,
    timing: SlotTiming,
    model: Option<Arc<ClusterModel>>,
    nodes: Vec<Node>,
    /// `rx_mw[i][j]`: power node `j` receives from node `i`.
    rx_mw: Vec<Vec<f64>>,
    shadow_db: Vec<Vec<f64>>,
    noise_mw: f64,
    contenders: Vec<Contender>,
    sensed_dbm: Vec<f64>,
    sensed_dirty: bool,
    files: Vec<FileState>,
    /// Per user: pending arrival slots, earliest last.
    arrivals: Vec<Vec<u64>>,
    txs: Vec<Option<Tx>>,
    active: Vec<usize>,
    events: BinaryHeap<Reverse<(u64, EventKind, usize)>>,
    mobility_rng: ChaCha8Rng,
    out: MetricsReport,
    bits: BitLedger,
    segment_sizes: Vec<u64>,
}

impl<'a> Sim<'a> {
    fn new(scn: &'a Scenario, model: Option<Arc<ClusterModel>>, opts: RunOptions) -> Result<Self> {
        let timing = scn.slot_timing();
        let phy = &scn.phy;
        let n_cells = scn.cells.len();
        let user_pos = if scn.user_positions.is_empty() {
            drop_users(scn, &mut stream_rng(scn.seed, Stream::Topology, 0))?
        } else {
            scn.user_positions.clone()
        };

        let mut nodes: Vec<Node> = scn
            .cells
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                let class = DeviceClass::cell(cell.technology);
                Node {
                    tech: cell.technology,
                    pos: cell.position,
                    tx_mw: dbm_to_mw(class.tx_power_dbm(phy)),
                    serving: c,
                    emitting: 0,
                    contender: None,
                }
            })
            .collect();
        for (i, &pos) in user_pos.iter().enumerate() {
            let home = i / scn.users_per_cell;
            let tech = scn.cells[home].technology;
            let class = DeviceClass::user(tech);
            nodes.push(Node {
                tech,
                pos,
                tx_mw: dbm_to_mw(class.tx_power_dbm(phy)),
                serving: home,
                emitting: 0,
                contender: None,
            });
        }
        let n = nodes.len();

        let mut sh_rng = stream_rng(scn.seed, Stream::Shadowing, 0);
        let normal = Normal::new(0.0, scn.phy.shadowing_sigma_db.max(0.0))
            .map_err(|e| Error::Scenario(format!("shadowing: {e}")))?;
        let mut shadow_db = vec![vec![0.0; n]; n];
        #[allow(clippy::needless_range_loop)]
        for i in 0..n {
            for j in (i + 1)..n {
                let s = if scn.phy.shadowing_sigma_db > 0.0 {
                    normal.sample(&mut sh_rng)
                } else {
                    0.0
                };
                shadow_db[i][j] = s;
                shadow_db[j][i] = s;
            }
        }

        // Contenders: users for uplink, cells for downlink.
        let mut contenders = Vec::new();
        let contender_nodes: Vec<(usize, bool)> = match scn.direction {
            Direction::Uplink => (n_cells..n)
                .map(|u| (u, (u - n_cells) % scn.users_per_cell < scn.adapting_per_cell))
                .collect(),
            Direction::Downlink => (0..n_cells).map(|c| (c, scn.adapting_per_cell > 0)).collect(),
        };
        let n_bins = scn.fingerprint.edges.bin_count();
        for (k, &(node, adapting)) in contender_nodes.iter().enumerate() {
            let tech = nodes[node].tech;
            nodes[node].contender = Some(k);
            contenders.push(Contender {
                node,
                tech,
                adapting,
                policy: if adapting { scn.policy } else { Policy::Standard },
                lbt: *scn.mac.lbt(tech),
                mac: BackoffState::new(),
                mac_rng: stream_rng(scn.seed, Stream::Mac, k as u64),
                policy_rng: stream_rng(scn.seed, Stream::Policy, k as u64),
                agent: None,
                last_fp: SensingFingerprint::uniform(n_bins),
                hist: vec![0; n_bins],
                queue: VecDeque::new(),
                ep: EpochCounters::default(),
                acked_total: 0,
                failed_total: 0,
                attempts_total: 0,
                airtime_total: 0,
                cluster: None,
            });
        }

        let duration_s = timing.total as f64 * SLOT_S;
        let arrivals = (n_cells..n)
            .map(|u| {
                if scn.traffic.full_buffer {
                    return Vec::new();
                }
                let mut rng = stream_rng(scn.seed, Stream::Traffic, u as u64);
                let mut slots: Vec<u64> =
                    traffic_arrivals(scn.traffic.arrival_rate_per_user, duration_s, &mut rng)
                        .into_iter()
                        .map(|t| ((t / SLOT_S) as u64).min(timing.total - 1))
                        .collect();
                slots.reverse();
                slots
            })
            .collect();

        let out = MetricsReport {
            scenario: scn.name.clone(),
            seed: scn.seed,
            policy: scn.policy,
            duration_s,
            devices: Vec::new(),
            epochs: Vec::new(),
            upt: Vec::new(),
            agents: Vec::new(),
            traces: Vec::new(),
            bits: BitLedger::default(),
            gamma_labels: scn.bandit.actions.thresholds().to_vec(),
            bin_edges: scn.fingerprint.edges.edges().to_vec(),
        };

        let mut sim = Self {
            scn,
            opts,
            timing,
            model,
            rx_mw: vec![vec![0.0; n]; n],
            shadow_db,
            noise_mw: scn.phy.noise_mw(),
            sensed_dbm: vec![scn.phy.noise_dbm; n],
            sensed_dirty: true,
            nodes,
            contenders,
            files: Vec::new(),
            arrivals,
            txs: Vec::new(),
            active: Vec::new(),
            events: BinaryHeap::new(),
            mobility_rng: stream_rng(scn.seed, Stream::Mobility, 0),
            out,
            bits: BitLedger::default(),
            segment_sizes: segments(scn.traffic.file_size_bytes, scn.traffic.segment_bytes),
        };
        sim.refresh_gains();
        for k in 0..sim.contenders.len() {
            sim.init_policy(k)?;
        }
        Ok(sim)
    }

    // ── Radio state ─────────────────────────────────────────────────────

    fn refresh_gains(&mut self) {
        let phy = &self.scn.phy;
        let n = self.nodes.len();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    self.rx_mw[i][j] = 0.0;
                    continue;
                }
                let d = distance(self.nodes[i].pos, self.nodes[j].pos);
                let loss = phy.path_loss_model.loss_db(d, phy.carrier_ghz) + self.shadow_db[i][j];
                self.rx_mw[i][j] = self.nodes[i].tx_mw * dbm_to_mw(-loss);
            }
        }
        // Users follow the strongest cell of their technology.
        let n_cells = self.scn.cells.len();
        for u in n_cells..n {
            let rx: Vec<f64> = (0..n_cells).map(|c| mw_to_dbm(self.rx_mw[c][u])).collect();
            if let Some(c) = attach(self.nodes[u].tech, &rx, &self.scn.cells) {
                self.nodes[u].serving = c;
            }
        }
        self.sensed_dirty = true;
    }

    fn refresh_sensed(&mut self) {
        let emitters: Vec<usize> = (0..self.nodes.len()).filter(|&i| self.nodes[i].emitting > 0).collect();
        for c in &self.contenders {
            let j = c.node;
            let total: f64 = emitters
                .iter()
                .filter(|&&i| i != j)
                .map(|&i| self.rx_mw[i][j])
                .sum::<f64>()
                + self.noise_mw;
            self.sensed_dbm[j] = mw_to_dbm(total);
        }
        self.sensed_dirty = false;
    }

    /// Folds the SINR that held over `[tracked_to, to)` into every active
    /// transmission's per-segment minimum. Must run before any change of
    /// emitters or gains.
    fn advance_trackers(&mut self, to: u64) {
        for &t in &self.active {
            let tx = self.txs[t].as_ref().expect("active tx");
            if to <= tx.tracked_to {
                continue;
            }
            let from = tx.tracked_to;
            let rx = tx.rx_node;
            let sinr = if self.nodes[rx].emitting > 0 {
                f64::NEG_INFINITY
            } else {
                let signal = self.rx_mw[tx.tx_node][rx];
                let interf: f64 = self
                    .active
                    .iter()
                    .filter(|&&o| o != t)
                    .map(|&o| self.rx_mw[self.txs[o].as_ref().expect("active tx").tx_node][rx])
                    .sum();
                mw_to_dbm(signal / (interf + self.noise_mw))
            };
            let tx = self.txs[t].as_mut().expect("active tx");
            for (s, &(a, b)) in tx.spans.iter().enumerate() {
                if a < to && b > from {
                    tx.min_sinr_db[s] = tx.min_sinr_db[s].min(sinr);
                }
            }
            tx.tracked_to = to;
        }
    }

    // ── Policies ────────────────────────────────────────────────────────

    fn init_policy(&mut self, k: usize) -> Result<()> {
        let scn = self.scn;
        let c = &mut self.contenders[k];
        match c.policy {
            Policy::Standard => {}
            Policy::Random => {
                let [lo, hi] = scn.bandit.random_range_dbm;
                c.lbt.threshold_dbm = c.policy_rng.random_range(lo..=hi) as f64;
            }
            Policy::Cmab | Policy::PlainUcb => {
                let n_bins = scn.fingerprint.edges.bin_count();
                let agent = match (c.policy, &self.model) {
                    (Policy::Cmab, Some(m)) => {
                        CmabAgent::new(m.clone(), scn.bandit.alpha, c.last_fp.clone())?
                    }
                    _ => CmabAgent::plain(scn.bandit.actions.clone(), n_bins, scn.bandit.alpha)?,
                };
                c.agent = Some(agent);
                self.decide(k, 0, false, 0.0);
            }
        }
        Ok(())
    }

    /// Runs one selection for a learner and applies the chosen threshold.
    fn decide(&mut self, k: usize, epoch: u64, theta: bool, reward: f64) {
        let debug = self.opts.debug_bandit;
        let c = &mut self.contenders[k];
        let agent = c.agent.as_mut().expect("learner has an agent");
        let scores = debug.then(|| agent.scores());
        let (arm, _) = agent.select_action();
        let gamma = agent.actions().threshold(arm);
        c.lbt.threshold_dbm = gamma;
        c.cluster = Some(agent.view().id);
        if let Some(scores) = scores {
            for (a, s) in scores.iter().enumerate() {
                self.out.agents.push(AgentRow {
                    epoch,
                    device: c.node,
                    cluster: agent.view().id,
                    theta,
                    chosen_gamma: gamma,
                    reward,
                    arm_gamma: agent.actions().threshold(a),
                    prior: s.prior,
                    estimate: s.estimate,
                    bonus: s.bonus,
                    score: s.total(),
                });
            }
        }
    }

    /// Closes epoch `t - 1` and, unless the run is over, opens epoch `t`.
    fn epoch_boundary(&mut self, t: u64, slot: u64) -> Result<()> {
        let epoch_s = self.scn.timing.epoch_s;
        let done = t >= self.scn.duration_epochs;
        for k in 0..self.contenders.len() {
            let c = &mut self.contenders[k];
            let reward_mbps =
                (c.ep.bits_acked as f64 - c.ep.bits_failed as f64) / epoch_s / 1e6;
            self.out.epochs.push(EpochRow {
                epoch: t - 1,
                time_s: t as f64 * epoch_s,
                device: c.node,
                technology: c.tech,
                adapting: c.adapting,
                policy: c.policy,
                gamma_dbm: c.gamma(),
                cluster: c.cluster,
                bits_acked: c.ep.bits_acked,
                bits_failed: c.ep.bits_failed,
                reward_mbps,
                effective_throughput_mbps: c.acked_total as f64 / (t as f64 * epoch_s) / 1e6,
                tx_attempts: c.ep.tx_attempts,
                tx_failures: c.ep.tx_failures,
                freezes: c.ep.freezes,
                airtime_s: c.ep.airtime_slots as f64 * SLOT_S,
            });
            c.ep = EpochCounters::default();

            // Fingerprint of the epoch just closed.
            if c.hist.iter().any(|&v| v > 0) {
                c.last_fp = histogram_from_counts(&c.hist, t - 1);
            }
            c.hist.iter_mut().for_each(|v| *v = 0);
            if self.opts.collect_traces && c.agent.is_some() {
                self.out.traces.push(TraceRow {
                    device: c.node,
                    epoch: t - 1,
                    bins: c.last_fp.bins().to_vec(),
                    utility: Vec::new(),
                });
            }
            if done {
                continue;
            }
            match c.policy {
                Policy::Standard => {}
                Policy::Random => {
                    let [lo, hi] = self.scn.bandit.random_range_dbm;
                    c.lbt.threshold_dbm = c.policy_rng.random_range(lo..=hi) as f64;
                }
                Policy::Cmab | Policy::PlainUcb => {
                    let fp = c.last_fp.clone();
                    let outcome = c.agent.as_mut().expect("learner has an agent").update(reward_mbps, fp)?;
                    self.decide(k, t, outcome.changed, reward_mbps);
                }
            }
        }
        if !done {
            self.advance_trackers(slot);
            let room = self.scn.room;
            let dt = epoch_s;
            let vmax = self.scn.mobility.max_speed_mps;
            let n_cells = self.scn.cells.len();
            for u in n_cells..self.nodes.len() {
                self.nodes[u].pos = mobility_step(self.nodes[u].pos, dt, vmax, &room, &mut self.mobility_rng);
            }
            self.refresh_gains();
        }
        Ok(())
    }

    // ── Traffic ─────────────────────────────────────────────────────────

    /// Contender that carries traffic for `user` right now.
    fn carrier_of(&self, user: usize) -> usize {
        match self.scn.direction {
            Direction::Uplink => user,
            Direction::Downlink => self.nodes[user].serving,
        }
    }

    fn enqueue_file(&mut self, user: usize, slot: u64) {
        let file = self.files.len();
        let bits: u64 = self.segment_sizes.iter().sum::<u64>() * 8;
        self.files.push(FileState {
            user,
            arrival_slot: slot,
            bits,
            outstanding: self.segment_sizes.len(),
            dropped: false,
        });
        self.bits.generated += bits;
        let k = self.nodes[self.carrier_of(user)].contender.expect("carrier contends");
        let q = &mut self.contenders[k].queue;
        q.extend(self.segment_sizes.iter().map(|&b| Segment {
            file,
            dest: user,
            bits: b * 8,
            attempts: 0,
        }));
    }

    fn process_arrivals(&mut self, slot: u64) {
        let n_cells = self.scn.cells.len();
        for ui in 0..self.arrivals.len() {
            while self.arrivals[ui].last().is_some_and(|&s| s <= slot) {
                self.arrivals[ui].pop();
                self.enqueue_file(n_cells + ui, slot);
            }
        }
        if self.scn.traffic.full_buffer {
            for u in n_cells..self.nodes.len() {
                let k = self.nodes[self.carrier_of(u)].contender.expect("carrier contends");
                let c = &self.contenders[k];
                if c.queue.is_empty() && c.mac.phase != Phase::Transmitting {
                    self.enqueue_file(u, slot);
                }
            }
        }
    }

    fn next_arrival(&self) -> u64 {
        self.arrivals
            .iter()
            .filter_map(|a| a.last().copied())
            .min()
            .unwrap_or(u64::MAX)
    }

    // ── Transmissions ───────────────────────────────────────────────────

    fn begin_tx(&mut self, k: usize, slot: u64) {
        let scn = self.scn;
        let phy = &scn.phy;
        let tx_node = self.contenders[k].node;
        let head = *self.contenders[k].queue.front().expect("StartTx implies traffic");
        let rx_node = match scn.direction {
            Direction::Uplink => self.nodes[tx_node].serving,
            Direction::Downlink => head.dest,
        };
        let snr_db = mw_to_dbm(self.rx_mw[tx_node][rx_node] / self.noise_mw);
        let la = link_adaptation(snr_db, phy);

        // Aggregate segments up to the occupancy limit, at least one.
        let mut segs = Vec::new();
        let mut air_s = phy.preamble_s;
        let queue = &mut self.contenders[k].queue;
        while let Some(&s) = queue.front() {
            if scn.direction == Direction::Downlink && s.dest != head.dest {
                break;
            }
            let dur = s.bits as f64 / la.rate_bps;
            if !segs.is_empty() && air_s + dur > scn.mac.max_occupancy_s {
                break;
            }
            air_s += dur;
            segs.push(s);
            queue.pop_front();
        }
        let mut spans = Vec::with_capacity(segs.len());
        let mut t0 = 0.0;
        let mut edge = phy.preamble_s;
        for s in &segs {
            let t1 = edge + s.bits as f64 / la.rate_bps;
            spans.push((slot + (t0 / SLOT_S).floor() as u64, slot + (t1 / SLOT_S).ceil() as u64));
            t0 = t1;
            edge = t1;
        }
        let data_slots = (air_s / SLOT_S).ceil().max(1.0) as u64;
        let n_segs = segs.len();

        self.advance_trackers(slot);
        let id = self.txs.len();
        self.txs.push(Some(Tx {
            contender: k,
            tx_node,
            rx_node,
            segs,
            spans,
            min_sinr_db: vec![f64::INFINITY; n_segs],
            required_sinr_db: la.required_sinr_db,
            data_slots,
            tracked_to: slot,
            success: Vec::new(),
            ack_sent: false,
        }));
        self.active.push(id);
        self.nodes[tx_node].emitting += 1;
        self.sensed_dirty = true;
        let c = &mut self.contenders[k];
        c.ep.tx_attempts += 1;
        c.attempts_total += 1;
        self.events.push(Reverse((slot + data_slots, EventKind::DataEnd, id)));
    }

    fn ack_slots(&self) -> (u64, u64) {
        let q = |s: f64| (s / SLOT_S - 1e-9).ceil().max(0.0) as u64;
        (q(self.scn.mac.ack_gap_s), q(self.scn.mac.ack_s))
    }

    fn handle_event(&mut self, slot: u64, kind: EventKind, id: usize) {
        match kind {
            EventKind::DataEnd => {
                self.advance_trackers(slot);
                self.active.retain(|&t| t != id);
                let (gap, ack) = self.ack_slots();
                let tx = self.txs[id].as_mut().expect("tx exists");
                self.nodes[tx.tx_node].emitting -= 1;
                self.sensed_dirty = true;
                tx.success = tx
                    .min_sinr_db
                    .iter()
                    .map(|&s| s >= tx.required_sinr_db)
                    .collect();
                tx.ack_sent = tx.success.iter().any(|&s| s);
                let ack_sent = tx.ack_sent;
                let c = &mut self.contenders[tx.contender];
                c.ep.airtime_slots += tx.data_slots;
                c.airtime_total += tx.data_slots;
                if ack_sent {
                    self.events.push(Reverse((slot + gap, EventKind::AckStart, id)));
                }
                self.events.push(Reverse((slot + gap + ack, EventKind::AckEnd, id)));
            }
            EventKind::AckStart => {
                self.advance_trackers(slot);
                let rx = self.txs[id].as_ref().expect("tx exists").rx_node;
                self.nodes[rx].emitting += 1;
                self.sensed_dirty = true;
            }
            EventKind::AckEnd => {
                let tx = self.txs[id].take().expect("tx exists");
                if tx.ack_sent {
                    self.advance_trackers(slot);
                    self.nodes[tx.rx_node].emitting -= 1;
                    self.sensed_dirty = true;
                }
                self.complete_tx(tx, slot);
            }
        }
    }

    fn complete_tx(&mut self, tx: Tx, slot: u64) {
        let retry_limit = self.scn.mac.retry_limit;
        let k = tx.contender;
        let mut requeue = Vec::new();
        for (seg, &ok) in tx.segs.iter().zip(&tx.success) {
            if ok {
                self.contenders[k].ep.bits_acked += seg.bits;
                self.contenders[k].acked_total += seg.bits;
                self.bits.delivered += seg.bits;
                self.segment_done(seg.file, slot);
            } else {
                self.contenders[k].ep.bits_failed += seg.bits;
                self.contenders[k].failed_total += seg.bits;
                let mut s = *seg;
                s.attempts += 1;
                if s.attempts >= retry_limit {
                    self.bits.dropped += s.bits;
                    self.files[s.file].dropped = true;
                    self.segment_done(s.file, slot);
                } else {
                    requeue.push(s);
                }
            }
        }
        let c = &mut self.contenders[k];
        for s in requeue.into_iter().rev() {
            c.queue.push_front(s);
        }
        let outcome = if tx.ack_sent {
            TxOutcome::Ack
        } else {
            c.ep.tx_failures += 1;
            TxOutcome::Nack
        };
        let lbt = c.lbt;
        on_tx_result(&mut c.mac, outcome, &lbt, &mut c.mac_rng);
    }

    fn segment_done(&mut self, file: usize, slot: u64) {
        let f = &mut self.files[file];
        f.outstanding -= 1;
        if f.outstanding > 0 || f.dropped {
            return;
        }
        let user = f.user;
        let arrival_s = f.arrival_slot as f64 * SLOT_S;
        let completion_s = slot as f64 * SLOT_S;
        let bits = f.bits;
        let k = self.nodes[self.carrier_of(user)].contender;
        let adapting = match self.scn.direction {
            Direction::Uplink => k.map(|k| self.contenders[k].adapting).unwrap_or(false),
            Direction::Downlink => {
                self.contenders.iter().any(|c| c.node == self.nodes[user].serving && c.adapting)
            }
        };
        self.out.upt.push(UptRow {
            device: user,
            technology: self.nodes[user].tech,
            adapting,
            file,
            arrival_s,
            completion_s,
            bits,
            upt_mbps: bits as f64 / (completion_s - arrival_s).max(SLOT_S) / 1e6,
        });
    }

    // ── Main loop ───────────────────────────────────────────────────────

    fn in_window(&self, slot: u64) -> bool {
        let off = slot % self.timing.epoch;
        off >= self.timing.monitor_start && off < self.timing.monitor_start + self.timing.monitor_len
    }

    fn run(&mut self) -> Result<()> {
        let total = self.timing.total;
        let epoch = self.timing.epoch;
        let edges = self.scn.fingerprint.edges.clone();
        let mut starters = Vec::new();
        let mut slot = 0u64;
        while slot < total {
            if slot > 0 && slot.is_multiple_of(epoch) {
                self.epoch_boundary(slot / epoch, slot)?;
            }
            while let Some(&Reverse((s, kind, id))) = self.events.peek() {
                if s > slot {
                    break;
                }
                self.events.pop();
                self.handle_event(slot, kind, id);
            }
            self.process_arrivals(slot);
            if self.sensed_dirty {
                self.refresh_sensed();
            }

            // Nothing on the air and nobody with traffic: jump ahead.
            if self.active.is_empty()
                && self.events.is_empty()
                && self.contenders.iter().all(|c| c.mac.phase == Phase::Idle && c.queue.is_empty())
            {
                let next_boundary = (slot / epoch + 1) * epoch;
                let next = self.next_arrival().min(next_boundary).min(total);
                if next > slot + 1 {
                    slot = next;
                    continue;
                }
            }

            let sampling = self.in_window(slot);
            for k in 0..self.contenders.len() {
                let c = &mut self.contenders[k];
                if c.mac.phase == Phase::Transmitting {
                    continue;
                }
                let y = self.sensed_dbm[c.node];
                let cca = cca_decision(y, c.lbt.threshold_dbm);
                let has_traffic = !c.queue.is_empty();
                let action = step_slot(&mut c.mac, cca, has_traffic, &c.lbt, &mut c.mac_rng);
                debug_assert!(action != MacAction::Decrement || cca == Cca::Idle);
                match action {
                    MacAction::Freeze => c.ep.freezes += 1,
                    MacAction::StartTx => starters.push(k),
                    _ => {}
                }
                if sampling && matches!(action, MacAction::Defer | MacAction::Decrement | MacAction::Freeze) {
                    c.hist[edges.bin_of(y)] += 1;
                }
            }
            for k in starters.drain(..) {
                self.begin_tx(k, slot);
            }
            slot += 1;
        }
        self.epoch_boundary(self.scn.duration_epochs, total)
    }

    fn finish(mut self) -> MetricsReport {
        let duration_s = self.out.duration_s;
        let mut queued: u64 = self.contenders.iter().flat_map(|c| c.queue.iter()).map(|s| s.bits).sum();
        queued += self
            .txs
            .iter()
            .flatten()
            .flat_map(|t| t.segs.iter())
            .map(|s| s.bits)
            .sum::<u64>();
        self.bits.queued = queued;
        self.out.bits = self.bits;

        let labels: Vec<Option<Vec<f64>>> = self
            .contenders
            .iter()
            .map(|c| c.agent.as_ref().map(CmabAgent::utility_estimate))
            .collect();
        for row in &mut self.out.traces {
            let k = self.nodes[row.device].contender.expect("traced device contends");
            row.utility = labels[k].clone().unwrap_or_default();
        }
        self.out.devices = self
            .contenders
            .iter()
            .map(|c| DeviceSummary {
                device: c.node,
                technology: c.tech,
                adapting: c.adapting,
                policy: c.policy,
                effective_throughput_mbps: c.acked_total as f64 / duration_s / 1e6,
                bits_acked: c.acked_total,
                bits_failed: c.failed_total,
                tx_attempts: c.attempts_total,
                airtime_s: c.airtime_total as f64 * SLOT_S,
            })
            .collect();
        self.out
    }
}
