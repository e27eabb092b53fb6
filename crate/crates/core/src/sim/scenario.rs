use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bandit::ActionSet;
use crate::error::{Error, Result};
use crate::fingerprint::BinEdges;
use crate::mac::{LbtConfig, SLOT_S};
use crate::phy::PhyConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Technology {
    Nru,
    Wifi,
}

impl Technology {
    pub fn as_str(self) -> &'static str {
        match self {
            Technology::Nru => "nru",
            Technology::Wifi => "wifi",
        }
    }
}

/// How an adapting device picks its sensing threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    /// Clustering-based bandit with a trained cluster model.
    Cmab,
    /// Fixed technology default threshold.
    Standard,
    /// Uniform redraw from the random range every epoch.
    Random,
    /// Linear UCB with a single zero-prior cluster.
    PlainUcb,
}

impl Policy {
    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Cmab => "cmab",
            Policy::Standard => "standard",
            Policy::Random => "random",
            Policy::PlainUcb => "plain-ucb",
        }
    }

    pub fn learns(self) -> bool {
        matches!(self, Policy::Cmab | Policy::PlainUcb)
    }
}

impl std::str::FromStr for Policy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cmab" => Ok(Policy::Cmab),
            "standard" => Ok(Policy::Standard),
            "random" => Ok(Policy::Random),
            "plain-ucb" => Ok(Policy::PlainUcb),
            other => Err(Error::config(format!(
                "unknown policy '{other}' (expected cmab, standard, random or plain-ucb)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Users contend and send to their serving BS/AP.
    Uplink,
    /// BSs/APs contend and send to their users.
    Downlink,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Room {
    pub width_m: f64,
    pub depth_m: f64,
}

impl Room {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        (0.0..=self.width_m).contains(&p[0]) && (0.0..=self.depth_m).contains(&p[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub technology: Technology,
    pub position: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficConfig {
    pub file_size_bytes: u64,
    pub segment_bytes: u64,
    /// Poisson file arrivals per user per second.
    pub arrival_rate_per_user: f64,
    /// Keep every queue backlogged: a new file arrives whenever a queue runs
    /// dry. Poisson arrivals are disabled when set.
    pub full_buffer: bool,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            file_size_bytes: 500_000,
            segment_bytes: 8_000,
            arrival_rate_per_user: 1.0,
            full_buffer: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MobilityConfig {
    pub max_speed_mps: f64,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        Self { max_speed_mps: 1.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingConfig {
    pub epoch_s: f64,
    pub monitor_s: f64,
    pub monitor_offset_s: f64,
    pub sensing_s: f64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            epoch_s: 0.1,
            monitor_s: 0.05,
            monitor_offset_s: 0.0,
            sensing_s: SLOT_S,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MacConfig {
    pub wifi: LbtConfig,
    pub nru: LbtConfig,
    pub max_occupancy_s: f64,
    pub ack_gap_s: f64,
    pub ack_s: f64,
    /// Failed attempts after which a segment is dropped.
    pub retry_limit: u32,
}

impl Default for MacConfig {
    fn default() -> Self {
        Self {
            wifi: LbtConfig::wifi_best_effort(),
            nru: LbtConfig::nru_priority_class_2(),
            max_occupancy_s: 4e-3,
            ack_gap_s: 16e-6,
            ack_s: 32e-6,
            retry_limit: 7,
        }
    }
}

impl MacConfig {
    pub fn lbt(&self, tech: Technology) -> &LbtConfig {
        match tech {
            Technology::Nru => &self.nru,
            Technology::Wifi => &self.wifi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BanditConfig {
    pub alpha: f64,
    pub actions: ActionSet,
    /// Trained cluster model, resolved relative to the scenario file.
    pub cluster_model: Option<PathBuf>,
    /// Inclusive integer dBm range for the random policy.
    pub random_range_dbm: [i32; 2],
}

impl Default for BanditConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            actions: ActionSet::default(),
            cluster_model: None,
            random_range_dbm: [-82, -62],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct FingerprintConfig {
    pub edges: BinEdges,
}

/// Full description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub room: Room,
    pub cells: Vec<CellSpec>,
    pub users_per_cell: usize,
    /// The first this-many users of each cell adapt; the rest stay standard.
    pub adapting_per_cell: usize,
    /// Fixed user positions grouped by home cell; empty means random drop.
    pub user_positions: Vec<[f64; 2]>,
    pub policy: Policy,
    pub direction: Direction,
    pub traffic: TrafficConfig,
    pub mobility: MobilityConfig,
    pub timing: TimingConfig,
    pub duration_epochs: u64,
    /// Minimum received power from the home cell when dropping users.
    pub min_home_rx_dbm: f64,
    pub phy: PhyConfig,
    pub mac: MacConfig,
    pub bandit: BanditConfig,
    pub fingerprint: FingerprintConfig,
}

impl Default for Scenario {
    /// Three NR-U and three Wi-Fi cells interleaved along the long axis of a
    /// 40 m x 20 m room, five users per cell, three of them adapting.
    fn default() -> Self {
        let room = Room {
            width_m: 40.0,
            depth_m: 20.0,
        };
        let cells = (0..6)
            .map(|i| CellSpec {
                technology: if i % 2 == 0 {
                    Technology::Nru
                } else {
                    Technology::Wifi
                },
                position: [room.width_m / 12.0 * (2 * i + 1) as f64, room.depth_m / 2.0],
            })
            .collect();
        Self {
            name: "indoor-3x3".into(),
            seed: 1,
            room,
            cells,
            users_per_cell: 5,
            adapting_per_cell: 3,
            user_positions: Vec::new(),
            policy: Policy::Cmab,
            direction: Direction::Uplink,
            traffic: TrafficConfig::default(),
            mobility: MobilityConfig::default(),
            timing: TimingConfig::default(),
            duration_epochs: 600,
            min_home_rx_dbm: -82.0,
            phy: PhyConfig::default(),
            mac: MacConfig::default(),
            bandit: BanditConfig::default(),
            fingerprint: FingerprintConfig::default(),
        }
    }
}

/// Slot-quantized timing derived from a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotTiming {
    pub epoch: u64,
    pub monitor_start: u64,
    pub monitor_len: u64,
    pub total: u64,
}

impl Scenario {
    /// One NR-U and one Wi-Fi cell, three users each (two adapting), one
    /// minute of simulated time.
    pub fn desk() -> Self {
        let room = Room {
            width_m: 40.0,
            depth_m: 20.0,
        };
        Self {
            name: "desk-1x1".into(),
            room,
            cells: vec![
                CellSpec {
                    technology: Technology::Nru,
                    position: [10.0, 10.0],
                },
                CellSpec {
                    technology: Technology::Wifi,
                    position: [30.0, 10.0],
                },
            ],
            users_per_cell: 3,
            adapting_per_cell: 2,
            // Offered load close to what the standard scheme can carry.
            traffic: TrafficConfig {
                arrival_rate_per_user: 4.0,
                ..TrafficConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let scn: Self = serde_json::from_str(s)
            .map_err(|e| Error::Scenario(format!("invalid scenario: {e}")))?;
        scn.validate()?;
        Ok(scn)
    }

    /// Loads and validates a scenario file. A relative cluster-model path is
    /// resolved against the scenario's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut scn = Self::from_json(&s)?;
        if let Some(m) = &scn.bandit.cluster_model {
            if m.is_relative() {
                if let Some(dir) = path.parent() {
                    scn.bandit.cluster_model = Some(dir.join(m));
                }
            }
        }
        Ok(scn)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scenario(m));
        if !(self.room.width_m > 0.0 && self.room.depth_m > 0.0) {
            return bad("room dimensions must be positive".into());
        }
        if self.cells.is_empty() {
            return bad("scenario needs at least one cell".into());
        }
        for (i, c) in self.cells.iter().enumerate() {
            if !self.room.contains(c.position) {
                return bad(format!("cells[{i}].position lies outside the room"));
            }
        }
        if self.adapting_per_cell > self.users_per_cell {
            return bad(format!(
                "adapting_per_cell ({}) exceeds users_per_cell ({})",
                self.adapting_per_cell, self.users_per_cell
            ));
        }
        if !self.user_positions.is_empty() {
            if self.user_positions.len() != self.cells.len() * self.users_per_cell {
                return bad(format!(
                    "user_positions has {} entries, expected cells x users_per_cell = {}",
                    self.user_positions.len(),
                    self.cells.len() * self.users_per_cell
                ));
            }
            if let Some(i) = self.user_positions.iter().position(|p| !self.room.contains(*p)) {
                return bad(format!("user_positions[{i}] lies outside the room"));
            }
        }
        let t = &self.traffic;
        if t.segment_bytes == 0 || t.file_size_bytes == 0 {
            return bad("traffic.file_size_bytes and traffic.segment_bytes must be positive".into());
        }
        if !(t.arrival_rate_per_user >= 0.0) {
            return bad("traffic.arrival_rate_per_user must be non-negative".into());
        }
        if !(self.mobility.max_speed_mps >= 0.0) {
            return bad("mobility.max_speed_mps must be non-negative".into());
        }
        let tm = &self.timing;
        if !(tm.sensing_s > 0.0 && tm.sensing_s <= tm.monitor_s && tm.monitor_s <= tm.epoch_s) {
            return bad("timing must satisfy 0 < sensing_s <= monitor_s <= epoch_s".into());
        }
        if (tm.sensing_s - SLOT_S).abs() > 1e-12 {
            return bad(format!("timing.sensing_s must equal the MAC slot ({SLOT_S} s)"));
        }
        if !(tm.monitor_offset_s >= 0.0) || tm.monitor_offset_s + tm.monitor_s > tm.epoch_s + 1e-12 {
            return bad("timing.monitor_offset_s + monitor_s must fit inside the epoch".into());
        }
        if self.duration_epochs == 0 {
            return bad("duration_epochs must be at least 1".into());
        }
        if !self.min_home_rx_dbm.is_finite() {
            return bad("min_home_rx_dbm must be finite".into());
        }
        self.phy.validate().map_err(|e| Error::Scenario(format!("phy: {e}")))?;
        self.mac.wifi.validate().map_err(|e| Error::Scenario(format!("mac.wifi: {e}")))?;
        self.mac.nru.validate().map_err(|e| Error::Scenario(format!("mac.nru: {e}")))?;
        if !(self.mac.max_occupancy_s > 0.0) || self.mac.retry_limit == 0 {
            return bad("mac.max_occupancy_s and mac.retry_limit must be positive".into());
        }
        if !(self.bandit.alpha > 0.0) {
            return bad("bandit.alpha must be positive".into());
        }
        let [lo, hi] = self.bandit.random_range_dbm;
        if lo > hi {
            return bad("bandit.random_range_dbm must be [low, high]".into());
        }
        Ok(())
    }

    pub fn slot_timing(&self) -> SlotTiming {
        let q = |s: f64| (s / SLOT_S).round() as u64;
        let epoch = q(self.timing.epoch_s).max(1);
        SlotTiming {
            epoch,
            monitor_start: q(self.timing.monitor_offset_s).min(epoch - 1),
            monitor_len: q(self.timing.monitor_s).max(1),
            total: epoch * self.duration_epochs,
        }
    }

    /// Copy of the scenario with a different policy for the adapting devices.
    pub fn with_policy(&self, policy: Policy) -> Self {
        Self {
            policy,
            ..self.clone()
        }
    }
}
