//! Propagation, power aggregation, SINR and rate mapping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distances below this are clamped before evaluating path loss.
pub const MIN_DISTANCE_M: f64 = 0.5;

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Thermal noise over `bandwidth_hz` plus a receiver noise figure.
pub fn thermal_noise_dbm(bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    -174.0 + 10.0 * bandwidth_hz.log10() + noise_figure_db
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathLossModel {
    /// Indoor-hotspot office, line of sight.
    InhLos,
    /// Indoor-hotspot office, non line of sight (never below the LOS value).
    InhNlos,
}

/// Indoor-office LOS path loss in dB: `32.4 + 17.3 log10(d) + 20 log10(fc)`.
pub fn path_loss(distance_m: f64, carrier_ghz: f64) -> f64 {
    let d = distance_m.max(MIN_DISTANCE_M);
    32.4 + 17.3 * d.log10() + 20.0 * carrier_ghz.log10()
}

/// Indoor-office NLOS path loss in dB: `max(LOS, 17.3 + 38.3 log10(d) + 24.9 log10(fc))`.
pub fn path_loss_nlos(distance_m: f64, carrier_ghz: f64) -> f64 {
    let d = distance_m.max(MIN_DISTANCE_M);
    let nlos = 17.3 + 38.3 * d.log10() + 24.9 * carrier_ghz.log10();
    nlos.max(path_loss(d, carrier_ghz))
}

impl PathLossModel {
    pub fn loss_db(self, distance_m: f64, carrier_ghz: f64) -> f64 {
        match self {
            PathLossModel::InhLos => path_loss(distance_m, carrier_ghz),
            PathLossModel::InhNlos => path_loss_nlos(distance_m, carrier_ghz),
        }
    }
}

/// Transmit powers per device class, in dBm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TxPowers {
    pub bs: f64,
    pub ue: f64,
    pub ap: f64,
    pub sta: f64,
}

impl Default for TxPowers {
    fn default() -> Self {
        Self {
            bs: 23.0,
            ue: 23.0,
            ap: 23.0,
            sta: 23.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhyConfig {
    pub bandwidth_hz: f64,
    pub carrier_ghz: f64,
    pub tx_power_dbm: TxPowers,
    pub noise_dbm: f64,
    pub shadowing_sigma_db: f64,
    pub path_loss_model: PathLossModel,
    /// Minimum SINR for any segment to decode.
    pub sinr_success_threshold_db: f64,
    /// Spectral-efficiency cap in b/s/Hz.
    pub max_spectral_efficiency: f64,
    /// Back-off applied to the link SNR when picking a rate.
    pub rate_margin_db: f64,
    pub preamble_s: f64,
}

impl Default for PhyConfig {
    fn default() -> Self {
        Self {
            bandwidth_hz: 20e6,
            carrier_ghz: 5.18,
            tx_power_dbm: TxPowers::default(),
            noise_dbm: thermal_noise_dbm(20e6, 7.0),
            shadowing_sigma_db: 3.0,
            path_loss_model: PathLossModel::InhNlos,
            sinr_success_threshold_db: -3.0,
            max_spectral_efficiency: 8.0,
            rate_margin_db: 3.0,
            preamble_s: 20e-6,
        }
    }
}

impl PhyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::config("bandwidth_hz must be positive"));
        }
        if !(self.carrier_ghz > 0.0) {
            return Err(Error::config("carrier_ghz must be positive"));
        }
        let p = self.tx_power_dbm;
        if [p.bs, p.ue, p.ap, p.sta].iter().any(|v| !(0.0..=30.0).contains(v)) {
            return Err(Error::config("transmit powers must lie within [0, 30] dBm"));
        }
        if !self.noise_dbm.is_finite() {
            return Err(Error::config("noise_dbm must be finite"));
        }
        if !(self.shadowing_sigma_db >= 0.0) {
            return Err(Error::config("shadowing_sigma_db must be non-negative"));
        }
        if !(self.max_spectral_efficiency > 0.0) {
            return Err(Error::config("max_spectral_efficiency must be positive"));
        }
        if !(self.rate_margin_db >= 0.0) || !(self.preamble_s >= 0.0) {
            return Err(Error::config("rate_margin_db and preamble_s must be non-negative"));
        }
        Ok(())
    }

    pub fn noise_mw(&self) -> f64 {
        dbm_to_mw(self.noise_dbm)
    }
}

/// Frozen large-scale state of one directed link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkState {
    pub path_loss_db: f64,
    pub shadowing_db: f64,
    /// Linear power gain.
    pub gain: f64,
}

impl LinkState {
    pub fn new(path_loss_db: f64, shadowing_db: f64) -> Self {
        Self {
            path_loss_db,
            shadowing_db,
            gain: dbm_to_mw(-(path_loss_db + shadowing_db)),
        }
    }

    pub fn rx_power_dbm(&self, tx_power_dbm: f64) -> f64 {
        tx_power_dbm - self.path_loss_db - self.shadowing_db
    }
}

/// Total sensed power in dBm: the linear sum of the received powers (in mW)
/// of all active transmitters plus noise.
pub fn sensed_power(active_rx_mw: impl IntoIterator<Item = f64>, noise_dbm: f64) -> f64 {
    let total: f64 = active_rx_mw.into_iter().sum::<f64>() + dbm_to_mw(noise_dbm);
    mw_to_dbm(total)
}

pub fn sinr_db(signal_mw: f64, interference_mw: f64, noise_mw: f64) -> f64 {
    mw_to_dbm(signal_mw / (interference_mw + noise_mw))
}

/// Instantaneous SINR (dB) and Shannon rate (b/s) capped at the configured
/// spectral efficiency.
pub fn sinr_and_rate(signal_mw: f64, interference_mw: f64, cfg: &PhyConfig) -> (f64, f64) {
    let sinr = sinr_db(signal_mw, interference_mw, cfg.noise_mw());
    (sinr, rate_for_sinr_db(sinr, cfg))
}

pub fn rate_for_sinr_db(sinr_db: f64, cfg: &PhyConfig) -> f64 {
    let se = (1.0 + dbm_to_mw(sinr_db)).log2();
    cfg.bandwidth_hz * se.min(cfg.max_spectral_efficiency)
}

/// SINR needed to sustain spectral efficiency `se`: the inverse Shannon map.
pub fn required_sinr_db(se: f64) -> f64 {
    mw_to_dbm(2f64.powf(se) - 1.0)
}

/// Rate picked for a transmission and the SINR each segment must hold to
/// decode at that rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkAdaptation {
    pub rate_bps: f64,
    pub required_sinr_db: f64,
}

/// Chooses the rate from the interference-free SNR minus the configured
/// margin. Segments must keep the SINR at or above both the decode floor and
/// the level the chosen rate requires.
pub fn link_adaptation(snr_db: f64, cfg: &PhyConfig) -> LinkAdaptation {
    let rate = rate_for_sinr_db(snr_db - cfg.rate_margin_db, cfg);
    let se = rate / cfg.bandwidth_hz;
    LinkAdaptation {
        rate_bps: rate,
        required_sinr_db: required_sinr_db(se).max(cfg.sinr_success_threshold_db),
    }
}
