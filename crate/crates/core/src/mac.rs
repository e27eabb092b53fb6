//! Slot-granular listen-before-talk contention.
//!
//! Both Wi-Fi EDCA and NR-U category-4 LBT are modelled by the same state
//! machine: an initial deferment of `aifs_slots` idle slots, then a random
//! backoff counter that only decrements in idle slots and freezes (followed
//! by a fresh deferment) whenever the channel is sensed busy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// MAC slot duration in seconds.
pub const SLOT_S: f64 = 9e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LbtConfig {
    pub cw_min: u32,
    pub cw_max: u32,
    pub aifs_slots: u32,
    pub max_stage: u32,
    /// Standard sensing threshold for the technology, in dBm.
    pub threshold_dbm: f64,
}

impl LbtConfig {
    /// Wi-Fi EDCA best-effort access category.
    pub fn wifi_best_effort() -> Self {
        Self {
            cw_min: 16,
            cw_max: 1024,
            aifs_slots: 3,
            max_stage: 6,
            threshold_dbm: -62.0,
        }
    }

    /// NR-U LBT priority class 2.
    pub fn nru_priority_class_2() -> Self {
        Self {
            cw_min: 16,
            cw_max: 64,
            aifs_slots: 3,
            max_stage: 6,
            threshold_dbm: -72.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cw_min == 0 || self.cw_min > self.cw_max {
            return Err(Error::config(format!(
                "contention window needs 0 < cw_min <= cw_max, got {}..{}",
                self.cw_min, self.cw_max
            )));
        }
        if !self.cw_min.is_power_of_two() || !self.cw_max.is_power_of_two() {
            return Err(Error::config("contention window bounds must be powers of two"));
        }
        if self.aifs_slots == 0 {
            return Err(Error::config("aifs_slots must be at least 1"));
        }
        if !self.threshold_dbm.is_finite() {
            return Err(Error::config("threshold_dbm must be finite"));
        }
        Ok(())
    }

    /// Size of the contention window at retransmission stage `stage`.
    pub fn window(&self, stage: u32) -> u32 {
        let scaled = 1u64
            .checked_shl(stage)
            .map(|f| f.saturating_mul(self.cw_min as u64))
            .unwrap_or(u64::MAX);
        scaled.min(self.cw_max as u64) as u32
    }
}

/// Backoff draw: uniform over `{0, ..., min(2^stage * cw_min, cw_max) - 1}`.
pub fn draw_backoff<R: Rng + ?Sized>(stage: u32, cfg: &LbtConfig, rng: &mut R) -> u32 {
    rng.random_range(0..cfg.window(stage))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cca {
    Idle,
    Busy,
}

/// Clear-channel assessment: idle iff the sensed power does not exceed the
/// threshold.
pub fn cca_decision(sensed_dbm: f64, threshold_dbm: f64) -> Cca {
    if sensed_dbm <= threshold_dbm {
        Cca::Idle
    } else {
        Cca::Busy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Idle,
    Deferring,
    BackingOff,
    Transmitting,
}

/// What the MAC did in a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MacAction {
    /// Nothing to send and no backoff pending.
    Idle,
    /// Counting down (or restarting) the initial deferment.
    Defer,
    Decrement,
    /// Busy slot during backoff; the counter is kept and deferment restarts.
    Freeze,
    StartTx,
    ContinueTx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxOutcome {
    Ack,
    Nack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackoffState {
    pub counter: u32,
    pub stage: u32,
    pub defer_remaining: u32,
    pub phase: Phase,
    /// Set on a fresh access attempt: the counter is only drawn if the
    /// channel turns out busy during the initial deferment.
    pub draw_pending: bool,
}

impl BackoffState {
    pub fn new() -> Self {
        Self {
            counter: 0,
            stage: 0,
            defer_remaining: 0,
            phase: Phase::Idle,
            draw_pending: false,
        }
    }

    /// True when further busy slots cannot change the state.
    pub fn is_parked(&self, cfg: &LbtConfig) -> bool {
        self.phase == Phase::Deferring && self.defer_remaining == cfg.aifs_slots && !self.draw_pending
    }
}

impl Default for BackoffState {
    fn default() -> Self {
        Self::new()
    }
}

/// Advances the contention state by one slot given that slot's CCA result.
pub fn step_slot<R: Rng + ?Sized>(
    state: &mut BackoffState,
    cca: Cca,
    has_traffic: bool,
    cfg: &LbtConfig,
    rng: &mut R,
) -> MacAction {
    match state.phase {
        Phase::Transmitting => MacAction::ContinueTx,
        Phase::Idle => {
            if !has_traffic {
                return MacAction::Idle;
            }
            state.phase = Phase::Deferring;
            state.defer_remaining = cfg.aifs_slots;
            state.counter = 0;
            state.draw_pending = true;
            step_defer(state, cca, cfg, rng)
        }
        Phase::Deferring => step_defer(state, cca, cfg, rng),
        Phase::BackingOff => match cca {
            Cca::Busy => {
                state.phase = Phase::Deferring;
                state.defer_remaining = cfg.aifs_slots;
                MacAction::Freeze
            }
            Cca::Idle if state.counter > 0 => {
                state.counter -= 1;
                MacAction::Decrement
            }
            Cca::Idle if has_traffic => {
                state.phase = Phase::Transmitting;
                MacAction::StartTx
            }
            Cca::Idle => {
                state.phase = Phase::Idle;
                MacAction::Idle
            }
        },
    }
}

fn step_defer<R: Rng + ?Sized>(
    state: &mut BackoffState,
    cca: Cca,
    cfg: &LbtConfig,
    rng: &mut R,
) -> MacAction {
    match cca {
        Cca::Busy => {
            state.defer_remaining = cfg.aifs_slots;
            if state.draw_pending {
                state.counter = draw_backoff(state.stage, cfg, rng);
                state.draw_pending = false;
            }
        }
        Cca::Idle => {
            state.defer_remaining -= 1;
            if state.defer_remaining == 0 {
                state.phase = Phase::BackingOff;
                state.draw_pending = false;
            }
        }
    }
    MacAction::Defer
}

/// Applies the end-of-transmission rule: reset the stage on ACK, increment it
/// (capped at `max_stage`) on NACK, then draw a new counter and defer.
pub fn on_tx_result<R: Rng + ?Sized>(
    state: &mut BackoffState,
    outcome: TxOutcome,
    cfg: &LbtConfig,
    rng: &mut R,
) {
    state.stage = match outcome {
        TxOutcome::Ack => 0,
        TxOutcome::Nack => (state.stage + 1).min(cfg.max_stage),
    };
    state.counter = draw_backoff(state.stage, cfg, rng);
    state.phase = Phase::Deferring;
    state.defer_remaining = cfg.aifs_slots;
    state.draw_pending = false;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    fn support(stage: u32, cfg: &LbtConfig) -> (u32, u32) {
        let mut r = rng();
        let draws: Vec<u32> = (0..20_000).map(|_| draw_backoff(stage, cfg, &mut r)).collect();
        (*draws.iter().min().unwrap(), *draws.iter().max().unwrap())
    }

    #[test]
    fn backoff_support() {
        let wifi = LbtConfig::wifi_best_effort();
        assert_eq!(support(0, &wifi), (0, 15));
        let cfg = LbtConfig {
            cw_max: 64,
            ..wifi
        };
        assert_eq!(cfg.window(3), 64);
        assert_eq!(support(3, &cfg), (0, 63));
        assert_eq!(cfg.window(200), 64);
        assert_eq!(support(u32::MAX, &cfg), (0, 63));
    }

    #[test]
    fn cca_boundary() {
        assert_eq!(cca_decision(-72.0, -72.0), Cca::Idle);
        assert_eq!(cca_decision(-71.9, -72.0), Cca::Busy);
        assert_eq!(cca_decision(-95.0, -82.0), Cca::Idle);
    }

    #[test]
    fn config_validation() {
        assert!(LbtConfig::wifi_best_effort().validate().is_ok());
        assert!(LbtConfig::nru_priority_class_2().validate().is_ok());
        let bad = LbtConfig {
            cw_min: 12,
            ..LbtConfig::wifi_best_effort()
        };
        assert!(bad.validate().is_err());
        let bad = LbtConfig {
            cw_min: 64,
            cw_max: 32,
            ..LbtConfig::wifi_best_effort()
        };
        assert!(bad.validate().is_err());
        let bad = LbtConfig {
            aifs_slots: 0,
            ..LbtConfig::wifi_best_effort()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_counter_idle_starts_tx() {
        let cfg = LbtConfig::wifi_best_effort();
        let mut s = BackoffState {
            phase: Phase::BackingOff,
            ..BackoffState::new()
        };
        assert_eq!(step_slot(&mut s, Cca::Idle, true, &cfg, &mut rng()), MacAction::StartTx);
        assert_eq!(s.phase, Phase::Transmitting);
        assert_eq!(step_slot(&mut s, Cca::Busy, true, &cfg, &mut rng()), MacAction::ContinueTx);
    }

    #[test]
    fn busy_freezes_counter() {
        let cfg = LbtConfig::wifi_best_effort();
        let mut s = BackoffState {
            phase: Phase::BackingOff,
            counter: 5,
            ..BackoffState::new()
        };
        assert_eq!(step_slot(&mut s, Cca::Busy, true, &cfg, &mut rng()), MacAction::Freeze);
        assert_eq!(s.counter, 5);
        assert_eq!(s.phase, Phase::Deferring);
        assert!(s.is_parked(&cfg));
    }

    #[test]
    fn post_backoff_without_traffic_goes_idle() {
        let cfg = LbtConfig::wifi_best_effort();
        let mut s = BackoffState {
            phase: Phase::BackingOff,
            counter: 1,
            ..BackoffState::new()
        };
        assert_eq!(step_slot(&mut s, Cca::Idle, false, &cfg, &mut rng()), MacAction::Decrement);
        assert_eq!(step_slot(&mut s, Cca::Idle, false, &cfg, &mut rng()), MacAction::Idle);
        assert_eq!(s.phase, Phase::Idle);
    }

    /// Hand-traced 10-slot script, aifs = 3, counter already drawn as 2.
    ///
    /// | slot | cca  | action    | phase after | defer | k |
    /// |------|------|-----------|-------------|-------|---|
    /// | 0    | idle | defer     | deferring   | 2     | 2 |
    /// | 1    | busy | defer     | deferring   | 3     | 2 |
    /// | 2    | idle | defer     | deferring   | 2     | 2 |
    /// | 3    | idle | defer     | deferring   | 1     | 2 |
    /// | 4    | idle | defer     | backing off | 0     | 2 |
    /// | 5    | idle | decrement | backing off | 0     | 1 |
    /// | 6    | busy | freeze    | deferring   | 3     | 1 |
    /// | 7    | idle | defer     | deferring   | 2     | 1 |
    /// | 8    | idle | defer     | deferring   | 1     | 1 |
    /// | 9    | idle | defer     | backing off | 0     | 1 |
    #[test]
    fn scripted_deferment_trace() {
        let cfg = LbtConfig {
            aifs_slots: 3,
            ..LbtConfig::nru_priority_class_2()
        };
        let mut s = BackoffState {
            counter: 2,
            phase: Phase::Deferring,
            defer_remaining: 3,
            ..BackoffState::new()
        };
        use Cca::*;
        use MacAction as A;
        let script = [
            (Idle, A::Defer, Phase::Deferring, 2, 2),
            (Busy, A::Defer, Phase::Deferring, 3, 2),
            (Idle, A::Defer, Phase::Deferring, 2, 2),
            (Idle, A::Defer, Phase::Deferring, 1, 2),
            (Idle, A::Defer, Phase::BackingOff, 0, 2),
            (Idle, A::Decrement, Phase::BackingOff, 0, 1),
            (Busy, A::Freeze, Phase::Deferring, 3, 1),
            (Idle, A::Defer, Phase::Deferring, 2, 1),
            (Idle, A::Defer, Phase::Deferring, 1, 1),
            (Idle, A::Defer, Phase::BackingOff, 0, 1),
        ];
        let mut r = rng();
        for (slot, (cca, action, phase, defer, k)) in script.into_iter().enumerate() {
            assert_eq!(step_slot(&mut s, cca, true, &cfg, &mut r), action, "slot {slot}");
            assert_eq!(s.phase, phase, "slot {slot}");
            assert_eq!(s.defer_remaining, defer, "slot {slot}");
            assert_eq!(s.counter, k, "slot {slot}");
        }
    }

    #[test]
    fn fresh_access_transmits_after_idle_deferment() {
        let cfg = LbtConfig::wifi_best_effort();
        let mut s = BackoffState::new();
        let mut r = rng();
        for _ in 0..3 {
            assert_eq!(step_slot(&mut s, Cca::Idle, true, &cfg, &mut r), MacAction::Defer);
        }
        assert_eq!(step_slot(&mut s, Cca::Idle, true, &cfg, &mut r), MacAction::StartTx);
    }

    #[test]
    fn fresh_access_draws_when_busy() {
        let cfg = LbtConfig::wifi_best_effort();
        let mut s = BackoffState::new();
        step_slot(&mut s, Cca::Busy, true, &cfg, &mut rng());
        assert!(!s.draw_pending);
        assert!(s.counter < 16);
        assert!(s.is_parked(&cfg));
    }

    #[test]
    fn tx_results_update_stage() {
        let cfg = LbtConfig::nru_priority_class_2();
        let mut r = rng();
        let mut s = BackoffState {
            stage: 4,
            phase: Phase::Transmitting,
            ..BackoffState::new()
        };
        on_tx_result(&mut s, TxOutcome::Ack, &cfg, &mut r);
        assert_eq!(s.stage, 0);
        assert_eq!(s.phase, Phase::Deferring);
        assert!(s.counter < 16);

        s.stage = cfg.max_stage;
        on_tx_result(&mut s, TxOutcome::Nack, &cfg, &mut r);
        assert_eq!(s.stage, cfg.max_stage);

        let mut max_seen = 0;
        for _ in 0..5000 {
            let mut s = BackoffState::new();
            on_tx_result(&mut s, TxOutcome::Nack, &cfg, &mut r);
            assert_eq!(s.stage, 1);
            max_seen = max_seen.max(s.counter);
        }
        assert_eq!(max_seen, 31);
    }
}
