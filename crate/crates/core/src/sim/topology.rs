//! User placement, cell attachment and random-walk mobility.

use rand::Rng;

use crate::error::{Error, Result};
use crate::phy::PhyConfig;
use crate::sim::scenario::{CellSpec, Room, Scenario, Technology};

/// Rejection-sampling budget per user.
pub const MAX_DROP_TRIES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DeviceClass {
    Bs,
    Ue,
    Ap,
    Sta,
}

impl DeviceClass {
    pub fn cell(tech: Technology) -> Self {
        match tech {
            Technology::Nru => DeviceClass::Bs,
            Technology::Wifi => DeviceClass::Ap,
        }
    }

    pub fn user(tech: Technology) -> Self {
        match tech {
            Technology::Nru => DeviceClass::Ue,
            Technology::Wifi => DeviceClass::Sta,
        }
    }

    pub fn tx_power_dbm(self, phy: &PhyConfig) -> f64 {
        let p = &phy.tx_power_dbm;
        match self {
            DeviceClass::Bs => p.bs,
            DeviceClass::Ue => p.ue,
            DeviceClass::Ap => p.ap,
            DeviceClass::Sta => p.sta,
        }
    }
}

pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Received power from a cell at `pos`, path loss only.
pub fn cell_rx_dbm(cell: &CellSpec, pos: [f64; 2], phy: &PhyConfig) -> f64 {
    DeviceClass::cell(cell.technology).tx_power_dbm(phy)
        - phy.path_loss_model.loss_db(distance(cell.position, pos), phy.carrier_ghz)
}

/// Places `users_per_cell` users per cell uniformly in the room, redrawing
/// each until its home cell is received at `min_home_rx_dbm` or better.
/// Users come out grouped by home cell, in cell order.
pub fn drop_users<R: Rng + ?Sized>(scn: &Scenario, rng: &mut R) -> Result<Vec<[f64; 2]>> {
    let mut out = Vec::with_capacity(scn.cells.len() * scn.users_per_cell);
    for (c, cell) in scn.cells.iter().enumerate() {
        for u in 0..scn.users_per_cell {
            let pos = (0..MAX_DROP_TRIES)
                .map(|_| uniform_point(&scn.room, rng))
                .find(|&p| cell_rx_dbm(cell, p, &scn.phy) >= scn.min_home_rx_dbm)
                .ok_or_else(|| {
                    Error::Scenario(format!(
                        "could not place user {u} of cell {c} with home power >= {} dBm after {MAX_DROP_TRIES} tries",
                        scn.min_home_rx_dbm
                    ))
                })?;
            out.push(pos);
        }
    }
    Ok(out)
}

fn uniform_point<R: Rng + ?Sized>(room: &Room, rng: &mut R) -> [f64; 2] {
    [
        rng.random_range(0.0..=room.width_m),
        rng.random_range(0.0..=room.depth_m),
    ]
}

/// Strongest cell of the user's own technology; ties go to the lowest id.
/// `rx_dbm[c]` is the power the user receives from cell `c`.
pub fn attach(tech: Technology, rx_dbm: &[f64], cells: &[CellSpec]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (c, cell) in cells.iter().enumerate() {
        if cell.technology != tech {
            continue;
        }
        if best.is_none_or(|(_, p)| rx_dbm[c] > p) {
            best = Some((c, rx_dbm[c]));
        }
    }
    best.map(|(c, _)| c)
}

/// Folds a coordinate back into `[0, len]` as if bouncing off both walls.
pub fn reflect(x: f64, len: f64) -> f64 {
    let period = 2.0 * len;
    let m = x.rem_euclid(period);
    if m > len {
        period - m
    } else {
        m
    }
}

/// One random-walk move: uniform heading, speed uniform on `[0, max_speed]`,
/// reflecting walls.
pub fn mobility_step<R: Rng + ?Sized>(
    pos: [f64; 2],
    dt_s: f64,
    max_speed_mps: f64,
    room: &Room,
    rng: &mut R,
) -> [f64; 2] {
    let heading = rng.random_range(0.0..std::f64::consts::TAU);
    let speed = if max_speed_mps > 0.0 {
        rng.random_range(0.0..=max_speed_mps)
    } else {
        0.0
    };
    let step = speed * dt_s;
    [
        reflect(pos[0] + step * heading.cos(), room.width_m),
        reflect(pos[1] + step * heading.sin(), room.depth_m),
    ]
}
