//! Wi-Fi / NR-U coexistence simulator with bandit-driven sensing-threshold
//! adaptation.
//!
//! The learning core lives in [`fingerprint`], [`clustering`] and [`bandit`];
//! the channel-access and radio models in [`mac`] and [`phy`]; [`sim`] binds
//! them into the slot-level experiment engine.

// `!(x > 0.0)` style checks are written that way to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bandit;
pub mod cli;
pub mod clustering;
pub mod error;
pub mod fingerprint;
pub mod mac;
pub mod phy;
pub mod report;
pub mod sim;
pub mod synthetic;
pub mod traces;

pub use error::{Error, Result};
