//! Latency-optimal joint control of target error rate and transmission rate
//! for retransmission-limited massive-MIMO uplinks.
//!
//! - [`channel`]: estimated-channel sampling and the effective-gain distribution.
//! - [`phy`]: power maps between rate, target error rate and transmit power.
//! - [`queue`]: buffer dynamics, simulation and exact chain evaluation.
//! - [`mdp`]: the constrained MDP solved by value iteration and multiplier bisection.
//! - [`lyrrc`]: the closed-form large-array policy and its latency and power formulas.
//! - [`multiuser`]: zero-forcing gains and per-user decoupling.

pub mod channel;
pub mod config;
pub mod error;
pub mod lyrrc;
pub mod mdp;
pub mod multiuser;
pub mod phy;
pub mod queue;
pub mod rng;

pub use channel::GainDistribution;
pub use config::{ChannelModel, LinkMode, RateUnit, SystemConfig};
pub use error::{Error, Result};
pub use queue::{Policy, PowerMap, SimReport};
