//! Scalar system parameters shared by every module.
//!
//! All powers are linear and normalized to the receiver noise power.
//! Conversions from dBm happen at the CLI boundary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which power map and outage threshold apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkMode {
    /// Conjugate beamforming, estimation error subtracted inside the power map.
    SingleUser,
    /// Zero-forcing with the worst-case interference penalty `1 + K/tau + p_I`.
    Multiuser,
}

/// Logarithm base of the rate model. `ln` for nats, `log2` for bits.
///
/// The same base is used for the rate growth term `base^(rL/N)` and for the
/// link "capacity" `N log M` in the utilization factor, so the two stay
/// consistent whichever is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateUnit {
    Bits,
    Nats,
}

impl RateUnit {
    pub fn log(self, x: f64) -> f64 {
        match self {
            RateUnit::Bits => x.log2(),
            RateUnit::Nats => x.ln(),
        }
    }

    pub fn exp(self, x: f64) -> f64 {
        match self {
            RateUnit::Bits => x.exp2(),
            RateUnit::Nats => x.exp(),
        }
    }
}

/// Small-scale fading model used when synthesizing channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ChannelModel {
    /// i.i.d. Rayleigh fading with MMSE estimation.
    Rayleigh,
    /// Every per-antenna gain equals `kappa`. Test fixture.
    PointMass { kappa: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Base-station antennas `M`.
    pub antennas: usize,
    /// Subcarriers `N` spanned by one code block.
    pub subcarriers: usize,
    /// Users `K` sharing the array. Only the multiuser map reads it.
    pub users: usize,
    /// Uplink pilots `tau` per frame.
    pub pilots: u32,
    /// Pilot power `p_tau` (linear).
    pub pilot_power: f64,
    /// Large-scale gain `gamma` in (0, 1].
    pub large_scale_gain: f64,
    /// Long-term average power budget `P` (linear).
    pub power_budget: f64,
    /// Packets arriving per frame `lambda`.
    pub arrival_rate: u32,
    /// Information bits per packet `L`.
    pub packet_bits: f64,
    /// Buffer size `B` in packets.
    pub buffer_size: u32,
    /// Latency charged to each dropped packet, seconds.
    pub drop_penalty_s: f64,
    /// Frame duration, seconds.
    pub frame_duration_s: f64,
    /// Largest allowed target error rate.
    pub eps_max: f64,
    /// Inter-cell interference power `p_I` (linear).
    pub interference_power: f64,
    pub mode: LinkMode,
    pub rate_unit: RateUnit,
    pub channel: ChannelModel,
}

/// `(1 - 0.999999)^(1/4)`: four transmission rounds reaching 99.9999 % delivery.
pub const URLLC_EPS_MAX: f64 = 0.0316;

pub fn dbm_to_linear(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn linear_to_dbm(linear: f64) -> f64 {
    10.0 * linear.log10()
}

impl Default for SystemConfig {
    /// Evaluation defaults: 20 dBm pilots and budget, -10 dB large-scale
    /// gain, 5 packets of 52 bits per 0.25 ms frame, B = 10, 0.5 s drop
    /// penalty, interference at the noise floor.
    fn default() -> Self {
        SystemConfig {
            antennas: 64,
            subcarriers: 52,
            users: 4,
            pilots: 4,
            pilot_power: dbm_to_linear(20.0),
            large_scale_gain: dbm_to_linear(-10.0),
            power_budget: dbm_to_linear(20.0),
            arrival_rate: 5,
            packet_bits: 52.0,
            buffer_size: 10,
            drop_penalty_s: 0.5,
            frame_duration_s: 0.25e-3,
            eps_max: URLLC_EPS_MAX,
            interference_power: 1.0,
            mode: LinkMode::Multiuser,
            rate_unit: RateUnit::Bits,
            channel: ChannelModel::Rayleigh,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |field: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be positive and finite, got {v}")))
            }
        };
        if self.antennas == 0 {
            return Err(Error::config("antennas", "must be at least 1"));
        }
        if self.subcarriers == 0 {
            return Err(Error::config("subcarriers", "must be at least 1"));
        }
        if self.users == 0 {
            return Err(Error::config("users", "must be at least 1"));
        }
        if self.pilots == 0 {
            return Err(Error::config("pilots", "must be at least 1"));
        }
        positive("pilot_power", self.pilot_power)?;
        positive("large_scale_gain", self.large_scale_gain)?;
        if self.large_scale_gain > 1.0 {
            return Err(Error::config(
                "large_scale_gain",
                format!("must lie in (0, 1], got {}", self.large_scale_gain),
            ));
        }
        positive("power_budget", self.power_budget)?;
        if self.arrival_rate == 0 {
            return Err(Error::config("arrival_rate", "must be at least 1"));
        }
        positive("packet_bits", self.packet_bits)?;
        if self.buffer_size < self.arrival_rate {
            return Err(Error::config(
                "buffer_size",
                format!(
                    "must hold one frame of arrivals ({} < {})",
                    self.buffer_size, self.arrival_rate
                ),
            ));
        }
        if !(self.drop_penalty_s.is_finite() && self.drop_penalty_s >= 0.0) {
            return Err(Error::config("drop_penalty_s", "must be finite and nonnegative"));
        }
        positive("frame_duration_s", self.frame_duration_s)?;
        if !(self.eps_max > 0.0 && self.eps_max <= 1.0) {
            return Err(Error::config("eps_max", "must lie in (0, 1]"));
        }
        if !(self.interference_power.is_finite() && self.interference_power >= 0.0) {
            return Err(Error::config("interference_power", "must be finite and nonnegative"));
        }
        if self.mode == LinkMode::Multiuser && self.antennas <= self.users {
            return Err(Error::config(
                "antennas",
                format!(
                    "zero-forcing needs more antennas than users ({} <= {})",
                    self.antennas, self.users
                ),
            ));
        }
        if let ChannelModel::PointMass { kappa } = self.channel {
            positive("channel.kappa", kappa)?;
        }
        Ok(())
    }

    /// `tau * p_tau * gamma`, the pilot SNR accumulated over the training phase.
    pub fn training_snr(&self) -> f64 {
        self.pilots as f64 * self.pilot_power * self.large_scale_gain
    }

    /// Per-entry variance of the MMSE channel estimate.
    pub fn estimate_variance(&self) -> f64 {
        let s = self.training_snr();
        s / (1.0 + s)
    }

    /// Per-entry variance of the MMSE estimation error.
    pub fn error_variance(&self) -> f64 {
        1.0 / (1.0 + self.training_snr())
    }

    /// Worst-case multiuser SINR penalty `1 + K/tau + p_I`.
    pub fn interference_penalty(&self) -> f64 {
        1.0 + self.users as f64 / self.pilots as f64 + self.interference_power
    }

    /// `base^(r L / N)`: the SINR growth needed to carry `r` packets.
    pub fn rate_growth(&self, rate: f64) -> f64 {
        self.rate_unit
            .exp(rate * self.packet_bits / self.subcarriers as f64)
    }

    pub fn drop_penalty_frames(&self) -> f64 {
        self.drop_penalty_s / self.frame_duration_s
    }

    pub fn frames_to_seconds(&self, frames: f64) -> f64 {
        frames * self.frame_duration_s
    }

    /// Packet size that puts the utilization factor at `rho` for the current
    /// `M`, `N` and `lambda`. Used by fixed-load antenna sweeps.
    pub fn packet_bits_for_utilization(&self, rho: f64) -> f64 {
        rho * self.subcarriers as f64 * self.rate_unit.log(self.antennas as f64)
            / self.arrival_rate as f64
    }
}
