//! Power maps between (rate, target error rate) and per-frame transmit power
//! under the outage approximation of the block error rate.

use serde::{Deserialize, Serialize};

use crate::channel::GainDistribution;
use crate::config::{LinkMode, SystemConfig};
use crate::error::{Error, Result};
use crate::queue::PowerMap;

/// Samples within this relative distance of the outage threshold count as
/// decoded. Absorbs the rounding of `threshold(required_power(q)) == q`.
const THRESHOLD_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub rate_packets: u32,
    pub target_eps: f64,
    pub power: f64,
    pub mode: LinkMode,
}

impl LinkBudget {
    pub fn evaluate(rate: u32, eps: f64, cfg: &SystemConfig, dist: &GainDistribution) -> Result<Self> {
        Ok(LinkBudget {
            rate_packets: rate,
            target_eps: eps,
            power: required_power(rate, eps, cfg, dist)?,
            mode: cfg.mode,
        })
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("target error rate must lie in (0, 1), got {eps}")))
    }
}

/// Conjugate-beamforming power map,
/// `[M gamma q / g(r) - gamma / (1 + tau p_tau gamma)]^-1` with `q` the
/// `eps`-quantile of the effective gain and `g(r)` the rate growth.
/// Returns [`Error::Infeasible`] when the bracket is not positive.
pub fn required_power_su(r: u32, eps: f64, cfg: &SystemConfig, dist: &GainDistribution) -> Result<f64> {
    check_eps(eps)?;
    let q = dist.inverse_cdf(eps)?;
    let gamma = cfg.large_scale_gain;
    let bracket = cfg.antennas as f64 * gamma * q / cfg.rate_growth(r as f64) - gamma * cfg.error_variance();
    if bracket > 0.0 && bracket.is_finite() {
        Ok(1.0 / bracket)
    } else {
        Err(Error::Infeasible { rate: r, eps })
    }
}

/// Zero-forcing power map, `(1 + K/tau + p_I) g(r) / (q M gamma)`.
pub fn required_power_mu(r: u32, eps: f64, cfg: &SystemConfig, dist: &GainDistribution) -> Result<f64> {
    check_eps(eps)?;
    let q = dist.inverse_cdf(eps)?;
    let p = cfg.interference_penalty() * cfg.rate_growth(r as f64)
        / (q * cfg.antennas as f64 * cfg.large_scale_gain);
    if p.is_finite() {
        Ok(p)
    } else {
        Err(Error::Infeasible { rate: r, eps })
    }
}

pub fn required_power(r: u32, eps: f64, cfg: &SystemConfig, dist: &GainDistribution) -> Result<f64> {
    match cfg.mode {
        LinkMode::SingleUser => required_power_su(r, eps, cfg, dist),
        LinkMode::Multiuser => required_power_mu(r, eps, cfg, dist),
    }
}

/// Effective-gain level below which a block sent at rate `r` with power `p`
/// fails to decode.
pub fn outage_threshold(r: u32, p: f64, cfg: &SystemConfig) -> f64 {
    let m = cfg.antennas as f64;
    let gamma = cfg.large_scale_gain;
    let growth = cfg.rate_growth(r as f64);
    match cfg.mode {
        LinkMode::SingleUser => growth / m * (cfg.error_variance() + 1.0 / (gamma * p)),
        LinkMode::Multiuser => cfg.interference_penalty() * growth / (m * p * gamma),
    }
}

/// Fraction of gain samples strictly below the outage threshold.
///
/// A sample sitting exactly on the threshold decodes, which is what makes
/// `block_error_rate(r, required_power(r, eps))` land in `[eps - 1/n, eps]`.
pub fn block_error_rate(r: u32, p: f64, cfg: &SystemConfig, dist: &GainDistribution) -> Result<f64> {
    if !(p > 0.0) {
        return Err(Error::Domain(format!("power must be positive, got {p}")));
    }
    let thr = outage_threshold(r, p, cfg);
    Ok(dist.prob_below(thr * (1.0 - THRESHOLD_REL_TOL)))
}

/// A configuration bound to its gain distribution. Rate zero costs nothing.
#[derive(Debug, Clone, Copy)]
pub struct LinkModel<'a> {
    pub cfg: &'a SystemConfig,
    pub dist: &'a GainDistribution,
}

impl<'a> LinkModel<'a> {
    pub fn new(cfg: &'a SystemConfig, dist: &'a GainDistribution) -> Self {
        LinkModel { cfg, dist }
    }
}

impl PowerMap for LinkModel<'_> {
    fn frame_power(&self, rate: u32, eps: f64) -> Option<f64> {
        if rate == 0 {
            return Some(0.0);
        }
        required_power(rate, eps, self.cfg, self.dist).ok()
    }
}
