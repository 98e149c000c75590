//! The large-array reliability and rate control policy: operate at the
//! smallest target error rate that sustains the arrival rate within the power
//! budget, and send `min(q, 2 lambda)` packets per frame.

use serde::{Deserialize, Serialize};

use crate::channel::GainDistribution;
use crate::config::{LinkMode, SystemConfig};
use crate::error::{Error, Result};
use crate::phy::required_power;
use crate::queue::Policy;

/// `lambda L / (N log M)`: offered load over the large-array link capacity.
/// Logs a warning when it is not below 1.
pub fn utilization(cfg: &SystemConfig) -> Result<f64> {
    if cfg.antennas < 2 {
        return Err(Error::config("antennas", "utilization needs at least 2 antennas"));
    }
    let rho = cfg.arrival_rate as f64 * cfg.packet_bits
        / (cfg.subcarriers as f64 * cfg.rate_unit.log(cfg.antennas as f64));
    if rho >= 1.0 {
        log::warn!("utilization factor {rho} is not below 1; large-array results do not apply");
    }
    Ok(rho)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    /// Empirical CDF of the effective gain at `threshold`.
    pub eps_o: f64,
    /// Gain level at which rate `lambda` needs exactly the budget `P`.
    pub threshold: f64,
    /// The threshold lies below every sample, so the true value is below `1/n`.
    pub resolution_limited: bool,
    /// Target error rate the policy runs at: `eps_o`, or `1/n` when
    /// resolution-limited.
    pub eps_deployed: f64,
}

/// Gain threshold for sending `lambda` packets at power `P`:
/// `M^-(1 - rho) (1/(gamma P) + 1/(1 + tau p_tau gamma))` for conjugate
/// beamforming and `M^-(1 - rho) (1 + K/tau + p_I) / (gamma P)` for
/// zero-forcing.
pub fn operating_threshold(cfg: &SystemConfig) -> Result<f64> {
    let rho = utilization(cfg)?;
    if rho >= 1.0 {
        return Err(Error::UtilizationTooHigh { rho });
    }
    let scale = (cfg.antennas as f64).powf(-(1.0 - rho));
    let gp = cfg.large_scale_gain * cfg.power_budget;
    Ok(match cfg.mode {
        LinkMode::SingleUser => scale * (1.0 / gp + cfg.error_variance()),
        LinkMode::Multiuser => scale * cfg.interference_penalty() / gp,
    })
}

pub fn epsilon_o(cfg: &SystemConfig, dist: &GainDistribution) -> Result<OperatingPoint> {
    let threshold = operating_threshold(cfg)?;
    let eps_o = dist.cdf(threshold);
    let resolution_limited = eps_o == 0.0;
    Ok(OperatingPoint {
        eps_o,
        threshold,
        resolution_limited,
        eps_deployed: if resolution_limited { 1.0 / dist.len() as f64 } else { eps_o },
    })
}

/// Rule-of-double policy at the operating error rate. Fails with
/// [`Error::ReliabilityInfeasible`] when `eps_o > eps_max`.
pub fn lyrrc_policy(cfg: &SystemConfig, dist: &GainDistribution) -> Result<Policy> {
    let op = epsilon_o(cfg, dist)?;
    if op.eps_o > cfg.eps_max {
        return Err(Error::ReliabilityInfeasible {
            eps_o: op.eps_o,
            eps_max: cfg.eps_max,
        });
    }
    Policy::rule_of_double(op.eps_deployed, cfg.arrival_rate, cfg.buffer_size)
}

/// `1 + eps / (1 - 2 eps)` frames.
pub fn lyrrc_latency(eps: f64) -> Result<f64> {
    if !(0.0..0.5).contains(&eps) {
        return Err(Error::Divergent { eps });
    }
    Ok(1.0 + eps / (1.0 - 2.0 * eps))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometricLaw {
    /// `probs[i - 1]` is the stationary probability of `q = i lambda`.
    pub probs: Vec<f64>,
    /// Probability of levels above `i_max lambda`, left out and not renormalized.
    pub truncation_mass: f64,
}

impl GeometricLaw {
    /// `sum_i i pi_i`, the mean queue in units of `lambda`.
    pub fn mean_level(&self) -> f64 {
        self.probs.iter().enumerate().map(|(i, p)| (i + 1) as f64 * p).sum()
    }
}

/// Stationary law of the rule-of-double queue with an unbounded buffer,
/// `pi_i = (1 - x) x^(i-1)` with `x = eps / (1 - eps)`, for `i = 1..=i_max`.
pub fn steady_state_distribution(eps: f64, i_max: usize) -> Result<GeometricLaw> {
    if !(0.0..0.5).contains(&eps) {
        return Err(Error::Divergent { eps });
    }
    let x = eps / (1.0 - eps);
    let probs = (0..i_max).map(|i| (1.0 - x) * x.powi(i as i32)).collect();
    Ok(GeometricLaw {
        probs,
        truncation_mass: x.powi(i_max as i32),
    })
}

/// `1 + eps_o / (1 - eps_o)` frames, a lower bound on any policy's latency.
pub fn latency_lower_bound(cfg: &SystemConfig, dist: &GainDistribution) -> Result<f64> {
    Ok(lower_bound_at(epsilon_o(cfg, dist)?.eps_o))
}

fn lower_bound_at(eps: f64) -> f64 {
    1.0 + eps / (1.0 - eps)
}

/// Long-run power of the rule-of-double policy with an unbounded buffer:
/// rate `lambda` with probability `(1 - 2e)/(1 - e)` and `2 lambda` with
/// probability `e/(1 - e)`, both at the deployed error rate `e`.
pub fn lyrrc_average_power(cfg: &SystemConfig, dist: &GainDistribution) -> Result<f64> {
    let e = epsilon_o(cfg, dist)?.eps_deployed;
    average_power_at(e, cfg, dist)
}

fn average_power_at(e: f64, cfg: &SystemConfig, dist: &GainDistribution) -> Result<f64> {
    if e >= 0.5 {
        return Err(Error::Divergent { eps: e });
    }
    let lambda = cfg.arrival_rate;
    let p1 = required_power(lambda, e, cfg, dist)?;
    let p2 = required_power(2 * lambda, e, cfg, dist)?;
    Ok((1.0 - 2.0 * e) / (1.0 - e) * p1 + e / (1.0 - e) * p2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapScaling {
    /// Rule-of-double latency minus the lower bound.
    pub gap: f64,
    /// `eps^2 / ((1 - 2 eps)(1 - eps))`.
    pub gap_closed_form: f64,
    /// Asymptote of `D* - 1`, which is `eps` itself.
    pub d_star_asymptote: f64,
}

pub fn gap_at(eps: f64) -> Result<GapScaling> {
    let gap = lyrrc_latency(eps)? - lower_bound_at(eps);
    Ok(GapScaling {
        gap,
        gap_closed_form: eps * eps / ((1.0 - 2.0 * eps) * (1.0 - eps)),
        d_star_asymptote: eps,
    })
}

pub fn gap_and_scaling(cfg: &SystemConfig, dist: &GainDistribution) -> Result<GapScaling> {
    gap_at(epsilon_o(cfg, dist)?.eps_o)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyrrcResult {
    pub rho: f64,
    pub operating: OperatingPoint,
    pub policy: Policy,
    pub latency_analytic: f64,
    pub latency_ms: f64,
    pub lower_bound: f64,
    pub avg_power_analytic: f64,
    pub gap: GapScaling,
}

pub fn analyze(cfg: &SystemConfig, dist: &GainDistribution) -> Result<LyrrcResult> {
    cfg.validate()?;
    let rho = utilization(cfg)?;
    let operating = epsilon_o(cfg, dist)?;
    let policy = lyrrc_policy(cfg, dist)?;
    let latency_analytic = lyrrc_latency(operating.eps_deployed)?;
    Ok(LyrrcResult {
        rho,
        operating,
        policy,
        latency_analytic,
        latency_ms: cfg.frames_to_seconds(latency_analytic) * 1e3,
        lower_bound: lower_bound_at(operating.eps_o),
        avg_power_analytic: average_power_at(operating.eps_deployed, cfg, dist)?,
        gap: gap_at(operating.eps_o)?,
    })
}
