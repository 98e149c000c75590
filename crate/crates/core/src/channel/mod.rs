//! Estimated-channel sampling, per-antenna and effective gains, and the
//! empirical distribution of the effective gain.

mod distribution;
pub mod trace;

pub use distribution::GainDistribution;
pub use trace::{load_trace, write_trace, TraceEstimation, TraceFile};

use nalgebra::{Complex, DMatrix};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;

use crate::config::{ChannelModel, LinkMode, SystemConfig};
use crate::error::{Error, Result};
use crate::multiuser::mu_per_antenna_gain;
use crate::rng::cell_rng;

pub type Complex64 = Complex<f64>;

/// Fewer samples cannot resolve the finest grid of target error rates.
pub const MIN_SAMPLES: usize = 1000;
pub const DEFAULT_SAMPLES: usize = 200_000;

/// Estimated channel of one user on one subcarrier.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample {
    pub estimated_channel: Vec<Complex64>,
    /// 1-based subcarrier index.
    pub subcarrier_index: usize,
}

/// How per-antenna gains are drawn when building a distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GainSampler {
    /// Draw the Gamma law of the gain directly: `c Gamma(M, 1) / M` for
    /// conjugate beamforming, `c Gamma(M - K + 1, 1) / M` for zero-forcing.
    #[default]
    Analytic,
    /// Draw complex Gaussian vectors (or M x K matrices) and reduce them.
    Matrix,
}

pub(crate) fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex::new(s * re, s * im)
}

fn check_channel_config(cfg: &SystemConfig) -> Result<()> {
    if cfg.antennas == 0 {
        return Err(Error::config("antennas", "must be at least 1"));
    }
    if cfg.pilots == 0 {
        return Err(Error::config("pilots", "must be at least 1"));
    }
    if !(cfg.pilot_power > 0.0) {
        return Err(Error::config("pilot_power", "must be positive"));
    }
    if !(cfg.large_scale_gain > 0.0 && cfg.large_scale_gain <= 1.0) {
        return Err(Error::config("large_scale_gain", "must lie in (0, 1]"));
    }
    Ok(())
}

/// Draws the MMSE estimate of an `M`-antenna channel for cell
/// (`frame`, `subcarrier`), entries i.i.d. CN(0, c) with
/// `c = tau p_tau gamma / (1 + tau p_tau gamma)`.
pub fn sample_estimated_channel(
    cfg: &SystemConfig,
    seed: u64,
    frame: u64,
    subcarrier: usize,
) -> Result<ChannelSample> {
    check_channel_config(cfg)?;
    let estimated_channel = match cfg.channel {
        ChannelModel::PointMass { kappa } => {
            vec![Complex::new(kappa.sqrt(), 0.0); cfg.antennas]
        }
        ChannelModel::Rayleigh => {
            let c = cfg.estimate_variance();
            let mut rng = cell_rng(seed, frame, subcarrier);
            (0..cfg.antennas).map(|_| complex_normal(&mut rng, c)).collect()
        }
    };
    Ok(ChannelSample {
        estimated_channel,
        subcarrier_index: subcarrier + 1,
    })
}

/// `||h||^2 / M`.
pub fn per_antenna_gain(sample: &ChannelSample) -> Result<f64> {
    let h = &sample.estimated_channel;
    if h.is_empty() {
        return Err(Error::config("antennas", "empty channel vector"));
    }
    Ok(h.iter().map(|z| z.norm_sqr()).sum::<f64>() / h.len() as f64)
}

/// Geometric mean of the per-subcarrier gains, computed in the log domain.
pub fn effective_gain(per_antenna_gains: &[f64]) -> Result<f64> {
    if per_antenna_gains.is_empty() {
        return Err(Error::Domain("effective gain needs at least one subcarrier".into()));
    }
    let mut log_sum = 0.0;
    for &k in per_antenna_gains {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::Domain(format!("per-antenna gain must be positive, got {k}")));
        }
        log_sum += k.ln();
    }
    Ok((log_sum / per_antenna_gains.len() as f64).exp())
}

/// Per-cell gain generator. Holds the Gamma law so it is built once per run.
struct GainDraw {
    model: ChannelModel,
    sampler: GainSampler,
    mode: LinkMode,
    antennas: usize,
    users: usize,
    variance: f64,
    gamma: Gamma<f64>,
}

impl GainDraw {
    fn new(cfg: &SystemConfig, sampler: GainSampler) -> Result<Self> {
        check_channel_config(cfg)?;
        if cfg.mode == LinkMode::Multiuser && cfg.antennas <= cfg.users {
            return Err(Error::config("antennas", "zero-forcing needs M > K"));
        }
        let shape = match cfg.mode {
            LinkMode::SingleUser => cfg.antennas as f64,
            LinkMode::Multiuser => (cfg.antennas - cfg.users + 1) as f64,
        };
        Ok(GainDraw {
            model: cfg.channel,
            sampler,
            mode: cfg.mode,
            antennas: cfg.antennas,
            users: cfg.users,
            variance: cfg.estimate_variance(),
            gamma: Gamma::new(shape, 1.0).expect("positive shape"),
        })
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        if let ChannelModel::PointMass { kappa } = self.model {
            return Ok(kappa);
        }
        let m = self.antennas as f64;
        match (self.sampler, self.mode) {
            (GainSampler::Analytic, _) => Ok(self.variance * self.gamma.sample(rng) / m),
            (GainSampler::Matrix, LinkMode::SingleUser) => {
                let s: f64 = (0..self.antennas)
                    .map(|_| complex_normal(rng, self.variance).norm_sqr())
                    .sum();
                Ok(s / m)
            }
            (GainSampler::Matrix, LinkMode::Multiuser) => {
                // Column 0 is the user of interest; scaling the other columns
                // leaves its inverse-Gram diagonal unchanged.
                let variance = self.variance;
                let h = DMatrix::from_fn(self.antennas, self.users, |_, k| {
                    complex_normal(rng, if k == 0 { variance } else { 1.0 })
                });
                mu_per_antenna_gain(&h, 0)
            }
        }
    }
}

/// `count` per-antenna gains from independent frames on subcarrier 1.
pub fn sample_per_antenna_gains(
    cfg: &SystemConfig,
    count: usize,
    seed: u64,
    sampler: GainSampler,
) -> Result<Vec<f64>> {
    let draw = GainDraw::new(cfg, sampler)?;
    (0..count as u64)
        .into_par_iter()
        .map(|frame| draw.draw(&mut cell_rng(seed, frame, 0)))
        .collect()
}

pub fn build_gain_distribution(cfg: &SystemConfig, n_samples: usize, seed: u64) -> Result<GainDistribution> {
    build_gain_distribution_with(cfg, n_samples, seed, GainSampler::Analytic)
}

/// `n_samples` realizations of the effective gain, each from `N` fresh
/// per-antenna gains. Deterministic in `seed` regardless of thread count.
pub fn build_gain_distribution_with(
    cfg: &SystemConfig,
    n_samples: usize,
    seed: u64,
    sampler: GainSampler,
) -> Result<GainDistribution> {
    if n_samples < MIN_SAMPLES {
        return Err(Error::config(
            "channel.samples",
            format!("need at least {MIN_SAMPLES} samples to resolve the target error grid, got {n_samples}"),
        ));
    }
    if cfg.subcarriers == 0 {
        return Err(Error::config("subcarriers", "must be at least 1"));
    }
    let draw = GainDraw::new(cfg, sampler)?;
    let n = cfg.subcarriers;
    let etas: Vec<f64> = (0..n_samples as u64)
        .into_par_iter()
        .map(|frame| {
            let mut log_sum = 0.0;
            for sc in 0..n {
                log_sum += draw.draw(&mut cell_rng(seed, frame, sc))?.ln();
            }
            Ok((log_sum / n as f64).exp())
        })
        .collect::<Result<_>>()?;
    GainDistribution::from_samples(etas)
}
