//! Zero-forcing multiuser uplink, decoupled into one single-user problem per
//! user through the worst-case interference penalty.

use nalgebra::{Complex, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{build_gain_distribution, complex_normal, GainDistribution};
use crate::config::{LinkMode, SystemConfig};
use crate::error::{Error, Result};
use crate::lyrrc::{analyze, LyrrcResult};
use crate::mdp::{solve, MdpSolution, SolverOptions};
use crate::phy::LinkModel;
use crate::rng::cell_rng;

pub const MAX_CONDITION: f64 = 1e12;

/// `1 / (M [(H^H H)^-1]_kk)` for an `M x K` estimated channel.
///
/// The diagonal entry comes from a Cholesky solve against the unit vector,
/// never an explicit inverse. The condition guard uses the lower bound
/// `max_i G_ii / min_i L_ii^2`, which is cheap next to an eigensolve.
pub fn mu_per_antenna_gain(h: &DMatrix<Complex<f64>>, k: usize) -> Result<f64> {
    let (m, users) = h.shape();
    if m == 0 || users == 0 {
        return Err(Error::config("antennas", "empty channel matrix"));
    }
    if k >= users {
        return Err(Error::Domain(format!("user index {k} out of range for {users} users")));
    }
    let gram = h.adjoint() * h;
    let chol = gram.clone().cholesky().ok_or(Error::Singular {
        condition: f64::INFINITY,
    })?;
    let l = chol.l_dirty();
    let min_pivot = (0..users).map(|i| l[(i, i)].norm_sqr()).fold(f64::INFINITY, f64::min);
    let max_diag = (0..users).map(|i| gram[(i, i)].re).fold(0.0, f64::max);
    let condition = max_diag / min_pivot;
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Singular { condition });
    }
    let mut e = DVector::<Complex<f64>>::zeros(users);
    e[k] = Complex::new(1.0, 0.0);
    let x = chol.solve(&e);
    Ok(1.0 / (m as f64 * x[k].re))
}

/// `1 + K/tau + p_I`.
pub fn interference_penalty(users: usize, pilots: u32, interference_power: f64) -> f64 {
    1.0 + users as f64 / pilots as f64 + interference_power
}

/// `M [(W^-1)]_00` for `count` draws of `W = H^H H` with `H` an `M x K`
/// matrix of i.i.d. CN(0, 1) entries. Its mean is `M / (M - K)`.
pub fn inverse_wishart_diagonal(m: usize, k: usize, count: usize, seed: u64) -> Result<Vec<f64>> {
    if m <= k {
        return Err(Error::config("antennas", "inverse Wishart moments need M > K"));
    }
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = cell_rng(seed, i, 0);
            let h = DMatrix::from_fn(m, k, |_, _| complex_normal(&mut rng, 1.0));
            Ok(1.0 / mu_per_antenna_gain(&h, 0)?)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSpec {
    pub large_scale_gain: f64,
    pub power_budget: f64,
    pub arrival_rate: u32,
    pub packet_bits: f64,
    pub eps_max: f64,
    pub weight: f64,
}

impl UserSpec {
    /// The per-user fields of `cfg`, with unit weight.
    pub fn from_config(cfg: &SystemConfig) -> Self {
        UserSpec {
            large_scale_gain: cfg.large_scale_gain,
            power_budget: cfg.power_budget,
            arrival_rate: cfg.arrival_rate,
            packet_bits: cfg.packet_bits,
            eps_max: cfg.eps_max,
            weight: 1.0,
        }
    }
}

/// Shared array parameters in `shared` plus one record per user. The
/// per-user fields of `shared` and its `users` count are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiuserConfig {
    pub shared: SystemConfig,
    pub users: Vec<UserSpec>,
}

impl MultiuserConfig {
    /// `k` identical users with the per-user fields of `cfg`.
    pub fn uniform(cfg: &SystemConfig, k: usize) -> Self {
        MultiuserConfig {
            shared: cfg.clone(),
            users: vec![UserSpec::from_config(cfg); k],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.users.is_empty() {
            return Err(Error::config("users", "need at least one user"));
        }
        if self.shared.antennas <= self.users.len() {
            return Err(Error::config("antennas", "zero-forcing needs more antennas than users"));
        }
        if let Some(u) = self.users.iter().find(|u| !(u.weight > 0.0 && u.weight.is_finite())) {
            return Err(Error::config("users.weight", format!("weights must be positive, got {}", u.weight)));
        }
        Ok(())
    }
}

/// One multiuser-mode configuration per user.
pub fn decouple(mu: &MultiuserConfig) -> Result<Vec<SystemConfig>> {
    mu.validate()?;
    let k = mu.users.len();
    mu.users
        .iter()
        .map(|u| {
            let cfg = SystemConfig {
                users: k,
                mode: LinkMode::Multiuser,
                large_scale_gain: u.large_scale_gain,
                power_budget: u.power_budget,
                arrival_rate: u.arrival_rate,
                packet_bits: u.packet_bits,
                eps_max: u.eps_max,
                ..mu.shared.clone()
            };
            cfg.validate()?;
            Ok(cfg)
        })
        .collect()
}

/// Zero-forcing gain distribution of every user. All users draw from the
/// same channel seed, so users with equal statistics get equal distributions.
pub fn user_distributions(mu: &MultiuserConfig, n_samples: usize, seed: u64) -> Result<Vec<GainDistribution>> {
    decouple(mu)?
        .iter()
        .map(|cfg| build_gain_distribution(cfg, n_samples, seed))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    Mdp,
    Lyrrc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum UserSolution {
    Mdp(MdpSolution),
    Lyrrc(LyrrcResult),
}

impl UserSolution {
    pub fn latency_frames(&self) -> f64 {
        match self {
            UserSolution::Mdp(s) => s.best().latency_frames.expect("chosen record is solved"),
            UserSolution::Lyrrc(r) => r.latency_analytic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiuserSolution {
    pub users: Vec<UserSolution>,
    /// `sum_k w_k D_k` in frames.
    pub weighted_latency: f64,
}

/// Solves every user independently and in parallel. Any user without a
/// feasible solution fails the whole call with [`Error::UsersInfeasible`].
pub fn solve_all(
    mu: &MultiuserConfig,
    dists: &[GainDistribution],
    mode: SolveMode,
    eps_grid: &[f64],
    opts: &SolverOptions,
) -> Result<MultiuserSolution> {
    let cfgs = decouple(mu)?;
    if dists.len() != cfgs.len() {
        return Err(Error::Domain(format!(
            "{} gain distributions for {} users",
            dists.len(),
            cfgs.len()
        )));
    }
    let results: Vec<Result<UserSolution>> = cfgs
        .par_iter()
        .zip(dists)
        .map(|(cfg, dist)| match mode {
            SolveMode::Mdp => solve(cfg, &LinkModel::new(cfg, dist), eps_grid, opts).map(UserSolution::Mdp),
            SolveMode::Lyrrc => analyze(cfg, dist).map(UserSolution::Lyrrc),
        })
        .collect();
    let mut users = Vec::with_capacity(results.len());
    let mut failed = Vec::new();
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => users.push(s),
            Err(
                Error::NoFeasibleTarget
                | Error::ReliabilityInfeasible { .. }
                | Error::Infeasible { .. }
                | Error::UtilizationTooHigh { .. }
                | Error::Divergent { .. },
            ) => failed.push(k),
            Err(e) => return Err(e),
        }
    }
    if !failed.is_empty() {
        return Err(Error::UsersInfeasible { users: failed });
    }
    let weighted_latency = users
        .iter()
        .zip(&mu.users)
        .map(|(s, u)| u.weight * s.latency_frames())
        .sum();
    Ok(MultiuserSolution { users, weighted_latency })
}
