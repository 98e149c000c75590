//! Constrained MDP solve: per target error rate, a Lagrangian relaxation of
//! the power constraint, discounted value iteration for fixed multiplier,
//! bisection on the multiplier, and the latency-minimizing error rate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::queue::{steady_state_eval, Policy, PowerMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Discount factor standing in for the average-cost criterion.
    pub alpha: f64,
    /// Target accuracy of the value function, relative to the stage-cost scale.
    pub tol: f64,
    /// Bisection stops once `beta_lo / beta_hi >= 1 - delta`.
    pub delta: f64,
    /// Upper end of the multiplier bracket.
    pub z: f64,
    pub max_iterations: usize,
    /// Bisection also stops once the feasible end drops below this.
    pub beta_floor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            alpha: 0.999,
            tol: 1e-9,
            delta: 1e-3,
            z: 1e6,
            max_iterations: 1_000_000,
            beta_floor: 1e-12,
        }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config("solver.alpha", "must lie in (0, 1)"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::config("solver.tol", "must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 0.1) {
            return Err(Error::config("solver.delta", "must lie in (0, 0.1)"));
        }
        if !(self.z > 0.0 && self.z.is_finite()) {
            return Err(Error::config("solver.z", "must be positive and finite"));
        }
        Ok(())
    }
}

/// Target error rates from 0.01 % to 20 %: 0.01 % steps up to 0.09 %,
/// 0.1 % steps up to 0.9 %, then 1 % steps.
pub fn default_eps_grid() -> Vec<f64> {
    let mut grid: Vec<f64> = (1..=9).map(|i| i as f64 * 1e-4).collect();
    grid.extend((1..=9).map(|i| i as f64 * 1e-3));
    grid.extend((1..=20).map(|i| i as f64 * 1e-2));
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    pub values: Vec<f64>,
}

impl ValueFunction {
    pub fn zeros(buffer: u32) -> Self {
        ValueFunction {
            values: vec![0.0; buffer as usize + 1],
        }
    }

    fn sup_distance(&self, other: &ValueFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy)]
struct Action {
    rate: u32,
    latency_cost: f64,
    power: f64,
    next_success: usize,
    next_failure: usize,
}

/// Stage costs and transitions for one target error rate.
#[derive(Debug, Clone)]
pub struct MdpModel {
    eps: f64,
    buffer: u32,
    actions: Vec<Vec<Action>>,
}

impl MdpModel {
    pub fn new(cfg: &SystemConfig, power: &dyn PowerMap, eps: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::Domain(format!("target error rate must lie in [0, 1), got {eps}")));
        }
        let lambda = cfg.arrival_rate;
        let buffer = cfg.buffer_size;
        let lam = lambda as f64;
        let d_drop = cfg.drop_penalty_frames();
        let powers: Vec<Option<f64>> = (0..=buffer).map(|r| power.frame_power(r, eps)).collect();
        let mut actions = Vec::with_capacity(buffer as usize + 1);
        for q in 0..=buffer {
            let list: Vec<Action> = (0..=q)
                .filter_map(|r| {
                    let p = powers[r as usize]?;
                    let succ = q + lambda - r;
                    let fail = q + lambda;
                    let drop_s = succ.saturating_sub(buffer) as f64;
                    let drop_f = fail.saturating_sub(buffer) as f64;
                    let expected_drop = (1.0 - eps) * drop_s + eps * drop_f;
                    Some(Action {
                        rate: r,
                        latency_cost: q as f64 / lam + d_drop / lam * expected_drop,
                        power: p,
                        next_success: succ.min(buffer) as usize,
                        next_failure: fail.min(buffer) as usize,
                    })
                })
                .collect();
            if list.is_empty() {
                return Err(Error::AllActionsInfeasible { queue: q });
            }
            actions.push(list);
        }
        Ok(MdpModel { eps, buffer, actions })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    fn cost_scale(&self, beta: f64) -> f64 {
        self.actions
            .iter()
            .flatten()
            .map(|a| a.latency_cost + beta * a.power)
            .fold(1.0, f64::max)
    }

    /// One Bellman backup. Ties go to the smaller rate.
    pub fn bellman(&self, v: &ValueFunction, beta: f64, alpha: f64) -> (ValueFunction, Vec<u32>) {
        let eps = self.eps;
        let mut values = Vec::with_capacity(self.actions.len());
        let mut rates = Vec::with_capacity(self.actions.len());
        for list in &self.actions {
            let mut best = f64::INFINITY;
            let mut best_rate = 0;
            for a in list {
                let future = (1.0 - eps) * v.values[a.next_success] + eps * v.values[a.next_failure];
                let cost = a.latency_cost + beta * a.power + alpha * future;
                if cost < best {
                    best = cost;
                    best_rate = a.rate;
                }
            }
            values.push(best);
            rates.push(best_rate);
        }
        (ValueFunction { values }, rates)
    }

    /// Iterates the backup from `start` until the sup-norm change falls
    /// below `tol (1 - alpha) / alpha` times the stage-cost scale.
    ///
    /// Iterates are shifted so the value at the full buffer is zero. A shift
    /// does not change the greedy policy and keeps magnitudes near the
    /// relative values instead of `cost / (1 - alpha)`.
    pub fn value_iteration(
        &self,
        beta: f64,
        opts: &SolverOptions,
        start: Option<ValueFunction>,
    ) -> Result<(ValueFunction, Vec<u32>)> {
        let alpha = opts.alpha;
        let threshold = opts.tol * (1.0 - alpha) / alpha * self.cost_scale(beta);
        let reference = self.buffer as usize;
        let mut v = start.unwrap_or_else(|| ValueFunction::zeros(self.buffer));
        let mut delta = f64::INFINITY;
        for _ in 0..opts.max_iterations {
            let (mut next, _) = self.bellman(&v, beta, alpha);
            let shift = next.values[reference];
            next.values.iter_mut().for_each(|x| *x -= shift);
            delta = next.sup_distance(&v);
            v = next;
            if delta < threshold {
                let (_, rates) = self.bellman(&v, beta, alpha);
                return Ok((v, rates));
            }
        }
        Err(Error::NoConvergence {
            iterations: opts.max_iterations,
            delta,
        })
    }
}

/// One backup of `v` for target error rate `eps` and multiplier `beta`.
pub fn bellman_update(
    v: &ValueFunction,
    eps: f64,
    beta: f64,
    cfg: &SystemConfig,
    power: &dyn PowerMap,
    alpha: f64,
) -> Result<(ValueFunction, Vec<u32>)> {
    let model = MdpModel::new(cfg, power, eps)?;
    if v.values.len() != cfg.buffer_size as usize + 1 {
        return Err(Error::Domain("value function length must be B + 1".into()));
    }
    Ok(model.bellman(v, beta, alpha))
}

pub fn value_iteration(
    eps: f64,
    beta: f64,
    cfg: &SystemConfig,
    power: &dyn PowerMap,
    opts: &SolverOptions,
) -> Result<(ValueFunction, Vec<u32>)> {
    opts.validate()?;
    MdpModel::new(cfg, power, eps)?.value_iteration(beta, opts, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub beta: f64,
    pub latency: f64,
    pub avg_power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaSolution {
    pub beta: f64,
    pub policy: Policy,
    pub latency: f64,
    pub avg_power: f64,
    pub probes: Vec<Probe>,
    /// Whether average power was nonincreasing in beta across all probes.
    pub monotone: bool,
}

/// Smallest multiplier whose greedy policy meets the power budget, found by
/// bisection on `[0, z]` with exact chain evaluation at every probe.
pub fn bisect_beta(
    eps: f64,
    cfg: &SystemConfig,
    power: &dyn PowerMap,
    opts: &SolverOptions,
) -> Result<BetaSolution> {
    opts.validate()?;
    let model = MdpModel::new(cfg, power, eps)?;
    let budget = cfg.power_budget;
    let mut probes = Vec::new();
    let mut warm: Option<ValueFunction> = None;
    let mut evaluate = |beta: f64| -> Result<(Policy, Probe)> {
        let (v, rates) = model.value_iteration(beta, opts, warm.take())?;
        warm = Some(v);
        let policy = Policy::from_table(eps, rates)?;
        let eval = steady_state_eval(&policy, cfg, power)?;
        let probe = Probe {
            beta,
            latency: eval.latency_frames,
            avg_power: eval.avg_power,
        };
        probes.push(probe);
        Ok((policy, probe))
    };

    let (policy0, p0) = evaluate(0.0)?;
    let (policy, probe) = if p0.avg_power <= budget {
        (policy0, p0)
    } else {
        let (policy_z, pz) = evaluate(opts.z)?;
        if pz.avg_power > budget {
            return Err(Error::PowerInfeasible {
                eps,
                beta: opts.z,
                power: pz.avg_power,
                budget,
            });
        }
        let (mut lo, mut hi) = (0.0, opts.z);
        let mut best = (policy_z, pz);
        while lo / hi < 1.0 - opts.delta && hi > opts.beta_floor {
            let mid = 0.5 * (lo + hi);
            let (policy, probe) = evaluate(mid)?;
            if probe.avg_power <= budget {
                hi = mid;
                best = (policy, probe);
            } else {
                lo = mid;
            }
        }
        best
    };

    let mut sorted = probes.clone();
    sorted.sort_by(|a, b| a.beta.total_cmp(&b.beta));
    let monotone = sorted
        .windows(2)
        .all(|w| w[1].avg_power <= w[0].avg_power * (1.0 + 1e-9) + 1e-12);
    if !monotone {
        log::warn!("average power not monotone in beta at eps = {eps}");
    }
    Ok(BetaSolution {
        beta: probe.beta,
        policy,
        latency: probe.latency,
        avg_power: probe.avg_power,
        probes,
        monotone,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Solved,
    /// Power budget unreachable even at the largest multiplier.
    PowerInfeasible,
    /// Above the reliability constraint; not solved.
    ExceedsEpsMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsRecord {
    pub eps: f64,
    pub status: RecordStatus,
    pub beta: Option<f64>,
    pub rate_map: Option<Vec<u32>>,
    pub latency_frames: Option<f64>,
    pub avg_power: Option<f64>,
    pub probes: usize,
    pub power_monotone_in_beta: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpSolution {
    pub records: Vec<EpsRecord>,
    pub chosen: usize,
}

impl MdpSolution {
    pub fn best(&self) -> &EpsRecord {
        &self.records[self.chosen]
    }

    pub fn policy(&self) -> Policy {
        let r = self.best();
        Policy::from_table(r.eps, r.rate_map.clone().expect("chosen record is solved")).expect("valid table")
    }

    /// `(eps, latency)` for every solved record.
    pub fn curve(&self) -> Vec<(f64, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.latency_frames.map(|d| (r.eps, d)))
            .collect()
    }
}

fn solve_one(eps: f64, cfg: &SystemConfig, power: &dyn PowerMap, opts: &SolverOptions) -> Result<EpsRecord> {
    let blank = EpsRecord {
        eps,
        status: RecordStatus::ExceedsEpsMax,
        beta: None,
        rate_map: None,
        latency_frames: None,
        avg_power: None,
        probes: 0,
        power_monotone_in_beta: None,
    };
    if eps > cfg.eps_max {
        return Ok(blank);
    }
    match bisect_beta(eps, cfg, power, opts) {
        Ok(s) => Ok(EpsRecord {
            status: RecordStatus::Solved,
            beta: Some(s.beta),
            rate_map: Some(s.policy.rates().to_vec()),
            latency_frames: Some(s.latency),
            avg_power: Some(s.avg_power),
            probes: s.probes.len(),
            power_monotone_in_beta: Some(s.monotone),
            ..blank
        }),
        Err(Error::PowerInfeasible { .. }) => Ok(EpsRecord {
            status: RecordStatus::PowerInfeasible,
            ..blank
        }),
        Err(e) => Err(e),
    }
}

/// Solves every grid point in parallel and picks the feasible target error
/// rate with the lowest latency, preferring the smaller rate on ties.
pub fn solve(cfg: &SystemConfig, power: &dyn PowerMap, eps_grid: &[f64], opts: &SolverOptions) -> Result<MdpSolution> {
    cfg.validate()?;
    opts.validate()?;
    if eps_grid.is_empty() {
        return Err(Error::Domain("target error rate grid is empty".into()));
    }
    let records = eps_grid
        .par_iter()
        .map(|&eps| solve_one(eps, cfg, power, opts))
        .collect::<Result<Vec<_>>>()?;
    let mut chosen: Option<usize> = None;
    for (i, r) in records.iter().enumerate() {
        let Some(d) = r.latency_frames else { continue };
        let better = match chosen {
            None => true,
            Some(c) => {
                let best = &records[c];
                let bd = best.latency_frames.unwrap();
                d < bd || (d == bd && r.eps < best.eps)
            }
        };
        if better {
            chosen = Some(i);
        }
    }
    let chosen = chosen.ok_or(Error::NoFeasibleTarget)?;
    Ok(MdpSolution { records, chosen })
}
