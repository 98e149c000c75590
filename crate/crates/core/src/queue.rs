//! Buffer dynamics with retransmission and overflow drops, evaluated by
//! simulation and by an exact stationary solve of the finite chain.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Per-frame transmit power for `rate` packets at target error rate `eps`.
/// `None` marks a rate that no power reaches.
pub trait PowerMap: Sync {
    fn frame_power(&self, rate: u32, eps: f64) -> Option<f64>;
}

impl<F> PowerMap for F
where
    F: Fn(u32, f64) -> Option<f64> + Sync,
{
    fn frame_power(&self, rate: u32, eps: f64) -> Option<f64> {
        self(rate, eps)
    }
}

/// Every positive rate costs the same power.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPower(pub f64);

impl PowerMap for ConstantPower {
    fn frame_power(&self, rate: u32, _eps: f64) -> Option<f64> {
        Some(if rate == 0 { 0.0 } else { self.0 })
    }
}

/// A target error rate and a stationary map from queue length to packets sent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub eps: f64,
    /// `rates[q]` for `q` in `0..=B`.
    rates: Vec<u32>,
}

impl Policy {
    pub fn from_table(eps: f64, rates: Vec<u32>) -> Result<Self> {
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::Domain(format!("policy error rate must lie in [0, 1), got {eps}")));
        }
        if rates.is_empty() {
            return Err(Error::Domain("rate table must cover q = 0".into()));
        }
        if let Some((q, &r)) = rates.iter().enumerate().find(|&(q, &r)| r as usize > q) {
            return Err(Error::RateExceedsQueue { queue: q as u32, rate: r });
        }
        Ok(Policy { eps, rates })
    }

    pub fn from_fn(eps: f64, buffer: u32, f: impl Fn(u32) -> u32) -> Result<Self> {
        Self::from_table(eps, (0..=buffer).map(f).collect())
    }

    /// Send the whole buffer every frame.
    pub fn drain(eps: f64, buffer: u32) -> Result<Self> {
        Self::from_fn(eps, buffer, |q| q)
    }

    /// `r(q) = min(q, 2 lambda)`.
    pub fn rule_of_double(eps: f64, arrival_rate: u32, buffer: u32) -> Result<Self> {
        Self::from_fn(eps, buffer, |q| q.min(2 * arrival_rate))
    }

    pub fn rate(&self, q: u32) -> u32 {
        self.rates[q as usize]
    }

    pub fn rates(&self) -> &[u32] {
        &self.rates
    }

    pub fn buffer_size(&self) -> u32 {
        (self.rates.len() - 1) as u32
    }

    fn check_against(&self, cfg: &SystemConfig) -> Result<()> {
        if self.buffer_size() != cfg.buffer_size {
            return Err(Error::Domain(format!(
                "policy covers B = {}, configuration has B = {}",
                self.buffer_size(),
                cfg.buffer_size
            )));
        }
        Ok(())
    }
}

fn advance(q: u32, r: u32, success: bool, arrivals: u32, buffer: u32) -> (u32, u32) {
    let sent = if success { r } else { 0 };
    let level = q + arrivals - sent;
    (level.min(buffer), level.saturating_sub(buffer))
}

/// One frame of buffer evolution: `(q_next, dropped)`.
pub fn step(q: u32, r: u32, success: bool, cfg: &SystemConfig) -> Result<(u32, u32)> {
    if r > q {
        return Err(Error::RateExceedsQueue { queue: q, rate: r });
    }
    if q > cfg.buffer_size {
        return Err(Error::Domain(format!("queue {q} exceeds buffer {}", cfg.buffer_size)));
    }
    Ok(advance(q, r, success, cfg.arrival_rate, cfg.buffer_size))
}

/// Arrival law used by [`simulate`].
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Arrivals {
    /// `lambda` packets every frame.
    #[default]
    Constant,
    /// `pmf[a]` is the probability of `a` arrivals in a frame.
    Tabulated(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub horizon: u64,
    pub warmup: u64,
    pub seed: u64,
    pub arrivals: Arrivals,
    pub batches: usize,
}

pub const MIN_HORIZON: u64 = 10_000;

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            horizon: 1_000_000,
            warmup: 1_000,
            seed: 0,
            arrivals: Arrivals::Constant,
            batches: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub avg_queue: f64,
    pub drop_rate: f64,
    pub avg_power: f64,
    pub latency_frames: f64,
    pub latency_seconds: f64,
    pub horizon: u64,
    /// Batch-means standard error of `latency_frames`.
    pub latency_stderr: f64,
    /// Packets delivered per frame.
    pub throughput: f64,
    /// Frames spent at each transmitted rate.
    pub rate_counts: BTreeMap<u32, u64>,
}

/// Monte-Carlo run of `policy` from an empty buffer. The first
/// `opts.warmup` frames are discarded; `opts.horizon` frames are averaged.
pub fn simulate(policy: &Policy, cfg: &SystemConfig, power: &dyn PowerMap, opts: &SimOptions) -> Result<SimReport> {
    policy.check_against(cfg)?;
    if opts.horizon < MIN_HORIZON {
        return Err(Error::config(
            "simulation.horizon",
            format!("must be at least {MIN_HORIZON} frames, got {}", opts.horizon),
        ));
    }
    let arrival_draw = match &opts.arrivals {
        Arrivals::Constant => None,
        Arrivals::Tabulated(pmf) => Some(
            WeightedIndex::new(pmf)
                .map_err(|e| Error::config("simulation.arrivals", e.to_string()))?,
        ),
    };
    let mean_arrivals = match &opts.arrivals {
        Arrivals::Constant => cfg.arrival_rate as f64,
        Arrivals::Tabulated(pmf) => {
            let total: f64 = pmf.iter().sum();
            pmf.iter().enumerate().map(|(a, w)| a as f64 * w).sum::<f64>() / total
        }
    };
    if !(mean_arrivals > 0.0) {
        return Err(Error::config("simulation.arrivals", "mean arrival count must be positive"));
    }

    let buffer = cfg.buffer_size;
    let d_drop = cfg.drop_penalty_frames();
    let eps = policy.eps;
    let mut rng = stream_rng(opts.seed);
    let mut power_cache: Vec<Option<f64>> = vec![None; buffer as usize + 1];

    let batches = opts.batches.clamp(2, opts.horizon as usize);
    let batch_len = opts.horizon / batches as u64;
    let mut batch_sums = vec![0.0; batches];

    let (mut sum_q, mut sum_drop, mut sum_power, mut sum_sent) = (0.0, 0.0, 0.0, 0.0);
    let mut rate_counts = BTreeMap::new();
    let mut q = 0u32;
    for t in 0..opts.warmup + opts.horizon {
        let r = policy.rate(q);
        let p = match power_cache[r as usize] {
            Some(p) => p,
            None => {
                let p = power.frame_power(r, eps).ok_or(Error::InfeasibleState { queue: q, rate: r, eps })?;
                power_cache[r as usize] = Some(p);
                p
            }
        };
        let success = eps == 0.0 || rng.random::<f64>() >= eps;
        let arrivals = match &arrival_draw {
            None => cfg.arrival_rate,
            Some(w) => w.sample(&mut rng) as u32,
        };
        let (next, dropped) = advance(q, r, success, arrivals, buffer);
        if t >= opts.warmup {
            let i = t - opts.warmup;
            sum_q += q as f64;
            sum_drop += dropped as f64;
            sum_power += p;
            if success {
                sum_sent += r as f64;
            }
            *rate_counts.entry(r).or_insert(0) += 1;
            let b = ((i / batch_len.max(1)) as usize).min(batches - 1);
            batch_sums[b] += (q as f64 + dropped as f64 * d_drop) / mean_arrivals;
        }
        q = next;
    }

    let n = opts.horizon as f64;
    let avg_queue = sum_q / n;
    let drop_rate = sum_drop / n;
    let latency_frames = avg_queue / mean_arrivals + drop_rate / mean_arrivals * d_drop;
    let means: Vec<f64> = batch_sums
        .iter()
        .enumerate()
        .map(|(b, s)| {
            let len = if b == batches - 1 {
                opts.horizon - batch_len * (batches as u64 - 1)
            } else {
                batch_len
            };
            s / len as f64
        })
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    Ok(SimReport {
        avg_queue,
        drop_rate,
        avg_power: sum_power / n,
        latency_frames,
        latency_seconds: cfg.frames_to_seconds(latency_frames),
        horizon: opts.horizon,
        latency_stderr: (var / batches as f64).sqrt(),
        throughput: sum_sent / n,
        rate_counts,
    })
}

/// Exact long-run averages of a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainEval {
    pub latency_frames: f64,
    pub avg_power: f64,
    pub avg_queue: f64,
    pub drop_rate: f64,
    /// Stationary probability of each queue length `0..=B`.
    pub stationary: Vec<f64>,
}

/// The two successor states of `q` and their probabilities.
fn transitions(policy: &Policy, q: u32, lambda: u32, buffer: u32) -> [(u32, u32, f64); 2] {
    let r = policy.rate(q);
    let (qs, ds) = advance(q, r, true, lambda, buffer);
    let (qf, df) = advance(q, r, false, lambda, buffer);
    [(qs, ds, 1.0 - policy.eps), (qf, df, policy.eps)]
}

fn reachable_from(start: usize, succ: &[Vec<usize>]) -> Vec<bool> {
    let mut seen = vec![false; succ.len()];
    let mut todo = VecDeque::from([start]);
    seen[start] = true;
    while let Some(i) = todo.pop_front() {
        for &j in &succ[i] {
            if !seen[j] {
                seen[j] = true;
                todo.push_back(j);
            }
        }
    }
    seen
}

/// Solves the stationary distribution of the chain induced by `policy`
/// and returns exact latency and power.
///
/// Only states reachable from the empty buffer are considered. The policy
/// must leave exactly one closed class among them.
pub fn steady_state_eval(policy: &Policy, cfg: &SystemConfig, power: &dyn PowerMap) -> Result<ChainEval> {
    policy.check_against(cfg)?;
    let lambda = cfg.arrival_rate;
    let buffer = cfg.buffer_size;
    let n = buffer as usize + 1;
    let succ: Vec<Vec<usize>> = (0..n as u32)
        .map(|q| {
            let mut s: Vec<usize> = transitions(policy, q, lambda, buffer)
                .iter()
                .filter(|t| t.2 > 0.0)
                .map(|t| t.0 as usize)
                .collect();
            s.dedup();
            s
        })
        .collect();

    let from_empty = reachable_from(0, &succ);
    let reach: Vec<Vec<bool>> = (0..n)
        .map(|i| if from_empty[i] { reachable_from(i, &succ) } else { vec![false; n] })
        .collect();
    // A reachable state is recurrent iff everything it reaches leads back to it.
    let recurrent: Vec<bool> = (0..n)
        .map(|i| from_empty[i] && (0..n).all(|j| !reach[i][j] || reach[j][i]))
        .collect();
    let mut class_reps = Vec::new();
    for i in (0..n).filter(|&i| recurrent[i]) {
        if !class_reps.iter().any(|&c: &usize| reach[c][i]) {
            class_reps.push(i);
        }
    }
    if class_reps.len() != 1 {
        return Err(Error::NotUnichain { classes: class_reps.len() });
    }
    let states: Vec<usize> = (0..n).filter(|&i| recurrent[i]).collect();
    let index: BTreeMap<usize, usize> = states.iter().enumerate().map(|(k, &s)| (s, k)).collect();
    let m = states.len();

    // Columns of A are pi-balance equations; the last is replaced by sum(pi) = 1.
    let mut a = DMatrix::<f64>::zeros(m, m);
    for (k, &s) in states.iter().enumerate() {
        a[(k, k)] -= 1.0;
        for (next, _, prob) in transitions(policy, s as u32, lambda, buffer) {
            if prob > 0.0 {
                a[(index[&(next as usize)], k)] += prob;
            }
        }
    }
    for k in 0..m {
        a[(m - 1, k)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(m);
    b[m - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&b)
        .ok_or(Error::Singular { condition: f64::INFINITY })?;

    let mut stationary = vec![0.0; n];
    let (mut avg_queue, mut drop_rate, mut avg_power) = (0.0, 0.0, 0.0);
    for (k, &s) in states.iter().enumerate() {
        let w = pi[k].max(0.0);
        stationary[s] = w;
        let q = s as u32;
        let r = policy.rate(q);
        let p = power
            .frame_power(r, policy.eps)
            .ok_or(Error::InfeasibleState { queue: q, rate: r, eps: policy.eps })?;
        avg_queue += w * q as f64;
        avg_power += w * p;
        drop_rate += w * transitions(policy, q, lambda, buffer)
            .iter()
            .map(|t| t.2 * t.1 as f64)
            .sum::<f64>();
    }
    let lam = lambda as f64;
    Ok(ChainEval {
        latency_frames: avg_queue / lam + drop_rate / lam * cfg.drop_penalty_frames(),
        avg_power,
        avg_queue,
        drop_rate,
        stationary,
    })
}
