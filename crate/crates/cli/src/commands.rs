use anyhow::{bail, Context};
use mmlat_core::channel::{build_gain_distribution_with, sample_per_antenna_gains, TraceEstimation, TraceFile};
use mmlat_core::lyrrc::{analyze, epsilon_o, latency_lower_bound, lyrrc_latency, lyrrc_policy, utilization};
use mmlat_core::mdp::solve;
use mmlat_core::multiuser::{decouple, solve_all, SolveMode};
use mmlat_core::phy::{required_power, LinkModel};
use mmlat_core::queue::{simulate, steady_state_eval};
use mmlat_core::{Error, GainDistribution, LinkMode, Policy, SystemConfig};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{core_to_config_error, ChannelSection, PolicyChoice, RunConfig};
use crate::output::{emit, Artifact};
use crate::Command;

/// Per-antenna gain draws behind the moment check in `channel-stats`.
const MOMENT_SAMPLES: usize = 100_000;

pub fn dispatch(command: Command, mut cfg: RunConfig) -> anyhow::Result<()> {
    let trace = load_trace(&mut cfg)?;
    let artifact = match command {
        Command::ChannelStats => channel_stats(&cfg, trace.as_ref())?,
        Command::PowerMap => power_map(&cfg, trace.as_ref())?,
        Command::Simulate => simulate_cmd(&cfg, trace.as_ref())?,
        Command::Solve => solve_cmd(&cfg, trace.as_ref())?,
        Command::Lyrrc => lyrrc_cmd(&cfg, trace.as_ref())?,
        Command::Curve => curve(&cfg, trace.as_ref())?,
        Command::SolveMu => multiuser_cmd(&cfg, trace.as_ref(), SolveMode::Mdp)?,
        Command::LyrrcMu => multiuser_cmd(&cfg, trace.as_ref(), SolveMode::Lyrrc)?,
    };
    emit(command.name(), &cfg, &artifact)
}

/// Reads the trace, if configured, and copies its dimensions into the
/// system section so the resolved config describes what was run.
fn load_trace(cfg: &mut RunConfig) -> anyhow::Result<Option<TraceFile>> {
    let ChannelSection::Trace { path, user, .. } = &cfg.channel else {
        return Ok(None);
    };
    let bytes = std::fs::read(path).with_context(|| format!("cannot read trace {}", path.display()))?;
    let trace = TraceFile::from_bytes(&bytes).with_context(|| format!("trace {}", path.display()))?;
    if *user >= trace.users {
        bail!("configuration error at /channel/user: trace has {} users", trace.users);
    }
    cfg.system.antennas = trace.antennas;
    cfg.system.subcarriers = trace.subcarriers;
    cfg.system.users = trace.users;
    if trace.users > 1 {
        cfg.system.mode = LinkMode::Multiuser;
    }
    cfg.system_config().validate().map_err(core_to_config_error)?;
    Ok(Some(trace))
}

fn trace_distributions(cfg: &RunConfig, trace: &TraceFile, sys: &SystemConfig) -> anyhow::Result<Vec<GainDistribution>> {
    let ChannelSection::Trace { reestimate, .. } = cfg.channel else {
        unreachable!("trace given without a trace channel section");
    };
    let estimation = reestimate.then(|| TraceEstimation {
        training_snr: sys.training_snr(),
        seed: cfg.channel_seed(),
    });
    Ok(trace.gain_distributions(estimation)?)
}

fn distribution(cfg: &RunConfig, trace: Option<&TraceFile>, sys: &SystemConfig) -> anyhow::Result<GainDistribution> {
    match (&cfg.channel, trace) {
        (ChannelSection::Synthetic { samples, sampler }, _) => Ok(build_gain_distribution_with(
            sys,
            *samples,
            cfg.channel_seed(),
            (*sampler).into(),
        )?),
        (ChannelSection::Trace { user, .. }, Some(t)) => Ok(trace_distributions(cfg, t, sys)?.swap_remove(*user)),
        (ChannelSection::Trace { .. }, None) => unreachable!("trace is loaded before dispatch"),
    }
}

fn json<T: serde::Serialize>(v: &T) -> anyhow::Result<Value> {
    Ok(serde_json::to_value(v)?)
}

fn channel_stats(cfg: &RunConfig, trace: Option<&TraceFile>) -> anyhow::Result<Artifact> {
    let sys = cfg.system_config();
    let dists = match trace {
        Some(t) => trace_distributions(cfg, t, &sys)?,
        None => vec![distribution(cfg, None, &sys)?],
    };
    let summaries: Vec<Value> = dists
        .iter()
        .enumerate()
        .map(|(user, d)| {
            let quantiles: Vec<Value> = cfg
                .solver
                .eps_grid
                .iter()
                .map(|&e| json!({ "eps": e, "eta": d.inverse_cdf(e).ok() }))
                .collect();
            json!({
                "user": user,
                "samples": d.len(),
                "mean": d.mean(),
                "min": d.min(),
                "max": d.max(),
                "quantiles": quantiles,
            })
        })
        .collect();
    let per_antenna = match trace {
        Some(_) => Value::Null,
        None => {
            let kappa = sample_per_antenna_gains(
                &sys,
                MOMENT_SAMPLES,
                cfg.channel_seed(),
                mmlat_core::channel::GainSampler::Matrix,
            )?;
            let n = kappa.len() as f64;
            let mean = kappa.iter().sum::<f64>() / n;
            let variance = kappa.iter().map(|k| (k - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let c = sys.estimate_variance();
            let m = sys.antennas as f64;
            let dof = match sys.mode {
                LinkMode::SingleUser => m,
                LinkMode::Multiuser => (sys.antennas - sys.users + 1) as f64,
            };
            json!({
                "samples": MOMENT_SAMPLES,
                "mean": mean,
                "variance": variance,
                "expected_mean": c * dof / m,
                "expected_variance": c * c * dof / (m * m),
            })
        }
    };
    Ok(Artifact::Json(json!({
        "effective_gain": summaries,
        "per_antenna_gain": per_antenna,
    })))
}

fn power_map(cfg: &RunConfig, trace: Option<&TraceFile>) -> anyhow::Result<Artifact> {
    let sys = cfg.system_config();
    let dist = distribution(cfg, trace, &sys)?;
    let mut rows = Vec::new();
    for r in 1..=sys.buffer_size {
        for &eps in &cfg.solver.eps_grid {
            let p = match required_power(r, eps, &sys, &dist) {
                Ok(p) => Some(p),
                Err(Error::Infeasible { .. }) => None,
                Err(e) => return Err(e.into()),
            };
            rows.push(vec![json!(r), json!(eps), json!(p)]);
        }
    }
    Ok(Artifact::Table {
        header: vec!["rate", "eps", "power"],
        rows,
    })
}

fn chosen_policy(cfg: &RunConfig, sys: &SystemConfig, dist: &GainDistribution) -> anyhow::Result<Policy> {
    Ok(match cfg.simulation.policy {
        PolicyChoice::Lyrrc => lyrrc_policy(sys, dist)?,
        PolicyChoice::Mdp => solve(sys, &LinkModel::new(sys, dist), &cfg.solver.eps_grid, &cfg.solver.options())?.policy(),
        PolicyChoice::RuleOfDouble => Policy::rule_of_double(
            cfg.simulation.eps.expect("validated"),
            sys.arrival_rate,
            sys.buffer_size,
        )?,
    })
}

fn simulate_cmd(cfg: &RunConfig, trace: Option<&TraceFile>) -> anyhow::Result<Artifact> {
    let sys = cfg.system_config();
    let dist = distribution(cfg, trace, &sys)?;
    let policy = chosen_policy(cfg, &sys, &dist)?;
    let link = LinkModel::new(&sys, &dist);
    let report = simulate(&policy, &sys, &link, &cfg.simulation_options())?;
    let exact = steady_state_eval(&policy, &sys, &link)?;
    Ok(Artifact::Json(json!({
        "policy": json(&policy)?,
        "simulation": json(&report)?,
        "exact": {
            "latency_frames": exact.latency_frames,
            "latency_seconds": sys.frames_to_seconds(exact.latency_frames),
            "avg_power": exact.avg_power,
            "avg_queue": exact.avg_queue,
            "drop_rate": exact.drop_rate,
        },
    })))
}

fn solve_cmd(cfg: &RunConfig, trace: Option<&TraceFile>) -> anyhow::Result<Artifact> {
    let sys = cfg.system_config();
    let dist = distribution(cfg, trace, &sys)?;
    let sol = solve(&sys, &LinkModel::new(&sys, &dist), &cfg.solver.eps_grid, &cfg.solver.options())?;
    let best = sol.best();
    let latency = best.latency_frames.expect("chosen record is solved");
    Ok(Artifact::Json(json!({
        "eps": best.eps,
        "rate_map": best.rate_map,
        "latency_frames": latency,
        "latency_ms": sys.frames_to_seconds(latency) * 1e3,
        "avg_power": best.avg_power,
        "records": json(&sol.records)?,
    })))
}

fn lyrrc_cmd(cfg: &RunConfig, trace: Option<&TraceFile>) -> anyhow::Result<Artifact> {
    let sys = cfg.system_config();
    let dist = distribution(cfg, trace, &sys)?;
    Ok(Artifact::Json(json(&analyze(&sys, &dist)?)?))
}

fn curve(cfg: &RunConfig, trace: Option<&TraceFile>) -> anyhow::Result<Artifact> {
    if trace.is_some() {
        bail!("configuration error at /channel/source: curve sweeps the array size and needs a synthetic channel");
    }
    let rows = cfg
        .sweep
        .antennas()
        .into_par_iter()
        .map(|m| -> anyhow::Result<Vec<Value>> {
            let mut sys = SystemConfig {
                antennas: m,
                ..cfg.system_config()
            };
            if let Some(rho) = cfg.sweep.utilization {
                sys.packet_bits = sys.packet_bits_for_utilization(rho);
            }
            let row = |status: &str, rho: Option<f64>, eps_o: Option<f64>, d: Option<f64>, lb: Option<f64>| {
                vec![json!(m), json!(sys.packet_bits), json!(rho), json!(eps_o), json!(d), json!(lb), json!(status)]
            };
            if let Err(e) = sys.validate() {
                return Ok(row(&e.to_string(), None, None, None, None));
            }
            let rho = utilization(&sys)?;
            let dist = distribution(cfg, None, &sys)?;
            let op = match epsilon_o(&sys, &dist) {
                Ok(op) => op,
                Err(e @ Error::UtilizationTooHigh { .. }) => return Ok(row(&e.to_string(), Some(rho), None, None, None)),
                Err(e) => return Err(e.into()),
            };
            let status = if op.eps_o > sys.eps_max {
                "reliability_infeasible"
            } else if op.resolution_limited {
                "resolution_limited"
            } else {
                "ok"
            };
            Ok(row(
                status,
                Some(rho),
                Some(op.eps_o),
                lyrrc_latency(op.eps_deployed).ok(),
                latency_lower_bound(&sys, &dist).ok(),
            ))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(Artifact::Table {
        header: vec!["antennas", "packet_bits", "rho", "eps_o", "d_lyrrc", "d_lower", "status"],
        rows,
    })
}

fn multiuser_cmd(cfg: &RunConfig, trace: Option<&TraceFile>, mode: SolveMode) -> anyhow::Result<Artifact> {
    let mu = cfg.multiuser();
    let cfgs = decouple(&mu).map_err(core_to_config_error)?;
    let dists = match trace {
        Some(t) => {
            let d = trace_distributions(cfg, t, &cfgs[0])?;
            if d.len() != cfgs.len() {
                bail!(
                    "configuration error at /users: trace has {} users, configuration has {}",
                    d.len(),
                    cfgs.len()
                );
            }
            d
        }
        None => cfgs
            .par_iter()
            .map(|c| distribution(cfg, None, c))
            .collect::<anyhow::Result<Vec<_>>>()?,
    };
    let sol = solve_all(&mu, &dists, mode, &cfg.solver.eps_grid, &cfg.solver.options())?;
    let frame = mu.shared.frame_duration_s;
    let per_user: Vec<Value> = sol
        .users
        .iter()
        .map(|u| {
            let d = u.latency_frames();
            json!({ "latency_frames": d, "latency_ms": d * frame * 1e3 })
        })
        .collect();
    Ok(Artifact::Json(json!({
        "weighted_latency_frames": sol.weighted_latency,
        "weighted_latency_ms": sol.weighted_latency * frame * 1e3,
        "per_user": per_user,
        "users": json(&sol.users)?,
    })))
}
