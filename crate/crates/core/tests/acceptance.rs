//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use mmlat_core::channel::{build_gain_distribution, sample_per_antenna_gains, GainSampler};
use mmlat_core::config::{dbm_to_linear, URLLC_EPS_MAX};
use mmlat_core::lyrrc::{self, epsilon_o, gap_at, latency_lower_bound, lyrrc_latency, lyrrc_policy};
use mmlat_core::mdp::{default_eps_grid, solve, RecordStatus, SolverOptions};
use mmlat_core::multiuser::{inverse_wishart_diagonal, solve_all, user_distributions, MultiuserConfig, SolveMode};
use mmlat_core::phy::{block_error_rate, required_power, LinkModel};
use mmlat_core::queue::{simulate, steady_state_eval, ConstantPower, SimOptions};
use mmlat_core::rng::{derive_seed, Stream};
use mmlat_core::{Error, GainDistribution, LinkMode, Policy, SystemConfig};

const MASTER_SEED: u64 = 2024;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn seed(stream: Stream) -> u64 {
    derive_seed(MASTER_SEED, stream)
}

fn mu_reference(antennas: usize) -> SystemConfig {
    SystemConfig {
        antennas,
        ..SystemConfig::default()
    }
}

fn rule_of_double_latency() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for eps in [0.05, 0.1, 0.25] {
        let cfg = SystemConfig {
            arrival_rate: 5,
            buffer_size: 150,
            ..SystemConfig::default()
        };
        let policy = Policy::rule_of_double(eps, 5, 150).map_err(|e| e.to_string())?;
        let opts = SimOptions {
            horizon: 1_000_000,
            seed: seed(Stream::Simulation),
            ..SimOptions::default()
        };
        let t = Instant::now();
        let rep = simulate(&policy, &cfg, &ConstantPower(1.0), &opts).map_err(|e| e.to_string())?;
        let secs = t.elapsed().as_secs_f64();
        let expect = lyrrc_latency(eps).unwrap();
        let rel = (rep.latency_frames - expect).abs() / expect;
        ok &= rel <= 0.01 && secs < 10.0;
        lines.push(format!(
            "eps={eps}: sim {:.5} vs {:.5} (rel {:.2e}, {:.2}s)",
            rep.latency_frames, expect, rel, secs
        ));
    }
    check(ok, lines.join("; "))
}

fn geometric_steady_state() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for eps in [0.05, 0.1, 0.25, 0.4] {
        let lambda = 5;
        let levels = 30;
        let cfg = SystemConfig {
            arrival_rate: lambda,
            buffer_size: lambda * levels,
            ..SystemConfig::default()
        };
        let policy = Policy::rule_of_double(eps, lambda, cfg.buffer_size).unwrap();
        let chain = steady_state_eval(&policy, &cfg, &ConstantPower(1.0)).map_err(|e| e.to_string())?;
        let law = lyrrc::steady_state_distribution(eps, levels as usize).unwrap();
        let mut tv = 0.0;
        for (q, &p) in chain.stationary.iter().enumerate() {
            let target = if q > 0 && q % lambda as usize == 0 {
                law.probs[q / lambda as usize - 1]
            } else {
                0.0
            };
            tv += (p - target).abs();
        }
        let tv = 0.5 * (tv + law.truncation_mass);
        let bound = law.truncation_mass + 1e-9;
        ok &= tv <= bound;
        lines.push(format!("eps={eps}: TV {tv:.2e} <= {bound:.2e}"));
    }
    check(ok, lines.join("; "))
}

/// `(power, latency)` of every stationary rate table at one target error rate.
fn enumerate_policies(cfg: &SystemConfig, link: &LinkModel<'_>, eps: f64) -> Vec<(f64, f64, Vec<u32>)> {
    let lambda = cfg.arrival_rate;
    let b = cfg.buffer_size;
    let mut out = Vec::new();
    let mut rates: Vec<u32> = (0..=b).map(|q| q.min(lambda - 1)).collect();
    for q in lambda..=b {
        rates[q as usize] = 0;
    }
    loop {
        let policy = Policy::from_table(eps, rates.clone()).unwrap();
        if let Ok(ev) = steady_state_eval(&policy, cfg, link) {
            out.push((ev.avg_power, ev.latency_frames, rates.clone()));
        }
        // Odometer over r(q) in 0..=q for q = lambda..=B.
        let mut q = lambda;
        loop {
            if q > b {
                return out;
            }
            let i = q as usize;
            if rates[i] < q {
                rates[i] += 1;
                break;
            }
            rates[i] = 0;
            q += 1;
        }
    }
}

/// Vertices of the lower-left convex hull of `(power, latency)` points.
/// Points on a hull edge are not vertices: no single multiplier selects
/// them, so a deterministic Lagrangian policy cannot land on them.
fn hull_vertices(points: &[(f64, f64, Vec<u32>)]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p.0, p.1)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut frontier: Vec<(f64, f64)> = Vec::new();
    for p in pts {
        if frontier.last().is_none_or(|l| p.1 < l.1) {
            frontier.push(p);
        }
    }
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for p in frontier {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            let scale = ((b.0 - a.0).abs() + (b.1 - a.1).abs()) * ((p.0 - a.0).abs() + (p.1 - a.1).abs());
            if cross <= 1e-9 * scale {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}

fn mdp_matches_enumeration() -> Outcome {
    let t = Instant::now();
    let dist = GainDistribution::from_samples(
        [vec![0.5], vec![1.0; 3], vec![2.0; 6]].concat(),
    )
    .unwrap();
    let opts = SolverOptions::default();
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for lambda in [1u32, 2] {
        for b in [lambda, 2 * lambda, 3 * lambda] {
            let base = SystemConfig {
                antennas: 2,
                users: 1,
                subcarriers: 4,
                packet_bits: 4.0,
                pilots: 1_000_000,
                interference_power: 0.0,
                large_scale_gain: 1.0,
                arrival_rate: lambda,
                buffer_size: b,
                drop_penalty_s: 10.0 * 0.25e-3,
                eps_max: 1.0,
                mode: LinkMode::Multiuser,
                ..SystemConfig::default()
            };
            for eps in [0.1, 0.3] {
                let link = LinkModel::new(&base, &dist);
                let all = enumerate_policies(&base, &link, eps);
                // A budget of zero is not a valid configuration; the smallest
                // positive one admits the same policies.
                let mut budgets: Vec<f64> = hull_vertices(&all).iter().map(|v| v.0.max(f64::MIN_POSITIVE)).collect();
                budgets.push(1e9);
                for budget in budgets {
                    let cfg = SystemConfig {
                        power_budget: budget,
                        ..base.clone()
                    };
                    let link = LinkModel::new(&cfg, &dist);
                    let exhaustive = all
                        .iter()
                        .filter(|p| p.0 <= budget)
                        .map(|p| p.1)
                        .fold(f64::INFINITY, f64::min);
                    let sol = solve(&cfg, &link, &[eps], &opts).map_err(|e| e.to_string())?;
                    let d = sol.best().latency_frames.unwrap();
                    worst = worst.max((d - exhaustive).abs());
                    cases += 1;
                }
            }
            // Unconstrained joint choice over both error rates.
            let link = LinkModel::new(&base, &dist);
            let exhaustive = [0.1, 0.3]
                .iter()
                .flat_map(|&e| enumerate_policies(&base, &link, e))
                .map(|p| p.1)
                .fold(f64::INFINITY, f64::min);
            let cfg = SystemConfig {
                power_budget: 1e9,
                ..base.clone()
            };
            let sol = solve(&cfg, &LinkModel::new(&cfg, &dist), &[0.1, 0.3], &opts).map_err(|e| e.to_string())?;
            worst = worst.max((sol.best().latency_frames.unwrap() - exhaustive).abs());
            cases += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    check(
        worst <= 1e-9 && secs < 60.0,
        format!("{cases} budgets, worst latency gap {worst:.2e}, {secs:.1}s"),
    )
}

fn latency_u_shape() -> Outcome {
    let mut cfg = SystemConfig {
        antennas: 32,
        users: 1,
        pilots: 8,
        mode: LinkMode::SingleUser,
        eps_max: 1.0,
        ..SystemConfig::default()
    };
    let dist = build_gain_distribution(&cfg, 200_000, seed(Stream::Channel)).map_err(|e| e.to_string())?;
    cfg.power_budget = 1.02 * required_power(cfg.arrival_rate, 0.01, &cfg, &dist).map_err(|e| e.to_string())?;
    let sol = solve(&cfg, &LinkModel::new(&cfg, &dist), &default_eps_grid(), &SolverOptions::default())
        .map_err(|e| e.to_string())?;
    let curve = sol.curve();
    let (e_min, d_min) = curve.iter().copied().fold((f64::NAN, f64::INFINITY), |a, p| if p.1 < a.1 { p } else { a });
    let first = curve.first().copied().unwrap();
    let at_10 = curve.iter().copied().find(|p| (p.0 - 0.1).abs() < 1e-12).ok_or("10% not solved")?;
    let interior = e_min > first.0 && e_min < at_10.0;
    check(
        interior && d_min < first.1 && d_min < at_10.1,
        format!(
            "P={:.3}: min D={d_min:.3} at eps={e_min}; D({})={:.3}; D(0.1)={:.3}",
            cfg.power_budget, first.0, first.1, at_10.1
        ),
    )
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

fn channel_moments() -> Outcome {
    let n = 1_000_000;
    let mut ok = true;
    let mut lines = Vec::new();
    let mut scaled = Vec::new();
    for m in [8, 32, 128] {
        let cfg = SystemConfig {
            antennas: m,
            users: 1,
            pilots: 4,
            pilot_power: 1.0,
            large_scale_gain: 1.0,
            mode: LinkMode::SingleUser,
            ..SystemConfig::default()
        };
        let c = cfg.estimate_variance();
        let k = sample_per_antenna_gains(&cfg, n, seed(Stream::Oracle), GainSampler::Matrix).map_err(|e| e.to_string())?;
        let (mean, var) = mean_var(&k);
        let mean_ratio = mean / c;
        let var_ratio = var * m as f64 / (c * c);
        ok &= (0.9..=1.1).contains(&mean_ratio) && (0.9..=1.1).contains(&var_ratio);
        scaled.push(var * m as f64);
        lines.push(format!("M={m}: mean/{c:.1}={mean_ratio:.4}, M var/c^2={var_ratio:.4}"));
    }
    let lo = scaled.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scaled.iter().copied().fold(0.0, f64::max);
    ok &= hi / lo <= 1.1;
    lines.push(format!("spread of M var {:.4}", hi / lo));
    check(ok, lines.join("; "))
}

fn wishart_moments() -> Outcome {
    let n = 200_000;
    let x = inverse_wishart_diagonal(64, 4, n, seed(Stream::Oracle)).map_err(|e| e.to_string())?;
    let (mean, var) = mean_var(&x);
    let target = 64.0 / 60.0;
    let sigma = (var / n as f64).sqrt();
    let mut ok = (mean - target).abs() <= 3.0 * sigma;
    let mut lines = vec![format!("(64,4): mean {mean:.5} vs {target:.5} ({:.2} sigma)", (mean - target).abs() / sigma)];
    let mut scaled = Vec::new();
    for m in [32, 64, 128] {
        let x = inverse_wishart_diagonal(m, 4, 100_000, seed(Stream::Oracle) ^ m as u64).map_err(|e| e.to_string())?;
        scaled.push(mean_var(&x).1 * m as f64);
    }
    let hi = scaled.iter().copied().fold(0.0, f64::max);
    let lo = scaled.iter().copied().fold(f64::INFINITY, f64::min);
    ok &= hi / lo <= 2.0;
    lines.push(format!("M var for M=32,64,128: {:.3?}", scaled));
    check(ok, lines.join("; "))
}

fn lyrrc_power_feasible() -> Outcome {
    let cfg = SystemConfig {
        buffer_size: 150,
        ..mu_reference(64)
    };
    let dist = build_gain_distribution(&cfg, 200_000, seed(Stream::Channel)).map_err(|e| e.to_string())?;
    let analytic = lyrrc::lyrrc_average_power(&cfg, &dist).map_err(|e| e.to_string())?;
    let policy = lyrrc_policy(&cfg, &dist).map_err(|e| e.to_string())?;
    let chain = steady_state_eval(&policy, &cfg, &LinkModel::new(&cfg, &dist)).map_err(|e| e.to_string())?;
    let rel = (analytic - chain.avg_power).abs() / chain.avg_power;
    check(
        analytic <= 1.01 * cfg.power_budget && rel <= 1e-9,
        format!(
            "avg power {analytic:.4} <= {:.4}; exact chain {:.6} (rel {rel:.1e})",
            1.01 * cfg.power_budget,
            chain.avg_power
        ),
    )
}

/// Fixed-load antenna sweep with the budget pinned so that `eps_o = 1.5 %`
/// at the smallest array.
fn fixed_load_sweep() -> Result<Vec<(usize, SystemConfig, GainDistribution)>, String> {
    let rho = 0.8;
    let mut out = Vec::new();
    let mut budget = None;
    // Unit steps where eps_o is still resolvable, coarser steps after.
    for m in (8..=12).chain((16..=64).step_by(8)) {
        let mut cfg = mu_reference(m);
        cfg.packet_bits = cfg.packet_bits_for_utilization(rho);
        let dist = build_gain_distribution(&cfg, 1_000_000, seed(Stream::Channel)).map_err(|e| e.to_string())?;
        let p = *budget.get_or_insert_with(|| {
            let thr = lyrrc::operating_threshold(&cfg).unwrap();
            cfg.power_budget * thr / dist.inverse_cdf(0.015).unwrap()
        });
        cfg.power_budget = p;
        out.push((m, cfg, dist));
    }
    Ok(out)
}

fn gap_law(sweep: &[(usize, SystemConfig, GainDistribution)]) -> Outcome {
    let mut ok = true;
    let mut small = Vec::new();
    let mut worst_exact: f64 = 0.0;
    for (m, cfg, dist) in sweep {
        let eps = epsilon_o(cfg, dist).map_err(|e| e.to_string())?.eps_o;
        let g = gap_at(eps).map_err(|e| e.to_string())?;
        let err = (g.gap - g.gap_closed_form).abs();
        worst_exact = worst_exact.max(err / g.gap_closed_form.max(1e-300));
        ok &= err <= 1e-15 + 1e-12 * g.gap_closed_form;
        if eps > 0.0 && eps <= 0.02 {
            let ratio = g.gap / (eps * eps);
            ok &= (ratio - 1.0).abs() <= 0.05;
            small.push(format!("M={m} eps_o={eps:.2e} ratio={ratio:.4}"));
        }
    }
    ok &= !small.is_empty();
    check(
        ok,
        format!("closed form rel err <= {worst_exact:.1e}; {}", small.join(", ")),
    )
}

fn array_latency_monotone(sweep: &[(usize, SystemConfig, GainDistribution)]) -> Outcome {
    let mut d = Vec::new();
    let mut lb = Vec::new();
    for (_, cfg, dist) in sweep {
        let op = epsilon_o(cfg, dist).map_err(|e| e.to_string())?;
        d.push(lyrrc_latency(op.eps_deployed).map_err(|e| e.to_string())?);
        lb.push(latency_lower_bound(cfg, dist).map_err(|e| e.to_string())?);
    }
    let nonincreasing = |v: &[f64]| v.windows(2).all(|w| w[1] <= w[0]);
    let last = d.len() - 1;
    let gap_first = d[0] - lb[0];
    let gap_last = d[last] - lb[last];
    let ok = nonincreasing(&d)
        && nonincreasing(&lb)
        && d[last] - 1.0 < 1e-3
        && lb[last] - 1.0 < 1e-3
        && gap_last < gap_first
        && gap_last < 1e-5;
    check(
        ok,
        format!(
            "D: {:.6} -> {:.6}; lower bound: {:.6} -> {:.6}; gap {:.2e} -> {:.2e}",
            d[0], d[last], lb[0], lb[last], gap_first, gap_last
        ),
    )
}

fn round_trip_phy() -> Outcome {
    let n = 200_000;
    let mut checked = 0;
    let mut skipped = 0;
    let mut worst_low: f64 = 0.0;
    let mut ok = true;
    for mode in [LinkMode::SingleUser, LinkMode::Multiuser] {
        let cfg = SystemConfig {
            mode,
            users: if mode == LinkMode::SingleUser { 1 } else { 4 },
            ..mu_reference(64)
        };
        let dist = build_gain_distribution(&cfg, n, seed(Stream::Channel)).map_err(|e| e.to_string())?;
        for eps in default_eps_grid() {
            for r in 1..=2 * cfg.arrival_rate {
                let p = match required_power(r, eps, &cfg, &dist) {
                    Ok(p) => p,
                    Err(Error::Infeasible { .. }) => {
                        skipped += 1;
                        continue;
                    }
                    Err(e) => return Err(e.to_string()),
                };
                let e = block_error_rate(r, p, &cfg, &dist).map_err(|e| e.to_string())?;
                let lo = eps - 1.0 / n as f64;
                ok &= e <= eps && e >= lo - 1e-15;
                worst_low = worst_low.max(eps - e);
                checked += 1;
            }
        }
    }
    check(
        ok,
        format!("{checked} (r, eps, mode) points, {skipped} infeasible skipped, max eps - BLER {worst_low:.2e}"),
    )
}

fn urllc_enforced() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;

    let mut cfg = SystemConfig {
        antennas: 32,
        users: 1,
        pilots: 8,
        mode: LinkMode::SingleUser,
        eps_max: URLLC_EPS_MAX,
        ..SystemConfig::default()
    };
    let dist = build_gain_distribution(&cfg, 200_000, seed(Stream::Channel)).map_err(|e| e.to_string())?;
    cfg.power_budget = 1.02 * required_power(cfg.arrival_rate, 0.01, &cfg, &dist).map_err(|e| e.to_string())?;
    let sol = solve(&cfg, &LinkModel::new(&cfg, &dist), &default_eps_grid(), &SolverOptions::default())
        .map_err(|e| e.to_string())?;
    let above_ok = sol
        .records
        .iter()
        .all(|r| r.eps <= URLLC_EPS_MAX || r.status == RecordStatus::ExceedsEpsMax);
    ok &= above_ok && sol.best().eps <= URLLC_EPS_MAX;
    lines.push(format!("MDP chose eps={} and left every eps > 3.16% unsolved: {above_ok}", sol.best().eps));

    let mut rejected = 0;
    let mut probed = 0;
    for (m, tau) in [(8, 1), (8, 2), (16, 1)] {
        let mut cfg = SystemConfig {
            antennas: m,
            pilots: tau,
            pilot_power: dbm_to_linear(0.0),
            ..SystemConfig::default()
        };
        cfg.packet_bits = cfg.packet_bits_for_utilization(0.8);
        let dist = build_gain_distribution(&cfg, 200_000, seed(Stream::Channel)).map_err(|e| e.to_string())?;
        let eps_o = epsilon_o(&cfg, &dist).map_err(|e| e.to_string())?.eps_o;
        if eps_o > URLLC_EPS_MAX {
            probed += 1;
            match lyrrc_policy(&cfg, &dist) {
                Err(Error::ReliabilityInfeasible { .. }) => rejected += 1,
                other => lines.push(format!("M={m} tau={tau}: not rejected: {other:?}")),
            }
            let mu = MultiuserConfig::uniform(&cfg, cfg.users);
            let dists = user_distributions(&mu, 20_000, seed(Stream::Channel)).map_err(|e| e.to_string())?;
            match solve_all(&mu, &dists, SolveMode::Lyrrc, &default_eps_grid(), &SolverOptions::default()) {
                Err(Error::UsersInfeasible { .. }) => {}
                other => {
                    ok = false;
                    lines.push(format!("M={m} tau={tau}: multiuser not rejected: {}", other.is_ok()));
                }
            }
        }
    }
    ok &= probed > 0 && rejected == probed;
    lines.push(format!("{rejected}/{probed} small-array configs with eps_o > 3.16% rejected"));
    check(ok, lines.join("; "))
}

fn main() -> ExitCode {
    let sweep = std::sync::LazyLock::new(fixed_load_sweep);
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("1 rule-of-double latency", Box::new(rule_of_double_latency)),
        ("2 geometric steady state", Box::new(geometric_steady_state)),
        ("3 MDP matches enumeration", Box::new(mdp_matches_enumeration)),
        ("4 U-shaped latency curve", Box::new(latency_u_shape)),
        ("5 per-antenna gain moments", Box::new(channel_moments)),
        ("6 inverse Wishart moments", Box::new(wishart_moments)),
        ("7 LYRRC power feasibility", Box::new(lyrrc_power_feasible)),
        (
            "8 gap law",
            Box::new(|| (*sweep).as_ref().map_err(Clone::clone).and_then(|s| gap_law(s))),
        ),
        (
            "9 array latency monotone",
            Box::new(|| (*sweep).as_ref().map_err(Clone::clone).and_then(|s| array_latency_monotone(s))),
        ),
        ("10 PHY round trip", Box::new(round_trip_phy)),
        ("11 URLLC constraint", Box::new(urllc_enforced)),
    ];
    // `cargo test --test acceptance -- 3 8` runs only the listed criteria.
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (name, f) in &criteria {
        let number = name.split(' ').next().unwrap_or_default();
        if !only.is_empty() && !only.iter().any(|o| o == number) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let outcome = f();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {name} [{secs:.1}s]: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name} [{secs:.1}s]: {detail}");
            }
        }
    }
    println!("{} of {ran} acceptance criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
