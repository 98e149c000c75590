//! Run configuration: the JSON document, `--set` overrides, and the mapping
//! onto core types. Powers are given in dBm here and converted once.

use std::fmt;
use std::path::{Path, PathBuf};

use mmlat_core::channel::GainSampler;
use mmlat_core::config::{dbm_to_linear, URLLC_EPS_MAX};
use mmlat_core::mdp::{default_eps_grid, SolverOptions};
use mmlat_core::multiuser::{MultiuserConfig, UserSpec};
use mmlat_core::queue::{Arrivals, SimOptions};
use mmlat_core::rng::{derive_seed, Stream};
use mmlat_core::{ChannelModel, LinkMode, RateUnit, SystemConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// A configuration problem located by JSON pointer.
#[derive(Debug)]
pub struct ConfigError {
    pub pointer: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error at {}: {}", self.pointer, self.message)
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    fn new(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            pointer: pointer.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; channel, simulation and oracle streams derive from it.
    pub seed: u64,
    pub system: SystemSection,
    /// Per-user overrides for the multiuser commands. Empty means
    /// `system.users` identical users.
    pub users: Vec<UserSection>,
    pub channel: ChannelSection,
    pub solver: SolverSection,
    pub simulation: SimulationSection,
    pub sweep: SweepSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            system: SystemSection::default(),
            users: Vec::new(),
            channel: ChannelSection::default(),
            solver: SolverSection::default(),
            simulation: SimulationSection::default(),
            sweep: SweepSection::default(),
            output: OutputSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub antennas: usize,
    pub subcarriers: usize,
    pub users: usize,
    pub pilots: u32,
    pub pilot_power_dbm: f64,
    pub large_scale_gain_db: f64,
    pub power_budget_dbm: f64,
    pub arrival_rate: u32,
    pub packet_bits: f64,
    pub buffer_size: u32,
    pub drop_penalty_s: f64,
    pub frame_duration_s: f64,
    pub eps_max: f64,
    /// `null` for no inter-cell interference.
    pub interference_power_dbm: Option<f64>,
    pub mode: LinkMode,
    pub rate_unit: RateUnit,
    pub fading: ChannelModel,
}

impl Default for SystemSection {
    fn default() -> Self {
        SystemSection {
            antennas: 64,
            subcarriers: 52,
            users: 4,
            pilots: 4,
            pilot_power_dbm: 20.0,
            large_scale_gain_db: -10.0,
            power_budget_dbm: 20.0,
            arrival_rate: 5,
            packet_bits: 52.0,
            buffer_size: 10,
            drop_penalty_s: 0.5,
            frame_duration_s: 0.25e-3,
            eps_max: URLLC_EPS_MAX,
            interference_power_dbm: Some(0.0),
            mode: LinkMode::Multiuser,
            rate_unit: RateUnit::Bits,
            fading: ChannelModel::Rayleigh,
        }
    }
}

impl SystemSection {
    pub fn to_config(&self) -> SystemConfig {
        SystemConfig {
            antennas: self.antennas,
            subcarriers: self.subcarriers,
            users: self.users,
            pilots: self.pilots,
            pilot_power: dbm_to_linear(self.pilot_power_dbm),
            large_scale_gain: dbm_to_linear(self.large_scale_gain_db),
            power_budget: dbm_to_linear(self.power_budget_dbm),
            arrival_rate: self.arrival_rate,
            packet_bits: self.packet_bits,
            buffer_size: self.buffer_size,
            drop_penalty_s: self.drop_penalty_s,
            frame_duration_s: self.frame_duration_s,
            eps_max: self.eps_max,
            interference_power: self.interference_power_dbm.map_or(0.0, dbm_to_linear),
            mode: self.mode,
            rate_unit: self.rate_unit,
            channel: self.fading,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSection {
    pub large_scale_gain_db: Option<f64>,
    pub power_budget_dbm: Option<f64>,
    pub arrival_rate: Option<u32>,
    pub packet_bits: Option<f64>,
    pub eps_max: Option<f64>,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    Analytic,
    Matrix,
}

impl From<Sampler> for GainSampler {
    fn from(s: Sampler) -> Self {
        match s {
            Sampler::Analytic => GainSampler::Analytic,
            Sampler::Matrix => GainSampler::Matrix,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ChannelSection {
    Synthetic {
        #[serde(default = "default_samples")]
        samples: usize,
        #[serde(default = "default_sampler")]
        sampler: Sampler,
    },
    Trace {
        path: PathBuf,
        /// Re-estimate the trace channels with the configured pilots.
        #[serde(default)]
        reestimate: bool,
        /// User whose distribution the single-user commands read.
        #[serde(default)]
        user: usize,
    },
}

fn default_samples() -> usize {
    mmlat_core::channel::DEFAULT_SAMPLES
}

fn default_sampler() -> Sampler {
    Sampler::Analytic
}

impl Default for ChannelSection {
    fn default() -> Self {
        ChannelSection::Synthetic {
            samples: default_samples(),
            sampler: default_sampler(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub eps_grid: Vec<f64>,
    pub alpha: f64,
    pub tol: f64,
    pub delta: f64,
    pub z: f64,
    pub max_iterations: usize,
    pub beta_floor: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let o = SolverOptions::default();
        SolverSection {
            eps_grid: default_eps_grid(),
            alpha: o.alpha,
            tol: o.tol,
            delta: o.delta,
            z: o.z,
            max_iterations: o.max_iterations,
            beta_floor: o.beta_floor,
        }
    }
}

impl SolverSection {
    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            alpha: self.alpha,
            tol: self.tol,
            delta: self.delta,
            z: self.z,
            max_iterations: self.max_iterations,
            beta_floor: self.beta_floor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyChoice {
    /// Rule of double at the operating error rate.
    Lyrrc,
    /// The MDP solution.
    Mdp,
    /// Rule of double at `simulation.eps`.
    RuleOfDouble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub horizon: u64,
    pub warmup: u64,
    /// Overrides the seed derived from the master seed.
    pub seed: Option<u64>,
    pub batches: usize,
    pub policy: PolicyChoice,
    pub eps: Option<f64>,
    /// `arrival_pmf[a]` is the probability of `a` arrivals per frame.
    pub arrival_pmf: Option<Vec<f64>>,
}

impl Default for SimulationSection {
    fn default() -> Self {
        let o = SimOptions::default();
        SimulationSection {
            horizon: o.horizon,
            warmup: o.warmup,
            seed: None,
            batches: o.batches,
            policy: PolicyChoice::Lyrrc,
            eps: None,
            arrival_pmf: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub antennas_from: usize,
    pub antennas_to: usize,
    pub antennas_step: usize,
    /// Hold the utilization factor fixed by resizing packets at each `M`.
    /// `null` keeps `system.packet_bits`.
    pub utilization: Option<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            antennas_from: 8,
            antennas_to: 64,
            antennas_step: 4,
            utilization: Some(0.8),
        }
    }
}

impl SweepSection {
    pub fn antennas(&self) -> Vec<usize> {
        (self.antennas_from..=self.antennas_to)
            .step_by(self.antennas_step.max(1))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// `null` picks the command's natural format.
    pub format: Option<Format>,
    /// `null` writes to standard output.
    pub path: Option<PathBuf>,
}

/// Value for a `--set` right-hand side: JSON if it parses, a string otherwise.
fn override_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Applies `a.b.c=value` onto `doc`, creating objects along the way.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::new("", format!("override `{assignment}` is not key=value")))?;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::new("", format!("override key `{key}` has an empty segment")));
    }
    let mut node = doc;
    for (i, part) in parts.iter().enumerate() {
        let pointer = format!("/{}", parts[..=i].join("/"));
        let obj = match node {
            Value::Object(map) => map,
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().unwrap()
            }
            _ => return Err(ConfigError::new(pointer, "cannot set a field inside a non-object value")),
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), override_value(raw));
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("split always yields one segment")
}

fn pointer_from_path(path: &serde_path_to_error::Path) -> String {
    let s = path.to_string();
    if s == "." {
        String::new()
    } else {
        format!("/{}", s.replace(['.', '['], "/").replace(']', ""))
    }
}

/// Reads the config file (if any), applies overrides and deserializes.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str::<Value>(&text)
                .map_err(|e| ConfigError::new("", format!("{} is not valid JSON: {e}", p.display())))?
        }
        None => Value::Object(Default::default()),
    };
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    // A channel section without a source is synthetic.
    if let Some(Value::Object(channel)) = doc.get_mut("channel") {
        channel.entry("source").or_insert_with(|| Value::from("synthetic"));
    }
    let cfg: RunConfig = serde_path_to_error::deserialize(doc)
        .map_err(|e| ConfigError::new(pointer_from_path(e.path()), e.inner().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// JSON pointer of a field named by a core configuration error.
pub fn pointer_for_core_field(field: &str) -> String {
    let system = |name: &str| format!("/system/{name}");
    match field {
        "pilot_power" => system("pilot_power_dbm"),
        "large_scale_gain" => system("large_scale_gain_db"),
        "power_budget" => system("power_budget_dbm"),
        "interference_power" => system("interference_power_dbm"),
        "channel.kappa" => system("fading/kappa"),
        f if f.starts_with("channel.") || f.starts_with("solver.") || f.starts_with("simulation.") || f.starts_with("users.") => {
            format!("/{}", f.replace('.', "/"))
        }
        f => system(f),
    }
}

impl RunConfig {
    fn validate(&self) -> Result<(), ConfigError> {
        self.system_config().validate().map_err(core_to_config_error)?;
        if self.solver.eps_grid.is_empty() {
            return Err(ConfigError::new("/solver/eps_grid", "must not be empty"));
        }
        if let Some(i) = self.solver.eps_grid.iter().position(|e| !(*e > 0.0 && *e < 0.5)) {
            return Err(ConfigError::new(format!("/solver/eps_grid/{i}"), "must lie in (0, 0.5)"));
        }
        if self.sweep.antennas_step == 0 {
            return Err(ConfigError::new("/sweep/antennas_step", "must be at least 1"));
        }
        if self.sweep.antennas_from > self.sweep.antennas_to {
            return Err(ConfigError::new("/sweep/antennas_from", "must not exceed antennas_to"));
        }
        if let Some(rho) = self.sweep.utilization {
            if !(rho > 0.0 && rho < 1.0) {
                return Err(ConfigError::new("/sweep/utilization", "must lie in (0, 1)"));
            }
        }
        if self.simulation.policy == PolicyChoice::RuleOfDouble && self.simulation.eps.is_none() {
            return Err(ConfigError::new("/simulation/eps", "rule_of_double needs a target error rate"));
        }
        if let ChannelSection::Synthetic { samples, .. } = self.channel {
            if samples < mmlat_core::channel::MIN_SAMPLES {
                return Err(ConfigError::new(
                    "/channel/samples",
                    format!("need at least {} samples", mmlat_core::channel::MIN_SAMPLES),
                ));
            }
        }
        Ok(())
    }

    pub fn system_config(&self) -> SystemConfig {
        self.system.to_config()
    }

    pub fn channel_seed(&self) -> u64 {
        derive_seed(self.seed, Stream::Channel)
    }

    pub fn simulation_options(&self) -> SimOptions {
        SimOptions {
            horizon: self.simulation.horizon,
            warmup: self.simulation.warmup,
            seed: self
                .simulation
                .seed
                .unwrap_or_else(|| derive_seed(self.seed, Stream::Simulation)),
            arrivals: match &self.simulation.arrival_pmf {
                Some(pmf) => Arrivals::Tabulated(pmf.clone()),
                None => Arrivals::Constant,
            },
            batches: self.simulation.batches,
        }
    }

    pub fn multiuser(&self) -> MultiuserConfig {
        let shared = self.system_config();
        if self.users.is_empty() {
            return MultiuserConfig::uniform(&shared, shared.users);
        }
        let base = UserSpec::from_config(&shared);
        let users = self
            .users
            .iter()
            .map(|u| UserSpec {
                large_scale_gain: u.large_scale_gain_db.map_or(base.large_scale_gain, dbm_to_linear),
                power_budget: u.power_budget_dbm.map_or(base.power_budget, dbm_to_linear),
                arrival_rate: u.arrival_rate.unwrap_or(base.arrival_rate),
                packet_bits: u.packet_bits.unwrap_or(base.packet_bits),
                eps_max: u.eps_max.unwrap_or(base.eps_max),
                weight: u.weight,
            })
            .collect();
        MultiuserConfig { shared, users }
    }
}

pub fn core_to_config_error(e: mmlat_core::Error) -> ConfigError {
    match e {
        mmlat_core::Error::Config { field, reason } => ConfigError::new(pointer_for_core_field(field), reason),
        other => ConfigError::new("", other.to_string()),
    }
}
