use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: &'static str, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    /// The requested rate cannot be reached at this target error rate for any power.
    #[error("rate {rate} packets unreachable at target error rate {eps} for any power")]
    Infeasible { rate: u32, eps: f64 },

    #[error("trace parse error at byte {offset}: {reason}")]
    Trace { offset: u64, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("rate {rate} exceeds queue length {queue}")]
    RateExceedsQueue { queue: u32, rate: u32 },

    #[error("power infeasible in visited state q={queue} (rate {rate}, eps {eps})")]
    InfeasibleState { queue: u32, rate: u32, eps: f64 },

    #[error("policy is not unichain: {classes} closed classes reachable from the empty buffer")]
    NotUnichain { classes: usize },

    #[error("every action is infeasible at q={queue}")]
    AllActionsInfeasible { queue: u32 },

    #[error("value iteration did not converge within {iterations} iterations (last delta {delta:e})")]
    NoConvergence { iterations: usize, delta: f64 },

    #[error("average power {power} exceeds budget {budget} at eps {eps} even with beta = {beta}")]
    PowerInfeasible {
        eps: f64,
        beta: f64,
        power: f64,
        budget: f64,
    },

    #[error("no target error rate in the grid is feasible")]
    NoFeasibleTarget,

    #[error("reliability infeasible: eps_o = {eps_o} exceeds eps_max = {eps_max}")]
    ReliabilityInfeasible { eps_o: f64, eps_max: f64 },

    #[error("latency diverges for eps = {eps} (needs eps < 0.5)")]
    Divergent { eps: f64 },

    #[error("utilization factor rho = {rho} is not below 1")]
    UtilizationTooHigh { rho: f64 },

    #[error("gram matrix is singular or ill-conditioned (condition number {condition:e})")]
    Singular { condition: f64 },

    #[error("users {users:?} are infeasible")]
    UsersInfeasible { users: Vec<usize> },
}

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Config {
            field,
            reason: reason.into(),
        }
    }
}
