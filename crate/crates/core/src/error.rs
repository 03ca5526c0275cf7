use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("service rate undefined for state {state} at allocation {allocation}")]
    UndefinedService { state: usize, allocation: String },

    #[error("cost undefined for state {state} at allocation {allocation}")]
    UndefinedCost { state: usize, allocation: String },

    #[error("reward mean {mean} for task {task} exceeds r_max = {r_max}")]
    RewardOutOfRange { task: usize, mean: f64, r_max: f64 },

    #[error("underflow: resource {resource} asked for {requested} but holds {available}")]
    Underflow {
        resource: usize,
        requested: f64,
        available: f64,
    },

    #[error("no feasible allocation in state {state}")]
    EmptyFeasibleSet { state: usize },

    #[error("state {state} has zero probability; threshold sampling would never terminate")]
    UnreachableState { state: usize },

    #[error("offline problem infeasible (constraint violation {violation:e})")]
    Infeasible { violation: f64 },

    #[error("invariant violated at slot {slot}: {detail}")]
    Invariant { slot: u64, detail: String },

    #[error("invalid policy specification: {0}")]
    Policy(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
