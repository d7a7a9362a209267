use std::path::PathBuf;

use crate::taxonomy::VarId;
use crate::wire::WireError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("block {index}: in_dim {in_dim} does not match previous out_dim {prev_out}")]
    DimensionMismatch {
        index: usize,
        in_dim: usize,
        prev_out: usize,
    },

    #[error("invalid block spec at {index}: {reason}")]
    InvalidBlock { index: usize, reason: String },

    #[error("batch shape mismatch: {0}")]
    BatchShape(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("unknown variable id {0}")]
    UnknownVariable(VarId),

    #[error("invalid freeze plan: {0}")]
    InvalidPlan(String),

    #[error("freeze fraction {0} outside [0, 1]")]
    FreezeFraction(f64),

    #[error("shard is empty")]
    EmptyShard,

    #[error("client {client} diverged in round {round} at local step {step}")]
    Diverged {
        client: usize,
        round: u32,
        step: usize,
    },

    #[error("variable {id}: delta has {actual} values, expected {expected}")]
    ShapeMismatch {
        id: VarId,
        expected: usize,
        actual: usize,
    },

    #[error("updates from mixed rounds ({0} and {1})")]
    MixedRounds(u32, u32),

    #[error("duplicate update from client {0}")]
    DuplicateClient(usize),

    #[error("{clients} clients requested but only {available} available")]
    TooManyClients { clients: usize, available: usize },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("{path}:{line}: {reason}")]
    Csv {
        path: PathBuf,
        line: u64,
        reason: String,
    },

    #[error("no freeze fraction satisfies the budgets (memory {memory_budget} B, ctos {ctos_budget} B)")]
    Infeasible {
        memory_budget: u64,
        ctos_budget: u64,
    },

    #[error("config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error(transparent)]
    Wire(#[from] WireError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
