use std::path::PathBuf;

use thiserror::Error;

use crate::data::Label;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("unknown label {0}")]
    UnknownLabel(Label),

    #[error("empty domain")]
    EmptyDomain,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("stale tape: {0}")]
    StaleTape(String),

    #[error("invalid action {action}: {reason}")]
    InvalidAction { action: usize, reason: &'static str },

    #[error("no candidate actions left")]
    NoCandidates,

    #[error("state has no parents (step 0)")]
    InitialState,

    #[error("terminal state has no outflow")]
    TerminalState,

    #[error("budget {budget} exceeds pool size {pool}")]
    BudgetTooLarge { budget: usize, pool: usize },

    #[error("non-positive reward {0}")]
    NonPositiveReward(f64),

    #[error("zero-probability class {0} in conditional")]
    ZeroProbabilityClass(Label),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("csv error in {path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("incompatible checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
