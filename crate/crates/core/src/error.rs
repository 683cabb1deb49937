use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("gamma function pole at x = {0}")]
    GammaPole(f64),

    #[error("invalid argument `{name}` = {value}: {reason}")]
    InvalidArgument {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("series did not converge: {what} at argument {argument} after {terms} terms")]
    SeriesNonConvergence {
        what: &'static str,
        argument: f64,
        terms: usize,
    },

    #[error("precision loss evaluating {what} at {argument}: estimated error {estimate:e}")]
    PrecisionLoss {
        what: &'static str,
        argument: f64,
        estimate: f64,
    },

    #[error("matrix exponential overflow at t = {t}")]
    ExponentialOverflow { t: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("trajectories live on different grids")]
    GridMismatch,

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value from {source_name} at node {node} (t = {t})")]
    NonFinite {
        source_name: &'static str,
        node: usize,
        t: f64,
    },

    #[error("initial pair is not ordered: worst violation {violation:e} at node {node}")]
    InitialOrdering { violation: f64, node: usize },

    #[error("iteration diverged: gap grew for {streak} consecutive iterations (last gap {gap:e})")]
    Diverged {
        streak: usize,
        gap: f64,
        report: Box<crate::monotone::IterationReport>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),
}
