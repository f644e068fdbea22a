use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    #[error("utility has no stabilization levels (a_lower, a_upper)")]
    StabilizationMissing,

    #[error("operation is only defined for a single security (J = 1), got J = {0}")]
    MultiAssetUnsupported(usize),

    #[error("search budget exceeded: {needed} evaluations requested, cap is {cap}")]
    BudgetExceeded { needed: usize, cap: usize },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid utility: {0}")]
    InvalidUtility(String),

    #[error("invalid scenario tree: {0}")]
    InvalidTree(String),

    #[error("model is not binomial: {0}")]
    NotBinomial(String),

    #[error("claim is not replicable: target ratio leaves the attainable interval at node {node}")]
    Infeasible { node: String },

    #[error("exponent overflow at q = {q}")]
    Overflow { q: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
