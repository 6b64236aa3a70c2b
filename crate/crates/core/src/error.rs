use thiserror::Error;

/// Errors raised by the solver toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A caller-side precondition was violated (dimension mismatch, grid mismatch, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("integration diverged at step {step}")]
    IntegrationDiverged { step: usize },

    #[error("quadrature tensor of {nodes} nodes exceeds the budget of {limit}")]
    BudgetExceeded { nodes: usize, limit: usize },

    #[error("covariance is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    /// The expected Hamiltonian has no maximizer over the admissible controls at this node.
    #[error("expected Hamiltonian is unbounded above at node {node}")]
    AbnormalStructure { node: usize },

    #[error("unknown scenario `{name}` (known: {})", known.join(", "))]
    UnknownScenario { name: String, known: Vec<String> },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
