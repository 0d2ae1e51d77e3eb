use dmd_core::equilibrium::EquilibriumError;
use dmd_core::instance::InstanceError;
use dmd_core::mechanism::{MechanismError, TopologyError};
use dmd_core::oracle::OracleError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Parse(#[from] InstanceError),
    #[error("invalid message graph: {0}")]
    Graph(String),
    #[error("{message}")]
    Assumption {
        message: String,
        suggest_extended: bool,
    },
    #[error("solver failed: {0}")]
    Solver(String),
    #[error("certificate failed: {}", .0.join(", "))]
    Certificate(Vec<String>),
    #[error("dynamics failed: {0}")]
    Dynamics(String),
    #[error("mechanism error: {0}")]
    Mechanism(#[from] MechanismError),
}

impl CliError {
    /// Process exit status.
    pub fn code(&self) -> u8 {
        match self {
            CliError::Io { .. } | CliError::Usage(_) | CliError::Mechanism(_) => 1,
            CliError::Parse(_) | CliError::Graph(_) => 2,
            CliError::Assumption { .. } => 3,
            CliError::Solver(_) => 4,
            CliError::Certificate(_) => 5,
            CliError::Dynamics(_) => 6,
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }
}

impl From<TopologyError> for CliError {
    fn from(e: TopologyError) -> Self {
        match e {
            TopologyError::Instance(e) => CliError::Parse(e),
            TopologyError::Assumption {
                messages,
                suggest_extended,
            } => CliError::Assumption {
                message: format!("assumption violated: {}", messages.join("; ")),
                suggest_extended,
            },
            TopologyError::Graph(g) => CliError::Graph(g.to_string()),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        CliError::Solver(e.to_string())
    }
}

impl From<EquilibriumError> for CliError {
    fn from(e: EquilibriumError) -> Self {
        match e {
            EquilibriumError::Dynamics { .. } => CliError::Dynamics(e.to_string()),
            EquilibriumError::Mechanism(m) => CliError::Mechanism(m),
            EquilibriumError::Uncertified { .. } => CliError::Solver(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}
